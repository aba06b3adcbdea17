#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <unistd.h>

#include "cfsm/data_pipeline.hpp"
#include "cfsm/errors.hpp"
#include "cfsm/image.hpp"
#include "helpers.hpp"

using namespace cfsm;
using testing::TempDir;

namespace {

Image random_image(int h, int w, int c, uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(h, w, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

std::vector<uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("png round trip is exact on the 8-bit grid") {
    TempDir tmp("png");
    for (int c : {1, 3}) {
        auto img = quantize_8bit(random_image(7, 5, c, 3));
        write_png(tmp / "a.png", img);
        auto back = read_png(tmp / "a.png");
        CHECK(back.same_shape(img));
        CHECK(back.data == img.data);
    }
    CHECK_THROWS_AS(read_png(tmp / "missing.png"), IoError);
}

TEST_CASE("toy dataset counts, splits and determinism") {
    TempDir tmp("toy");
    auto m = generate_toy_dataset(10, 4, 32, 7, tmp / "a");
    CHECK(m.size() == 40);
    CHECK(m.num_identities == 10);
    CHECK(count_identities(m.records) == 10);
    CHECK(m.subset(Split::test_gallery).size() == 10);
    CHECK(m.subset(Split::test_probe).size() == 10);
    CHECK(m.subset(Split::train).size() == 20);
    CHECK_FALSE(m.unlabeled());

    auto again = generate_toy_dataset(10, 4, 32, 7, tmp / "b");
    for (size_t i = 0; i < m.size(); ++i) {
        CHECK(m.records[i].identity_id == again.records[i].identity_id);
        CHECK(m.records[i].image_path.filename() == again.records[i].image_path.filename());
        CHECK(file_bytes(m.records[i].image_path) == file_bytes(again.records[i].image_path));
    }

    auto back = read_manifest(tmp / "a" / "manifest.jsonl");
    CHECK(back.size() == m.size());
    CHECK(back.num_identities == 10);
    CHECK(back.image_size == 32);
    CHECK(back.seed == 7);
    CHECK(back.records[5].image_path == m.records[5].image_path);
    CHECK(back.records[5].split == m.records[5].split);
}

TEST_CASE("toy dataset rejects bad arguments") {
    TempDir tmp("toybad");
    CHECK_THROWS_AS(generate_toy_dataset(1, 4, 32, 0, tmp.path), ArgumentError);
    CHECK_THROWS_AS(generate_toy_dataset(4, 1, 32, 0, tmp.path), ArgumentError);
    CHECK_THROWS_AS(generate_toy_dataset(4, 4, 48, 0, tmp.path), ArgumentError);
}

TEST_CASE("different seeds render different datasets") {
    double diff = 0.0;
    for (int id = 0; id < 2; ++id) {
        for (int s = 0; s < 2; ++s) diff += mean_abs_difference(render_glyph(id, s, 32, 1), render_glyph(id, s, 32, 2));
    }
    CHECK(diff > 0.0);
}

TEST_CASE("glyph identities are separable from nuisance jitter") {
    // same identity across samples should be closer than different identities on average
    double within = 0.0, across = 0.0;
    int nw = 0, na = 0;
    for (int id = 0; id < 6; ++id) {
        for (int s = 1; s < 4; ++s) {
            within += mean_abs_difference(render_glyph(id, 0, 32, 5), render_glyph(id, s, 32, 5));
            ++nw;
            across += mean_abs_difference(render_glyph(id, 0, 32, 5), render_glyph((id + s) % 6, s, 32, 5));
            ++na;
        }
    }
    CHECK(within / nw < across / na);
}

TEST_CASE("degradation with all probabilities zero is the identity") {
    DegradationSpec spec;
    spec.blur_sigma_range = {0.5, 2.0};
    spec.downsample_factors = {2, 4};
    spec.noise_std_range = {0.05, 0.1};
    spec.motion_blur_lengths = {3, 5};
    auto img = random_image(16, 16, 3, 1);
    Rng rng(4);
    CHECK(apply_degradation(img, spec, rng).data == img.data);
}

TEST_CASE("noise-only degradation has the requested standard deviation") {
    DegradationSpec spec;
    spec.noise_std_range = {0.1, 0.1};
    spec.apply.noise = 1.0;
    Image img(64, 64, 1, 0.5f);
    Rng rng(11);
    auto out = apply_degradation(img, spec, rng);
    double mean = 0.0, sq = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double d = out.data[i] - img.data[i];
        mean += d;
        sq += d * d;
    }
    mean /= out.data.size();
    const double sd = std::sqrt(sq / out.data.size() - mean * mean);
    CHECK(sd == doctest::Approx(0.1).epsilon(0.1));
    CHECK(*std::min_element(out.data.begin(), out.data.end()) >= 0.0f);
    CHECK(*std::max_element(out.data.begin(), out.data.end()) <= 1.0f);
}

TEST_CASE("factor-4 downsampling of a checkerboard keeps one value per 4x4 block") {
    Image board(32, 32, 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) board.at(y, x, 0) = static_cast<float>((x + y) % 2);
    auto small = downsample_nearest(board, 4);
    CHECK(small.height == 8);
    CHECK(small.width == 8);
    // nearest sampling at (4y, 4x) is always an even-parity pixel
    for (float v : small.data) CHECK(v == 0.0f);
    auto up = upsample_bilinear(small, 32, 32);
    CHECK(up.height == 32);
    // each 4x4 block of the bilinear output is a function of the 8x8 grid, itself uniform here
    for (float v : up.data) CHECK(v == 0.0f);
}

TEST_CASE("blurs preserve constant images and stay in range") {
    Image flat(12, 12, 3, 0.3f);
    auto g = gaussian_blur(flat, 1.5);
    auto m = motion_blur(flat, 5, 0.7);
    for (size_t i = 0; i < flat.data.size(); ++i) {
        CHECK(g.data[i] == doctest::Approx(0.3f).epsilon(1e-5));
        CHECK(m.data[i] == doctest::Approx(0.3f).epsilon(1e-5));
    }
}

TEST_CASE("non-trivial degradation moves non-constant images") {
    DegradationSpec spec;
    spec.blur_sigma_range = {1.0, 1.0};
    spec.apply.blur = 1.0;
    auto img = render_glyph(3, 0, 32, 9);
    Rng rng(1);
    CHECK(mean_abs_difference(apply_degradation(img, spec, rng), img) > 0.0);
}

TEST_CASE("degradation spec validation and json round trip") {
    DegradationSpec spec;
    spec.blur_sigma_range = {0.5, 1.5};
    spec.downsample_factors = {2};
    spec.apply.blur = 0.3;
    nlohmann::json j = spec;
    auto back = j.get<DegradationSpec>();
    CHECK(back.blur_sigma_range == spec.blur_sigma_range);
    CHECK(back.downsample_factors == spec.downsample_factors);
    CHECK(back.apply.blur == 0.3);

    auto bad = spec;
    bad.blur_sigma_range = {2.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = spec;
    bad.apply.noise = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    j["sharpen"] = 1;
    CHECK_THROWS_AS(j.get<DegradationSpec>(), ConfigError);
}

TEST_CASE("target set counts, labels and seed dependence") {
    TempDir tmp("target");
    auto src = generate_toy_dataset(10, 4, 32, 1, tmp / "src");
    DegradationSpec spec;
    spec.noise_std_range = {0.05, 0.05};
    spec.apply.noise = 1.0;
    auto a = build_target_set(src, spec, 0.5, 1, tmp / "a");
    auto b = build_target_set(src, spec, 0.5, 2, tmp / "b");
    CHECK(a.size() == 20);
    CHECK(a.unlabeled());
    for (const auto& r : a.records) CHECK(r.identity_id == -1);
    CHECK(read_manifest(tmp / "a" / "manifest.jsonl").unlabeled());

    // subsets are chosen by seed; compare the source images they were rendered from
    auto key = [](const Manifest& m) {
        std::set<std::vector<float>> s;
        for (const auto& r : m.records) s.insert(read_png(r.image_path).data);
        return s;
    };
    CHECK(key(a) != key(b));
    CHECK_THROWS_AS(build_target_set(src, spec, 0.001, 1, tmp / "c"), ArgumentError);
}

TEST_CASE("load_batch maps pixels to [-1, 1] and is deterministic") {
    TempDir tmp("batch");
    Image img(32, 32, 3, 0.0f);
    for (int x = 0; x < 32; ++x) img.at(0, x, 0) = 1.0f;
    write_png(tmp / "x.png", img);
    Manifest m{{{tmp / "x.png", 0, Split::train}}, 1, 32, 0};
    const std::vector<int64_t> idx{0};
    auto b = load_batch(m, idx);
    CHECK(b.images.sizes() == torch::IntArrayRef({1, 3, 32, 32}));
    CHECK(b.images[0][0][0][0].item<float>() == 1.0f);
    CHECK(b.images[0][1][0][0].item<float>() == -1.0f);
    CHECK(testing::bit_equal(b.images, load_batch(m, idx).images));

    Manifest missing{{{tmp / "nope.png", 0, Split::train}}, 1, 32, 0};
    try {
        load_batch(missing, idx);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("nope.png") != std::string::npos);
    }
}

TEST_CASE("batch sampler draws depend only on the seed") {
    Batch data{torch::rand({20, 3, 8, 8}) * 2 - 1, torch::arange(20, torch::kInt64)};
    BatchSampler a(data, 32, 5, false);
    BatchSampler b(data, 32, 5, true);
    for (int i = 0; i < 5; ++i) {
        auto x = a.next();
        auto y = b.next();
        CHECK(x.images.size(0) == 32);
        CHECK(testing::bit_equal(x.images, y.images));
        CHECK(testing::bit_equal(x.labels, y.labels));
    }
}

TEST_CASE("image tensor conversion round trip") {
    auto img = quantize_8bit(random_image(8, 6, 3, 2));
    auto t = image_to_tensor(img);
    CHECK(t.sizes() == torch::IntArrayRef({3, 8, 6}));
    CHECK(t.min().item<float>() >= -1.0f);
    CHECK(t.max().item<float>() <= 1.0f);
    auto back = tensor_to_image(t);
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
}

TEST_CASE("tile grid layout") {
    std::vector<Image> tiles{Image(4, 4, 1, 0.0f), Image(), Image(4, 4, 1, 0.5f)};
    auto g = tile_grid(tiles, 1, 3);
    CHECK(g.height == 4 + 2);
    CHECK(g.width == 3 * 4 + 4);
    CHECK(g.at(1, 1, 0) == 0.0f);
    CHECK(g.at(1, 6, 0) == 1.0f);  // blank cell keeps background
    CHECK(g.at(1, 11, 0) == 0.5f);
}
