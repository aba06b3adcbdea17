#include "cfsm/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "cfsm/errors.hpp"

namespace cfsm {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Portable counter-based uniform stream; glyph parameters must not depend on <random> internals.
class HashStream {
public:
    explicit HashStream(uint64_t key) : state_(splitmix64(key)) {}
    double uniform(double lo, double hi) {
        state_ = splitmix64(state_);
        const double u = static_cast<double>(state_ >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

private:
    uint64_t state_;
};

uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(a ^ (splitmix64(b) + 0x632BE59BD9B4E019ULL)); }

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

struct GlyphShape {
    double face_rx, face_ry, face_cy;
    Rgb face;
    double eye_dx, eye_y, eye_r, eye_tilt;
    double brow_gap, brow_slope;
    double mouth_y, mouth_half_width, mouth_curve;
    double nose_len;
};

GlyphShape identity_shape(int identity_id, uint64_t seed) {
    HashStream hs(mix(seed, static_cast<uint64_t>(identity_id) + 1));
    GlyphShape s{};
    s.face_rx = hs.uniform(0.28, 0.40);
    s.face_ry = hs.uniform(0.34, 0.44);
    s.face_cy = hs.uniform(0.50, 0.55);
    const double hue = hs.uniform(0.0, 1.0);
    s.face = hsv_to_rgb(hue, hs.uniform(0.30, 0.60), hs.uniform(0.70, 0.90));
    s.eye_dx = hs.uniform(0.09, 0.19);
    s.eye_y = hs.uniform(0.36, 0.47);
    s.eye_r = hs.uniform(0.035, 0.070);
    s.eye_tilt = hs.uniform(-0.05, 0.05);
    s.brow_gap = hs.uniform(0.05, 0.11);
    s.brow_slope = hs.uniform(-0.5, 0.5);
    s.mouth_y = hs.uniform(0.64, 0.74);
    s.mouth_half_width = hs.uniform(0.06, 0.14);
    s.mouth_curve = hs.uniform(-0.07, 0.07);
    s.nose_len = hs.uniform(0.03, 0.11);
    return s;
}

// Color of the canonical (unjittered) glyph at normalized coordinates (u, v) ∈ [0,1]².
Rgb glyph_color(const GlyphShape& s, double u, double v) {
    Rgb c{0.18 + 0.10 * v, 0.18 + 0.10 * v, 0.22 + 0.08 * v};  // background gradient
    const double fx = (u - 0.5) / s.face_rx, fy = (v - s.face_cy) / s.face_ry;
    if (fx * fx + fy * fy > 1.0) return c;
    c = s.face;
    const Rgb ink{0.08, 0.06, 0.05};
    for (int side : {-1, 1}) {
        const double ex = 0.5 + side * s.eye_dx;
        const double ey = s.eye_y + side * s.eye_tilt;
        const double dx = u - ex, dy = v - ey;
        if (dx * dx + dy * dy < s.eye_r * s.eye_r) {
            const double pr = 0.45 * s.eye_r;
            return (dx * dx + dy * dy < pr * pr) ? ink : Rgb{0.95, 0.95, 0.92};
        }
        const double by = ey - s.eye_r - s.brow_gap * 0.5 + side * s.brow_slope * (u - ex);
        if (std::abs(u - ex) < s.eye_r * 1.3 && std::abs(v - by) < 0.018) return ink;
    }
    if (std::abs(u - 0.5) < 0.015 && v > s.eye_y + 0.02 && v < s.eye_y + 0.02 + s.nose_len) {
        return {s.face.r * 0.6, s.face.g * 0.6, s.face.b * 0.6};
    }
    const double mx = (u - 0.5) / s.mouth_half_width;
    if (std::abs(mx) <= 1.0) {
        const double curve_y = s.mouth_y + s.mouth_curve * (mx * mx - 0.5);
        if (std::abs(v - curve_y) < 0.022) return {0.55, 0.12, 0.12};
    }
    return c;
}

std::string format_index(int v, int width) {
    std::ostringstream os;
    os.width(width);
    os.fill('0');
    os << v;
    return os.str();
}

double bilinear(const Image& img, double y, double x, int c) {
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * img.clamped(y0, x0, c) + fx * img.clamped(y0, x0 + 1, c)) +
           fy * ((1 - fx) * img.clamped(y0 + 1, x0, c) + fx * img.clamped(y0 + 1, x0 + 1, c));
}

}  // namespace

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::test_gallery: return "test_gallery";
        case Split::test_probe: return "test_probe";
    }
    return "train";
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test_gallery") return Split::test_gallery;
    if (name == "test_probe") return Split::test_probe;
    throw ArgumentError("unknown split: " + name);
}

int count_identities(const std::vector<IdentityRecord>& records) {
    std::set<int> ids;
    for (const auto& r : records)
        if (r.identity_id >= 0) ids.insert(r.identity_id);
    return static_cast<int>(ids.size());
}

bool Manifest::unlabeled() const {
    return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.identity_id == -1; });
}

Manifest Manifest::subset(Split split) const {
    Manifest out{{}, 0, image_size, seed};
    for (const auto& r : records)
        if (r.split == split) out.records.push_back(r);
    out.num_identities = count_identities(out.records);
    return out;
}

Manifest Manifest::subset(std::span<const size_t> indices) const {
    Manifest out{{}, 0, image_size, seed};
    for (size_t i : indices) {
        if (i >= records.size()) throw ArgumentError("Manifest::subset: index out of range");
        out.records.push_back(records[i]);
    }
    out.num_identities = count_identities(out.records);
    return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest: " + path.string());
    const auto base = std::filesystem::absolute(path).parent_path();
    os << nlohmann::json{{"num_identities", manifest.num_identities},
                         {"image_size", manifest.image_size},
                         {"seed", manifest.seed}}
              .dump()
       << '\n';
    for (const auto& r : manifest.records) {
        const auto rel = std::filesystem::absolute(r.image_path).lexically_relative(base);
        os << nlohmann::json{{"path", rel.generic_string()}, {"identity", r.identity_id}, {"split", to_string(r.split)}}
                  .dump()
           << '\n';
    }
    if (!os) throw IoError("failed writing manifest: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path.string());
    const auto base = std::filesystem::absolute(path).parent_path();
    Manifest m;
    std::string line;
    bool header = true;
    try {
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (header) {
                m.num_identities = j.at("num_identities").get<int>();
                m.image_size = j.at("image_size").get<int>();
                m.seed = j.at("seed").get<uint64_t>();
                header = false;
                continue;
            }
            IdentityRecord r;
            r.image_path = (base / j.at("path").get<std::string>()).lexically_normal();
            r.identity_id = j.at("identity").get<int>();
            r.split = split_from_string(j.at("split").get<std::string>());
            m.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    if (header) throw IoError("empty manifest: " + path.string());
    return m;
}

void DegradationSpec::validate() const {
    auto check_range = [](const std::pair<double, double>& r, const char* name) {
        if (!(r.first <= r.second) || r.first < 0.0) throw ConfigError(std::string("invalid range ") + name);
    };
    check_range(blur_sigma_range, "blur_sigma_range");
    check_range(noise_std_range, "noise_std_range");
    if (noise_std_range.second > 1.0) throw ConfigError("noise_std_range must lie in [0,1]");
    if (downsample_factors.empty() || motion_blur_lengths.empty()) {
        throw ConfigError("downsample_factors and motion_blur_lengths must be non-empty");
    }
    for (int f : downsample_factors)
        if (f < 1) throw ConfigError("downsample factor must be >= 1");
    for (int l : motion_blur_lengths)
        if (l < 1) throw ConfigError("motion blur length must be >= 1");
    for (double p : {apply.blur, apply.downsample, apply.motion, apply.noise}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("apply probability outside [0,1]");
    }
}

void to_json(nlohmann::json& j, const DegradationSpec& s) {
    j = nlohmann::json{{"blur_sigma_range", {s.blur_sigma_range.first, s.blur_sigma_range.second}},
                       {"downsample_factors", s.downsample_factors},
                       {"noise_std_range", {s.noise_std_range.first, s.noise_std_range.second}},
                       {"motion_blur_lengths", s.motion_blur_lengths},
                       {"apply_probabilities",
                        {{"blur", s.apply.blur},
                         {"downsample", s.apply.downsample},
                         {"motion", s.apply.motion},
                         {"noise", s.apply.noise}}}};
}

void from_json(const nlohmann::json& j, DegradationSpec& s) {
    static const std::set<std::string> known{"blur_sigma_range", "downsample_factors", "noise_std_range",
                                             "motion_blur_lengths", "apply_probabilities"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("unknown degradation key: " + k);
    s = DegradationSpec{};
    auto range = [&](const char* key, std::pair<double, double>& out) {
        if (!j.contains(key)) return;
        const auto& r = j.at(key);
        if (!r.is_array() || r.size() != 2) throw ConfigError(std::string(key) + " must be [lo, hi]");
        out = {r[0].get<double>(), r[1].get<double>()};
    };
    range("blur_sigma_range", s.blur_sigma_range);
    range("noise_std_range", s.noise_std_range);
    if (j.contains("downsample_factors")) s.downsample_factors = j.at("downsample_factors").get<std::vector<int>>();
    if (j.contains("motion_blur_lengths")) s.motion_blur_lengths = j.at("motion_blur_lengths").get<std::vector<int>>();
    if (j.contains("apply_probabilities")) {
        const auto& p = j.at("apply_probabilities");
        for (const auto& [k, v] : p.items()) {
            if (k == "blur") s.apply.blur = v.get<double>();
            else if (k == "downsample") s.apply.downsample = v.get<double>();
            else if (k == "motion") s.apply.motion = v.get<double>();
            else if (k == "noise") s.apply.noise = v.get<double>();
            else throw ConfigError("unknown apply_probabilities key: " + k);
        }
    }
}

Image render_glyph(int identity_id, int sample_index, int image_size, uint64_t seed) {
    const GlyphShape shape = identity_shape(identity_id, seed);
    HashStream jitter(mix(mix(seed, static_cast<uint64_t>(identity_id) + 1), static_cast<uint64_t>(sample_index) + 7));
    const double angle = jitter.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
    const double tx = jitter.uniform(-0.10, 0.10), ty = jitter.uniform(-0.10, 0.10);
    const double brightness = jitter.uniform(0.85, 1.15);
    const double ca = std::cos(angle), sa = std::sin(angle);

    constexpr int kSuper = 3;
    Image img(image_size, image_size, 3);
    for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
            double acc[3] = {0, 0, 0};
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double px = (x + (sx + 0.5) / kSuper) / image_size - 0.5 - tx;
                    const double py = (y + (sy + 0.5) / kSuper) / image_size - 0.5 - ty;
                    // Inverse rotation maps the output pixel back into the canonical glyph frame.
                    const double u = ca * px + sa * py + 0.5;
                    const double v = -sa * px + ca * py + 0.5;
                    const Rgb c = glyph_color(shape, u, v);
                    acc[0] += c.r;
                    acc[1] += c.g;
                    acc[2] += c.b;
                }
            }
            for (int k = 0; k < 3; ++k) {
                img.at(y, x, k) = static_cast<float>(std::clamp(acc[k] / (kSuper * kSuper) * brightness, 0.0, 1.0));
            }
        }
    }
    return quantize_8bit(img);
}

Manifest generate_toy_dataset(int num_identities, int samples_per_id, int image_size, uint64_t seed,
                              const std::filesystem::path& out_dir, int identity_offset) {
    if (num_identities < 2) throw ArgumentError("num_identities must be >= 2");
    if (samples_per_id < 2) throw ArgumentError("samples_per_id must be >= 2");
    if (image_size != 32 && image_size != 64) throw ArgumentError("image_size must be 32 or 64");
    if (identity_offset < 0) throw ArgumentError("identity_offset must be >= 0");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

    Manifest m{{}, num_identities, image_size, seed};
    for (int id = 0; id < num_identities; ++id) {
        for (int s = 0; s < samples_per_id; ++s) {
            const Image img = render_glyph(id + identity_offset, s, image_size, seed);
            const auto path = out_dir / ("id" + format_index(id, 4) + "_s" + format_index(s, 3) + ".png");
            write_png(path, img);
            Split split = Split::train;
            if (s == samples_per_id - 2) split = Split::test_gallery;
            if (s == samples_per_id - 1) split = Split::test_probe;
            m.records.push_back({path, id, split});
        }
    }
    write_manifest(out_dir / "manifest.jsonl", m);
    return m;
}

Image gaussian_blur(const Image& image, double sigma) {
    if (sigma <= 0.0) return image;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& k : kernel) k /= total;

    Image tmp(image.height, image.width, image.channels), out = tmp;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * image.clamped(y, x + i, c);
                tmp.at(y, x, c) = static_cast<float>(acc);
            }
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.clamped(y + i, x, c);
                out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    return out;
}

Image downsample_nearest(const Image& image, int factor) {
    if (factor < 1) throw ArgumentError("downsample factor must be >= 1");
    const int h = std::max(1, image.height / factor), w = std::max(1, image.width / factor);
    Image out(h, w, image.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.clamped(y * factor, x * factor, c);
    return out;
}

Image upsample_bilinear(const Image& image, int out_height, int out_width) {
    Image out(out_height, out_width, image.channels);
    const double sy = static_cast<double>(image.height) / out_height;
    const double sx = static_cast<double>(image.width) / out_width;
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                // Half-pixel centers (align_corners = false).
                const double src_y = std::max(0.0, (y + 0.5) * sy - 0.5);
                const double src_x = std::max(0.0, (x + 0.5) * sx - 0.5);
                out.at(y, x, c) = static_cast<float>(bilinear(image, src_y, src_x, c));
            }
    return out;
}

Image motion_blur(const Image& image, int length, double angle_radians) {
    if (length <= 1) return image;
    const double dx = std::cos(angle_radians), dy = std::sin(angle_radians);
    Image out(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                double acc = 0.0;
                for (int t = 0; t < length; ++t) {
                    const double off = t - (length - 1) / 2.0;
                    acc += bilinear(image, y + off * dy, x + off * dx, c);
                }
                out.at(y, x, c) = static_cast<float>(std::clamp(acc / length, 0.0, 1.0));
            }
    return out;
}

Image add_gaussian_noise(const Image& image, double stddev, Rng& rng) {
    Image out = image;
    if (stddev <= 0.0) return out;
    std::normal_distribution<double> noise(0.0, stddev);
    for (auto& v : out.data) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
    return out;
}

Image apply_degradation(const Image& image, const DegradationSpec& spec, Rng& rng) {
    spec.validate();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto pick = [&](const std::vector<int>& options) {
        return options[std::uniform_int_distribution<size_t>(0, options.size() - 1)(rng)];
    };
    auto in_range = [&](const std::pair<double, double>& r) { return r.first + (r.second - r.first) * unit(rng); };

    Image out = image;
    if (unit(rng) < spec.apply.blur) out = gaussian_blur(out, in_range(spec.blur_sigma_range));
    if (unit(rng) < spec.apply.downsample) {
        const int factor = pick(spec.downsample_factors);
        if (factor > 1) out = upsample_bilinear(downsample_nearest(out, factor), out.height, out.width);
    }
    if (unit(rng) < spec.apply.motion) {
        const int length = pick(spec.motion_blur_lengths);
        out = motion_blur(out, length, unit(rng) * std::numbers::pi);
    }
    if (unit(rng) < spec.apply.noise) out = add_gaussian_noise(out, in_range(spec.noise_std_range), rng);
    return out;
}

Manifest build_target_set(const Manifest& source, const DegradationSpec& spec, double fraction, uint64_t seed,
                          const std::filesystem::path& out_dir) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("fraction must lie in (0, 1]");
    spec.validate();
    const auto count = static_cast<size_t>(std::llround(fraction * static_cast<double>(source.size())));
    if (count == 0) throw ArgumentError("fraction selects zero images");

    std::vector<size_t> order(source.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng pick_rng(seed);
    std::shuffle(order.begin(), order.end(), pick_rng);
    order.resize(count);
    std::sort(order.begin(), order.end());

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

    Manifest target{{}, 0, source.image_size, seed};
    for (size_t i = 0; i < order.size(); ++i) {
        const size_t src = order[i];
        Rng rng(mix(seed, src));
        const Image degraded = apply_degradation(read_png(source.records[src].image_path), spec, rng);
        const auto path = out_dir / ("target_" + format_index(static_cast<int>(i), 5) + ".png");
        write_png(path, degraded);
        target.records.push_back({path, -1, Split::train});
    }
    write_manifest(out_dir / "manifest.jsonl", target);
    return target;
}

torch::Tensor image_to_tensor(const Image& image) {
    auto t = torch::from_blob(const_cast<float*>(image.data.data()), {image.height, image.width, image.channels},
                              torch::kFloat32);
    return t.permute({2, 0, 1}).contiguous().mul(2.0).sub(1.0);
}

Image tensor_to_image(const torch::Tensor& chw) {
    TORCH_CHECK(chw.dim() == 3, "tensor_to_image expects C×H×W");
    auto hwc = chw.detach().to(torch::kFloat32).add(1.0).mul(0.5).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    Image img(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(2)));
    std::memcpy(img.data.data(), hwc.data_ptr<float>(), img.data.size() * sizeof(float));
    return img;
}

Batch load_batch(const Manifest& manifest, std::span<const int64_t> indices) {
    if (indices.empty()) throw ArgumentError("load_batch: empty index list");
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    images.reserve(indices.size());
    for (int64_t i : indices) {
        if (i < 0 || static_cast<size_t>(i) >= manifest.size()) throw ArgumentError("load_batch: index out of range");
        const auto& rec = manifest.records[static_cast<size_t>(i)];
        images.push_back(image_to_tensor(read_png(rec.image_path)));
        labels.push_back(rec.identity_id);
    }
    return {torch::stack(images), torch::tensor(labels, torch::kInt64)};
}

Batch load_all(const Manifest& manifest) {
    std::vector<int64_t> all(manifest.size());
    std::iota(all.begin(), all.end(), int64_t{0});
    return load_batch(manifest, all);
}

BatchSampler::BatchSampler(Batch data, int64_t batch_size, uint64_t seed, bool prefetch)
    : data_(std::move(data)), batch_size_(batch_size), rng_(seed), prefetch_(prefetch) {
    if (batch_size < 1) throw ArgumentError("BatchSampler: batch_size must be >= 1");
    if (data_.size() < 1) throw ArgumentError("BatchSampler: empty dataset");
    if (prefetch_) pending_ = std::async(std::launch::async, [this] { return draw(); });
}

BatchSampler::~BatchSampler() {
    if (pending_.valid()) pending_.wait();
}

Batch BatchSampler::draw() {
    std::uniform_int_distribution<int64_t> pick(0, data_.size() - 1);
    std::vector<int64_t> idx(static_cast<size_t>(batch_size_));
    for (auto& i : idx) i = pick(rng_);
    auto index = torch::tensor(idx, torch::kInt64);
    return {data_.images.index_select(0, index), data_.labels.index_select(0, index)};
}

Batch BatchSampler::next() {
    if (!prefetch_) return draw();
    Batch ready = pending_.get();
    pending_ = std::async(std::launch::async, [this] { return draw(); });
    return ready;
}

}  // namespace cfsm
