#include <cmath>
#include <fstream>
#include <map>

#include <unistd.h>

#include "cfsm/checkpoint.hpp"
#include "cfsm/errors.hpp"
#include "cfsm/guided_augment.hpp"
#include "helpers.hpp"

using namespace cfsm;
using testing::TempDir;

TEST_CASE("fgsm on a linear surrogate is eps times sign(w)") {
    for (int trial = 0; trial < 20; ++trial) {
        auto w = torch::randn({5, 7});
        if (trial % 4 == 0) w[0][trial % 7] = 0.0f;
        auto delta = fgsm_delta([&](const torch::Tensor& o) { return (o * w).sum(1); }, torch::randn({5, 7}), 0.314);
        CHECK(testing::max_abs_diff(delta, 0.314 * torch::sign(w)) < 1e-7);
    }
}

TEST_CASE("fgsm components lie in {-eps, 0, +eps}") {
    auto o = torch::randn({8, 10});
    auto delta = fgsm_delta([](const torch::Tensor& x) { return (x.pow(3) - x).sum(1); }, o, 0.157);
    auto a = delta.abs();
    CHECK((((a - 0.157).abs() < 1e-7) | (a == 0)).all().item<bool>());
    CHECK((delta.abs().amax(1) - 0.157).abs().max().item<double>() < 1e-7);
}

TEST_CASE("fgsm reports the first sample with a non-finite gradient") {
    auto o = torch::ones({3, 2});
    try {
        fgsm_delta(
            [](const torch::Tensor& x) {
                auto scale = torch::tensor({1.0f, 1.0f, std::numeric_limits<float>::infinity()});
                return (x * scale.unsqueeze(1)).sum(1);
            },
            o, 0.1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
    }
}

TEST_CASE("style fgsm leaves both models untouched and respects the budget") {
    torch::manual_seed(0);
    SynthesisOptions so;
    so.base_channels = 4;
    so.style_dim = 8;
    so.mlp_hidden = 8;
    SynthesisModel synth(so);
    StyleSubspace sub(8, 3);
    FRModel fr({3, 4, 8}, 5, 16.0, 0.3);
    fr.net->train();
    const auto h_synth = parameter_hash(*synth);
    const auto h_net = parameter_hash(*fr.net);
    auto x = torch::rand({4, 3, 16, 16}) * 2 - 1;
    auto labels = torch::tensor({0, 1, 2, 3}, torch::kInt64);
    auto o = torch::randn({4, 3});
    auto delta = fgsm_style_perturbation(fr, synth, sub, x, labels, o, 0.314);
    CHECK(delta.sizes() == o.sizes());
    CHECK(delta.abs().max().item<double>() <= 0.314 + 1e-7);
    CHECK(parameter_hash(*synth) == h_synth);
    CHECK(parameter_hash(*fr.net) == h_net);  // BN running stats untouched: eval mode
    CHECK(fr.net->is_training());
    for (auto& p : fr.parameters()) CHECK_FALSE(p.grad().defined());
    for (auto& p : synth->parameters()) CHECK_FALSE(p.grad().defined());

    // per-sample independence: perturbing alone gives the same row
    auto solo = fgsm_style_perturbation(fr, synth, sub, x.slice(0, 1, 2), labels.slice(0, 1, 2), o.slice(0, 1, 2), 0.314);
    CHECK(testing::max_abs_diff(solo[0], delta[1]) == 0.0);

    // label awareness
    auto swapped = fgsm_style_perturbation(fr, synth, sub, x, torch::tensor({4, 3, 0, 1}, torch::kInt64), o, 0.314);
    CHECK(testing::max_abs_diff(swapped, delta) > 0.0);
}

TEST_CASE("compose_batch selection counts and label preservation") {
    Rng rng(1);
    Batch real{torch::zeros({32, 1, 2, 2}), torch::arange(32, torch::kInt64)};
    auto synth = torch::ones({32, 1, 2, 2});
    for (auto [ratio, expect] : std::vector<std::pair<double, int>>{{0.5, 16}, {0.75, 24}, {0.0, 0}, {1.0, 32}}) {
        auto c = compose_batch(real, synth, ratio, rng);
        int n = 0;
        for (bool s : c.synthetic) n += s;
        CHECK(n == expect);
        CHECK(c.batch.images.sum().item<double>() == doctest::Approx(expect * 4));
        CHECK(testing::bit_equal(c.batch.labels, real.labels));
        for (int i = 0; i < 32; ++i) CHECK((c.batch.images[i].sum().item<float>() > 0) == c.synthetic[i]);
    }
    auto zero = compose_batch(real, synth, 0.0, rng);
    CHECK(testing::bit_equal(zero.batch.images, real.images));
    CHECK_THROWS_AS(compose_batch(real, synth, 1.5, rng), ArgumentError);
}

TEST_CASE("compose_batch picks positions uniformly") {
    Rng rng(9);
    Batch real{torch::zeros({8, 1, 1, 1}), torch::zeros({8}, torch::kInt64)};
    auto synth = torch::ones({8, 1, 1, 1});
    std::vector<int> hits(8, 0);
    const int trials = 4000;
    for (int t = 0; t < trials; ++t) {
        auto c = compose_batch(real, synth, 0.5, rng);
        for (int i = 0; i < 8; ++i) hits[i] += c.synthetic[i];
    }
    // each position is synthetic with probability 1/2; 4σ band
    for (int h : hits) CHECK(std::abs(h - trials / 2) < 4 * std::sqrt(trials * 0.25));
}

TEST_CASE("perturbation analytics") {
    auto o = torch::randn({200, 10});
    auto none = make_perturbation_records(o, o);
    auto s0 = analyze_perturbations(none);
    for (const auto& r : none) {
        CHECK(r.cos_sim == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.magnitude_delta == doctest::Approx(0.0).epsilon(1e-9));
    }
    CHECK(s0.cos_sim.counts.size() == kPerturbationBins);
    CHECK(s0.cos_sim.counts.back() == 200);

    Rng rng(4);
    std::bernoulli_distribution coin(0.5);
    auto signs = torch::empty({200, 10});
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 10; ++j) signs[i][j] = coin(rng) ? 1.0f : -1.0f;
    auto recs = make_perturbation_records(o, o + 0.314 * signs);
    double mean_abs = 0;
    for (const auto& r : recs) {
        mean_abs += std::abs(r.magnitude_delta) / recs.size();
        CHECK(r.cos_sim <= 1.0 + 1e-12);
        CHECK(r.cos_sim >= -1.0 - 1e-12);
    }
    CHECK(mean_abs > 0.0);
    auto summary = analyze_perturbations(recs);
    int64_t total = 0;
    for (auto c : summary.magnitude_delta.counts) total += c;
    CHECK(total == 200);
    CHECK(summary.scatter.size() == 200);

    TempDir tmp("pert");
    write_perturbation_csv(tmp / "p.csv", recs);
    std::ifstream is(tmp / "p.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "cos_sim,magnitude_delta");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 200);

    write_perturbation_records(tmp / "p.jsonl", recs);
    auto back = read_perturbation_records(tmp / "p.jsonl");
    REQUIRE(back.size() == recs.size());
    CHECK(back[3].o == recs[3].o);
    CHECK(back[3].o_star == recs[3].o_star);
    CHECK(back[3].cos_sim == doctest::Approx(recs[3].cos_sim));
}

TEST_CASE("histogram binning") {
    auto h = make_histogram({-1.0, -0.99, 0.0, 0.5, 1.0}, -1.0, 1.0, 4);
    CHECK(h.counts == std::vector<int64_t>{2, 0, 1, 2});
    CHECK(h.bin_width() == 0.5);
}
