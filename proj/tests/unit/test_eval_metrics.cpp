#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfsm/errors.hpp"
#include "cfsm/eval_metrics.hpp"
#include "helpers.hpp"

using namespace cfsm;

namespace {

// Brute-force ROC: every observed score is a candidate threshold; the smallest one meeting the FAR
// bound wins.
std::pair<double, double> roc_oracle(const std::vector<double>& gen, const std::vector<double>& imp, double far) {
    std::vector<double> cands = gen;
    cands.insert(cands.end(), imp.begin(), imp.end());
    double best_t = std::numeric_limits<double>::infinity();
    for (double t : cands) {
        int64_t fa = 0;
        for (double s : imp) fa += s >= t;
        if (static_cast<double>(fa) <= far * static_cast<double>(imp.size()) + 1e-9 && t < best_t) best_t = t;
    }
    int64_t ta = 0;
    for (double s : gen) ta += s >= best_t;
    return {best_t, static_cast<double>(ta) / static_cast<double>(gen.size())};
}

torch::Tensor unit_rows(torch::Tensor x) { return x / x.norm(2, 1, true); }

}  // namespace

TEST_CASE("tar_at_far hand-enumerated point") {
    std::vector<double> imp, gen;
    for (int i = 0; i < 10; ++i) {
        imp.push_back(i / 10.0);
        gen.push_back(0.5 + i / 10.0);
    }
    auto r = tar_at_far(gen, imp, {0.1});
    CHECK(r[0].threshold == doctest::Approx(0.9));
    CHECK(r[0].tar == doctest::Approx(0.6));
    CHECK_FALSE(r[0].insufficient_impostors);
}

TEST_CASE("tar_at_far edge cases") {
    auto sep = tar_at_far({2.0, 3.0}, {0.0, 1.0, 0.5}, {0.0, 0.5, 1.0});
    for (auto& r : sep) CHECK(r.tar == 1.0);
    CHECK(sep[0].insufficient_impostors);
    auto none = tar_at_far({0.1}, {0.5, 0.7}, {0.0});
    CHECK(std::isinf(none[0].threshold));
    CHECK(none[0].tar == 0.0);
    CHECK(none[0].insufficient_impostors);
    CHECK_THROWS_AS(tar_at_far({}, {0.1}, {0.1}), ArgumentError);
    CHECK_THROWS_AS(tar_at_far({0.1}, {}, {0.1}), ArgumentError);
}

TEST_CASE("tar_at_far equals brute-force ROC and is monotone in FAR") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_int_distribution<int> coarse(0, 20);
    const std::vector<double> fars{0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
    for (int t = 0; t < 50; ++t) {
        std::vector<double> gen, imp;
        const bool ties = t % 2 == 0;
        for (int i = 0; i < 60; ++i) gen.push_back(ties ? coarse(rng) / 10.0 + 0.5 : n(rng) + 1.0);
        for (int i = 0; i < 140; ++i) imp.push_back(ties ? coarse(rng) / 10.0 : n(rng));
        auto res = tar_at_far(gen, imp, fars);
        double prev = -1;
        for (size_t k = 0; k < fars.size(); ++k) {
            auto [thr, tar] = roc_oracle(gen, imp, fars[k]);
            CHECK(res[k].tar == tar);
            CHECK(res[k].threshold == thr);
            CHECK(res[k].tar >= prev);
            prev = res[k].tar;
        }
    }
}

TEST_CASE("identical genuine and impostor distributions give TAR near FAR") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> gen, imp;
    for (int i = 0; i < 20000; ++i) {
        gen.push_back(u(rng));
        imp.push_back(u(rng));
    }
    for (auto& r : tar_at_far(gen, imp, {0.1, 0.01})) CHECK(std::abs(r.tar - r.far) < 0.01);
}

TEST_CASE("rank_k basic cases") {
    auto g = unit_rows(torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}}));
    auto gl = torch::tensor({0, 1}, torch::kInt64);
    auto acc = rank_k(g, gl, g, gl, {1});
    CHECK(acc[0] == 1.0);
    // tie between gallery 0 (wrong) and 1 (right): index order puts the wrong one first
    auto p = unit_rows(torch::tensor({{1.0f, 1.0f}}));
    CHECK(rank_k(g, gl, p, torch::tensor({1}, torch::kInt64), {1, 2}) == std::vector<double>{0.0, 1.0});
    CHECK(rank_k(g, gl, p, torch::tensor({0}, torch::kInt64), {1})[0] == 1.0);
    try {
        rank_k(g, gl, p, torch::tensor({7}, torch::kInt64), {1});
        FAIL("expected ArgumentError");
    } catch (const ArgumentError& e) {
        CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
}

TEST_CASE("rank_k equals an exhaustive sorting oracle") {
    torch::manual_seed(5);
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        const int G = 12, P = 9, ids = 5;
        auto g = unit_rows(t % 3 == 0 ? torch::randint(-2, 3, {G, 3}).to(torch::kFloat32) + 0.01 : torch::randn({G, 3}));
        auto p = unit_rows(torch::randn({P, 3}));
        auto gl = torch::arange(G, torch::kInt64).remainder(ids);
        auto pl = torch::randint(0, ids, {P}, torch::kInt64);
        std::vector<int> ks{1, 2, 3, 5, 12};
        auto acc = rank_k(g, gl, p, pl, ks);
        auto s = p.to(torch::kFloat64).matmul(g.to(torch::kFloat64).t());
        std::vector<int> hits(ks.size(), 0);
        for (int i = 0; i < P; ++i) {
            std::vector<int> order(G);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return s[i][a].item<double>() > s[i][b].item<double>(); });
            for (size_t k = 0; k < ks.size(); ++k) {
                for (int r = 0; r < ks[k]; ++r) {
                    if (gl[order[r]].item<int64_t>() == pl[i].item<int64_t>()) {
                        ++hits[k];
                        break;
                    }
                }
            }
        }
        for (size_t k = 0; k < ks.size(); ++k) {
            CHECK(acc[k] == static_cast<double>(hits[k]) / P);
            if (k > 0) CHECK(acc[k] >= acc[k - 1]);
        }
    }
}

TEST_CASE("random embeddings give chance-level rank-1") {
    torch::manual_seed(11);
    const int G = 10, trials = 300;
    int hits = 0;
    for (int t = 0; t < trials; ++t) {
        auto g = unit_rows(torch::randn({G, 8}));
        auto p = unit_rows(torch::randn({1, 8}));
        auto acc = rank_k(g, torch::arange(G, torch::kInt64), p, torch::tensor({t % G}, torch::kInt64), {1});
        hits += static_cast<int>(acc[0]);
    }
    const double p = 1.0 / G, sd = std::sqrt(trials * p * (1 - p));
    CHECK(std::abs(hits - trials * p) < 3 * sd);
}

TEST_CASE("evaluate_embeddings counts and serialization") {
    auto g = unit_rows(torch::randn({6, 4}));
    auto gl = torch::arange(6, torch::kInt64);
    auto r = evaluate_embeddings(g, gl, g, gl, {1, 5}, {0.1, 0.01});
    CHECK(r.rank.at(1) == 1.0);
    CHECK(r.gallery_count == 6);
    CHECK(r.probe_count == 6);
    CHECK(r.genuine_pairs == 6);
    CHECK(r.impostor_pairs == 30);
    auto j = r.to_json();
    CHECK(j["counts"]["impostor_pairs"] == 30);
    CHECK(j["tar_at_far"].size() == 2);
    CHECK(j["tar_at_far"][1]["insufficient_impostors"] == true);
}
