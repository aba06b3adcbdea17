#include <cmath>
#include <vector>

#include "cfsm/errors.hpp"
#include "cfsm/objectives.hpp"
#include "cfsm/style_subspace.hpp"
#include "helpers.hpp"

using namespace cfsm;

namespace {

// Plain double-precision margin loss, one sample at a time.
double margin_oracle(const std::vector<double>& e, const std::vector<std::vector<double>>& W, int y, double s, double m) {
    auto norm = [](const std::vector<double>& v) {
        double n = 0;
        for (double x : v) n += x * x;
        return std::sqrt(n);
    };
    std::vector<double> logits;
    for (size_t j = 0; j < W.size(); ++j) {
        double dot = 0;
        for (size_t k = 0; k < e.size(); ++k) dot += e[k] * W[j][k];
        double c = dot / (norm(e) * norm(W[j]));
        if (static_cast<int>(j) == y) c = std::cos(std::acos(std::clamp(c, -1.0, 1.0)) + m);
        logits.push_back(s * c);
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    return -(logits[y] - mx - std::log(z));
}

}  // namespace

TEST_CASE("magnitude schedule endpoints and clamping") {
    MagnitudeSchedule g;
    CHECK(magnitude_target(g, 0.0) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(magnitude_target(g, 6.0) == doctest::Approx(0.65).epsilon(1e-12));
    CHECK(magnitude_target(g, 3.0) == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(magnitude_target(g, 9.0) == doctest::Approx(0.65).epsilon(1e-12));
    double prev = -1.0;
    for (double a = 0.0; a <= 8.0; a += 0.25) {
        const double v = magnitude_target(g, a);
        CHECK(v >= prev);
        prev = v;
    }
    auto t = magnitude_target(g, torch::tensor({0.0f, 3.0f, 7.0f}));
    CHECK(t[1].item<float>() == doctest::Approx(0.35f));
    CHECK(t[2].item<float>() == doctest::Approx(0.65f));
    MagnitudeSchedule bad;
    bad.u_a = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("coefficient sampling moments and determinism") {
    Rng rng(123);
    auto o = sample_coefficients(rng, 100000, 10).to(torch::kFloat64);
    auto mean = o.mean(0);
    auto var = o.var(0);
    CHECK(mean.abs().max().item<double>() < 0.02);
    CHECK((var - 1).abs().max().item<double>() < 0.03);
    Rng a(7), b(7);
    CHECK(testing::bit_equal(sample_coefficient(a, 10).o, sample_coefficient(b, 10).o));
    Rng c(7);
    CHECK(sample_coefficient(c, 10).o.numel() == 10);
}

TEST_CASE("style code is affine in o") {
    StyleSubspace s(2, 1);
    {
        torch::NoGradGuard ng;
        s->U.copy_(torch::tensor({{1.0f}, {0.0f}}));
        s->mu.zero_();
    }
    auto z = to_style_code(s, torch::tensor({2.0f}));
    CHECK(z[0].item<float>() == 2.0f);
    CHECK(z[1].item<float>() == 0.0f);

    StyleSubspace r(16, 4);
    {
        torch::NoGradGuard ng;
        r->mu.normal_();
    }
    CHECK(testing::max_abs_diff(to_style_code(r, torch::zeros({4})), r->mu) == 0.0);
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        auto o1 = sample_coefficients(rng, 1, 4)[0];
        auto o2 = sample_coefficients(rng, 1, 4)[0];
        auto lhs = to_style_code(r, o1 + o2) - r->mu;
        auto rhs = (to_style_code(r, o1) - r->mu) + (to_style_code(r, o2) - r->mu);
        CHECK(testing::max_abs_diff(lhs, rhs) < 1e-5);
    }
    CHECK_THROWS_AS(to_style_code(r, torch::zeros({5})), ArgumentError);
}

TEST_CASE("orthogonality loss values") {
    CHECK(orthogonality_loss(torch::eye(6).slice(1, 0, 3)).item<double>() == 0.0);
    CHECK(orthogonality_loss(torch::tensor({{1.0f, 1.0f}, {0.0f, 0.0f}})).item<double>() == doctest::Approx(2.0));
    for (int i = 0; i < 10; ++i) CHECK(orthogonality_loss(torch::randn({8, 3})).item<double>() >= 0.0);
    // oracle: explicit double loop
    auto U = torch::randn({5, 3}, torch::kFloat64);
    double expect = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double g = 0;
            for (int k = 0; k < 5; ++k) g += U[k][i].item<double>() * U[k][j].item<double>();
            expect += std::abs(g - (i == j ? 1.0 : 0.0));
        }
    CHECK(orthogonality_loss(U).item<double>() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("GAN losses at reference logits") {
    std::vector<torch::Tensor> zeros{torch::zeros({2, 1, 4, 4}), torch::zeros({2, 1, 2, 2}), torch::zeros({2, 1, 1, 1})};
    CHECK(discriminator_loss(zeros, zeros).item<double>() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));
    CHECK(generator_adv_loss(zeros).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    std::vector<torch::Tensor> big{torch::full({1, 1, 2, 2}, 40.0f)}, small{torch::full({1, 1, 2, 2}, -40.0f)};
    CHECK(discriminator_loss(big, small).item<double>() < 1e-12);
    CHECK(generator_adv_loss(big).item<double>() < 1e-12);
    double prev = 1e9;
    for (float l = -5.0f; l <= 5.0f; l += 0.5f) {
        const double v = generator_adv_loss({torch::full({1, 1, 1, 1}, l)}).item<double>();
        CHECK(v < prev);
        prev = v;
    }
    for (int i = 0; i < 10; ++i) {
        std::vector<torch::Tensor> r{torch::randn({2, 1, 3, 3}) * 5}, f{torch::randn({2, 1, 3, 3}) * 5};
        CHECK(discriminator_loss(r, f).item<double>() >= 0.0);
    }
}

TEST_CASE("identity loss reference values") {
    MagnitudeSchedule g;
    auto e = torch::randn({4, 8});
    // X̂ = X with g(a) = 0 requires a schedule whose target is 0
    MagnitudeSchedule zero{0.0, 6.0, 0.0, 0.6};
    CHECK(identity_loss(e, e, torch::zeros({4}), zero).item<double>() < 1e-12);

    // dissimilarity 0.35 at a = 3
    const double c = 0.65;
    auto a = torch::tensor({{1.0f, 0.0f}});
    auto b = torch::tensor({{static_cast<float>(c), static_cast<float>(std::sqrt(1 - c * c))}});
    CHECK(identity_loss(a, b, torch::tensor({3.0f}), g).item<double>() < 1e-12);
    // dissimilarity 0.65 at a = 0 → 0.36
    const double c2 = 0.35;
    auto b2 = torch::tensor({{static_cast<float>(c2), static_cast<float>(std::sqrt(1 - c2 * c2))}});
    CHECK(identity_loss(a, b2, torch::tensor({0.0f}), g).item<double>() == doctest::Approx(0.36).epsilon(1e-6));
    // invariant to positive rescaling of raw embeddings
    auto f = torch::randn({4, 8});
    auto mag = torch::rand({4}) * 6;
    CHECK(identity_loss(e, f, mag, g).item<double>() ==
          doctest::Approx(identity_loss(e * 3.7, f * 0.2, mag, g).item<double>()).epsilon(1e-5));
    CHECK_THROWS_AS(identity_loss(torch::zeros({1, 8}), f.slice(0, 0, 1), mag.slice(0, 0, 1), g), NumericError);
}

TEST_CASE("total generator loss arithmetic") {
    LossWeights w;
    CHECK(total_generator_loss(0.5, 0.2, 0.1, w) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(total_generator_loss(torch::tensor(0.5), torch::tensor(0.2), torch::tensor(0.1), w).item<double>() ==
          doctest::Approx(1.5).epsilon(1e-6));
    LossWeights zero{0.0, 0.0, 0.0};
    CHECK(total_generator_loss(3.0, 4.0, 5.0, zero) == 0.0);
    CHECK(total_generator_loss(1.0, 0.0, 0.0, w) + total_generator_loss(0.0, 2.0, 0.0, w) ==
          doctest::Approx(total_generator_loss(1.0, 2.0, 0.0, w)));
    LossWeights neg{-1.0, 1.0, 1.0};
    CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("margin loss: closed form on an aligned two-class case") {
    MarginHead head(2, 2, 16.0, 0.3);
    {
        torch::NoGradGuard ng;
        head->W.copy_(torch::tensor({{1.0f, 0.0f}, {0.0f, 1.0f}}));
    }
    auto r = margin_classification_loss(torch::tensor({{2.0f, 0.0f}}), head, torch::tensor({0}, torch::kInt64));
    const double t = 16.0 * std::cos(0.3);
    const double expect = -std::log(std::exp(t) / (std::exp(t) + 1.0));
    CHECK(r.loss.item<double>() == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("margin loss matches a double-precision oracle") {
    for (int trial = 0; trial < 10; ++trial) {
        const int B = 4, C = 5, E = 6;
        MarginHead head(C, E, 16.0, 0.3);
        auto emb = torch::randn({B, E});
        auto labels = torch::randint(0, C, {B}, torch::kInt64);
        auto r = margin_classification_loss(emb, head, labels);
        double mean = 0;
        for (int i = 0; i < B; ++i) {
            std::vector<double> e(E);
            for (int k = 0; k < E; ++k) e[k] = emb[i][k].item<double>();
            std::vector<std::vector<double>> W(C, std::vector<double>(E));
            for (int j = 0; j < C; ++j)
                for (int k = 0; k < E; ++k) W[j][k] = head->W[j][k].item<double>();
            const double o = margin_oracle(e, W, static_cast<int>(labels[i].item<int64_t>()), 16.0, 0.3);
            CHECK(r.per_sample[i].item<double>() == doctest::Approx(o).epsilon(1e-4));
            CHECK(r.per_sample[i].item<double>() >= 0.0);
            mean += o / B;
        }
        CHECK(r.loss.item<double>() == doctest::Approx(mean).epsilon(1e-4));
    }
}

TEST_CASE("margin loss with m = 0 is plain softmax cross-entropy on scaled cosines") {
    MarginHead head(4, 3, 16.0, 0.0);
    auto emb = torch::randn({6, 3});
    auto labels = torch::randint(0, 4, {6}, torch::kInt64);
    auto logits = 16.0 * torch::nn::functional::normalize(emb, torch::nn::functional::NormalizeFuncOptions().dim(1))
                             .matmul(torch::nn::functional::normalize(head->W, torch::nn::functional::NormalizeFuncOptions().dim(1)).t());
    auto ce = torch::nn::functional::cross_entropy(logits, labels);
    CHECK(margin_classification_loss(emb, head, labels).loss.item<double>() ==
          doctest::Approx(ce.item<double>()).epsilon(1e-5));
}

TEST_CASE("margin loss increases with the margin") {
    // θ_y = 0.5 rad, margins below π/2 − θ_y
    auto emb = torch::tensor({{static_cast<float>(std::cos(0.5)), static_cast<float>(std::sin(0.5)), 0.0f}});
    auto labels = torch::tensor({0}, torch::kInt64);
    double prev = -1.0;
    for (double m = 0.0; m < 1.0; m += 0.1) {
        MarginHead head(3, 3, 16.0, m);
        {
            torch::NoGradGuard ng;
            head->W.copy_(torch::eye(3));
        }
        const double v = margin_classification_loss(emb, head, labels).loss.item<double>();
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("margin loss rejects out-of-range labels") {
    MarginHead head(3, 4);
    CHECK_THROWS_AS(margin_classification_loss(torch::randn({2, 4}), head, torch::tensor({0, 3}, torch::kInt64)),
                    ArgumentError);
    CHECK_THROWS_AS(margin_classification_loss(torch::randn({2, 4}), head, torch::tensor({0, -1}, torch::kInt64)),
                    ArgumentError);
}
