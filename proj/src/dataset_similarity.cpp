#include "cfsm/dataset_similarity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "cfsm/checkpoint.hpp"
#include "cfsm/errors.hpp"

namespace cfsm {

namespace {

// Columns are the shifted bases u_i + μ, in double.
torch::Tensor shifted_bases(const torch::Tensor& U, const torch::Tensor& mu) {
    if (U.dim() != 2 || mu.dim() != 1 || mu.size(0) != U.size(0)) {
        throw ArgumentError("subspace needs U of shape d×q and mu of length d");
    }
    return U.detach().to(torch::kFloat64) + mu.detach().to(torch::kFloat64).unsqueeze(1);
}

// q×q matrix of cosines between shifted bases of A (rows) and B (columns).
torch::Tensor cosine_table(const torch::Tensor& U_a, const torch::Tensor& mu_a, const torch::Tensor& U_b,
                           const torch::Tensor& mu_b) {
    if (U_a.sizes() != U_b.sizes()) {
        throw ArgumentError("subspace dimensions differ: " + std::to_string(U_a.size(0)) + "x" +
                            std::to_string(U_a.size(1)) + " vs " + std::to_string(U_b.size(0)) + "x" +
                            std::to_string(U_b.size(1)));
    }
    auto a = shifted_bases(U_a, mu_a);
    auto b = shifted_bases(U_b, mu_b);
    auto na = a.norm(2, 0);
    auto nb = b.norm(2, 0);
    if (na.min().item<double>() < 1e-12 || nb.min().item<double>() < 1e-12) {
        throw NumericError("zero-norm shifted basis vector in similarity");
    }
    return (a / na).t().matmul(b / nb);
}

}  // namespace

double similarity(const torch::Tensor& U_a, const torch::Tensor& mu_a, const torch::Tensor& U_b,
                  const torch::Tensor& mu_b) {
    auto c = cosine_table(U_a, mu_a, U_b, mu_b);
    const double s = c.diagonal().mean().item<double>();
    return std::clamp(s, -1.0, 1.0);
}

double similarity(const StyleSubspace& a, const StyleSubspace& b) { return similarity(a->U, a->mu, b->U, b->mu); }

double similarity_best_permutation(const torch::Tensor& U_a, const torch::Tensor& mu_a, const torch::Tensor& U_b,
                                   const torch::Tensor& mu_b) {
    auto c = cosine_table(U_a, mu_a, U_b, mu_b).contiguous();
    const int q = static_cast<int>(c.size(0));
    if (q > 20) throw ArgumentError("permutation diagnostic supports q <= 20");
    const double* p = c.data_ptr<double>();
    // best[mask]: max total over assignments of the first popcount(mask) rows to the columns in mask
    std::vector<double> best(size_t{1} << q, -std::numeric_limits<double>::infinity());
    best[0] = 0.0;
    for (uint32_t mask = 0; mask < (1u << q); ++mask) {
        if (!std::isfinite(best[mask])) continue;
        const int row = std::popcount(mask);
        if (row == q) continue;
        for (int col = 0; col < q; ++col) {
            if (mask & (1u << col)) continue;
            auto& slot = best[mask | (1u << col)];
            slot = std::max(slot, best[mask] + p[row * q + col]);
        }
    }
    return std::clamp(best[(size_t{1} << q) - 1] / q, -1.0, 1.0);
}

SimilarityMatrix similarity_matrix(const std::vector<StyleSubspace>& subspaces, const std::vector<std::string>& names,
                                   bool best_permutation) {
    if (subspaces.size() < 2) throw ArgumentError("similarity matrix needs at least 2 subspaces");
    if (names.size() != subspaces.size()) throw ArgumentError("need one name per subspace");
    const size_t k = subspaces.size();
    for (size_t i = 1; i < k; ++i) {
        if (subspaces[i]->U.sizes() != subspaces[0]->U.sizes()) {
            throw ArgumentError("subspace '" + names[i] + "' has dimensions inconsistent with '" + names[0] + "'");
        }
    }
    SimilarityMatrix m;
    m.names = names;
    m.S.assign(k, std::vector<double>(k, 0.0));
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = i; j < k; ++j) {
            const auto& a = subspaces[i];
            const auto& b = subspaces[j];
            const double s = best_permutation ? similarity_best_permutation(a->U, a->mu, b->U, b->mu)
                                              : similarity(a, b);
            m.S[i][j] = s;
            m.S[j][i] = s;
        }
    }
    return m;
}

SimilarityMatrix similarity_matrix(const std::vector<std::filesystem::path>& checkpoints,
                                   const std::vector<std::string>& names, bool best_permutation) {
    std::vector<StyleSubspace> subspaces;
    for (const auto& path : checkpoints) {
        const auto ckpt = load_checkpoint(path);
        if (!ckpt.contains("style.U") || !ckpt.contains("style.mu")) {
            throw CheckpointError("no style subspace in " + path.string());
        }
        const auto& U = ckpt.get("style.U");
        if (!subspaces.empty() && U.sizes() != subspaces.front()->U.sizes()) {
            throw ArgumentError("inconsistent subspace dimensions in " + path.string());
        }
        StyleSubspace s(U.size(0), U.size(1));
        {
            torch::NoGradGuard no_grad;
            s->U.copy_(U);
            s->mu.copy_(ckpt.get("style.mu"));
        }
        subspaces.push_back(s);
    }
    return similarity_matrix(subspaces, names, best_permutation);
}

void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(9);
    for (const auto& n : m.names) out << ',' << n;
    out << '\n';
    for (size_t i = 0; i < m.size(); ++i) {
        out << m.names[i];
        for (double v : m.S[i]) out << ',' << v;
        out << '\n';
    }
}

Image similarity_image(const SimilarityMatrix& m, int cell) {
    const int k = static_cast<int>(m.size());
    Image img(k * cell, k * cell, 1);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const float level = static_cast<float>(std::round((std::clamp(m.S[i][j], -1.0, 1.0) + 1.0) * 127.5) / 255.0);
            for (int y = 0; y < cell; ++y) {
                for (int x = 0; x < cell; ++x) img.at(i * cell + y, j * cell + x, 0) = level;
            }
        }
    }
    return img;
}

}  // namespace cfsm
