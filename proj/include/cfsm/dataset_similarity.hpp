#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "cfsm/image.hpp"
#include "cfsm/style_subspace.hpp"

namespace cfsm {

// S(A, B) = (1/q) Σ_i cos(u_Aⁱ + μ_A, u_Bⁱ + μ_B), bases paired by index.
double similarity(const torch::Tensor& U_a, const torch::Tensor& mu_a, const torch::Tensor& U_b,
                  const torch::Tensor& mu_b);
double similarity(const StyleSubspace& a, const StyleSubspace& b);

// Diagnostic only: the best mean cosine over all one-to-one pairings of bases (q ≤ 20).
// Not the index-paired metric above.
double similarity_best_permutation(const torch::Tensor& U_a, const torch::Tensor& mu_a, const torch::Tensor& U_b,
                                   const torch::Tensor& mu_b);

struct SimilarityMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> S;

    size_t size() const { return names.size(); }
};

SimilarityMatrix similarity_matrix(const std::vector<StyleSubspace>& subspaces, const std::vector<std::string>& names,
                                   bool best_permutation = false);
// Loads "style.U"/"style.mu" from each stage-1 checkpoint.
SimilarityMatrix similarity_matrix(const std::vector<std::filesystem::path>& checkpoints,
                                   const std::vector<std::string>& names, bool best_permutation = false);

// CSV: first row ",name1,...", then one row per name.
void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& m);
// Grayscale grid, [-1, 1] mapped to [0, 255]; each entry is a cell×cell block.
Image similarity_image(const SimilarityMatrix& m, int cell = 16);

}  // namespace cfsm
