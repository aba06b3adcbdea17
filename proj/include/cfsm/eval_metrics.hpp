#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfsm/config.hpp"
#include "cfsm/data_pipeline.hpp"

namespace cfsm {

// Closed-set identification. For each probe the gallery is ordered by cosine (descending, ties by
// gallery index); a probe hits at k if one of its first k entries shares its label.
// Embeddings must be unit-norm rows. Returns accuracy per k, in the order of `ks`.
std::vector<double> rank_k(const torch::Tensor& gallery, const torch::Tensor& gallery_labels, const torch::Tensor& probe,
                           const torch::Tensor& probe_labels, const std::vector<int>& ks);

struct TarAtFar {
    double far = 0.0;
    double tar = 0.0;
    double threshold = 0.0;  // +inf when no score satisfies the FAR bound
    bool insufficient_impostors = false;  // FAR < 1/|impostor|
};

// Threshold = smallest observed score t with fraction(impostor ≥ t) ≤ FAR; TAR = fraction(genuine ≥ t).
std::vector<TarAtFar> tar_at_far(const std::vector<double>& genuine, const std::vector<double>& impostor,
                                 const std::vector<double>& fars);

// Splits all probe×gallery cosine scores into genuine and impostor lists.
void pair_scores(const torch::Tensor& gallery, const torch::Tensor& gallery_labels, const torch::Tensor& probe,
                 const torch::Tensor& probe_labels, std::vector<double>& genuine, std::vector<double>& impostor);

struct EvalReport {
    std::map<int, double> rank;
    std::vector<TarAtFar> tar;
    int64_t gallery_count = 0;
    int64_t probe_count = 0;
    int64_t genuine_pairs = 0;
    int64_t impostor_pairs = 0;
    bool probes_degraded = false;

    nlohmann::json to_json() const;
};

EvalReport evaluate_embeddings(const torch::Tensor& gallery, const torch::Tensor& gallery_labels,
                               const torch::Tensor& probe, const torch::Tensor& probe_labels,
                               const std::vector<int>& ks, const std::vector<double>& fars);

// Embeds gallery and probe manifests with the checkpointed model; probes are degraded first when a
// spec is given (one Rng seeded with `seed`, images in manifest order).
EvalReport evaluate(const std::filesystem::path& fr_checkpoint, const Manifest& gallery, const Manifest& probe,
                    const std::optional<DegradationSpec>& degradation, uint64_t seed,
                    const std::vector<int>& ks = {1, 5}, const std::vector<double>& fars = {1e-1, 1e-2});

}  // namespace cfsm
