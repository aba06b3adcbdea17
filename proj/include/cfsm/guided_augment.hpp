#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <vector>

#include "cfsm/data_pipeline.hpp"
#include "cfsm/fr_model.hpp"
#include "cfsm/synthesis_model.hpp"

namespace cfsm {

// δ* = ε·sign(∂L/∂o) evaluated at δ = 0, one row per sample; sign(0) = 0.
// `per_sample_loss` maps a B×q coefficient matrix to B per-sample losses, so row i of the
// gradient only depends on sample i's loss. Throws NumericError naming the first sample whose
// gradient is non-finite.
torch::Tensor fgsm_delta(const std::function<torch::Tensor(const torch::Tensor&)>& per_sample_loss,
                         const torch::Tensor& o, double epsilon);

// Style-space FGSM against a recognition model: maximizes the margin loss of F(synthesize(X, o + δ))
// over ‖δ‖∞ ≤ ε with one signed-gradient step. F runs in eval mode; no parameter gradients are
// accumulated on either model.
torch::Tensor fgsm_style_perturbation(FRModel& fr, SynthesisModel& synth, const StyleSubspace& subspace,
                                      const torch::Tensor& images, const torch::Tensor& labels,
                                      const torch::Tensor& o, double epsilon);

// Same, reusing the encoder output E(X).
torch::Tensor fgsm_style_perturbation_from_content(FRModel& fr, SynthesisModel& synth, const StyleSubspace& subspace,
                                                   const torch::Tensor& content, const torch::Tensor& labels,
                                                   const torch::Tensor& o, double epsilon);

struct ComposedBatch {
    Batch batch;
    std::vector<bool> synthetic;  // per position: true if taken from the synthetic images
};

// round(B·ratio) positions chosen uniformly without replacement.
std::vector<bool> choose_synthetic(int64_t batch, double synth_ratio, Rng& rng);
torch::Tensor chosen_indices(const std::vector<bool>& chosen);
// `synthetic` holds one image per chosen position, in position order.
ComposedBatch compose_selected(const Batch& real, const torch::Tensor& synthetic, const std::vector<bool>& chosen);

// Position i holds either real[i] or synthetic[i]; round(B·ratio) positions, chosen uniformly
// without replacement, take the synthetic image. Labels are those of `real`.
ComposedBatch compose_batch(const Batch& real, const torch::Tensor& synthetic, double synth_ratio, Rng& rng);

struct PerturbationRecord {
    std::vector<float> o;
    std::vector<float> o_star;
    double cos_sim = 1.0;
    double magnitude_delta = 0.0;  // ‖o*‖ − ‖o‖
};

// One record per row of o / o* = o + δ*.
std::vector<PerturbationRecord> make_perturbation_records(const torch::Tensor& o, const torch::Tensor& o_star);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<int64_t> counts;

    double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size()); }
};

Histogram make_histogram(const std::vector<double>& values, double lo, double hi, int bins);

struct PerturbationSummary {
    Histogram cos_sim;          // fixed range [-1, 1]
    Histogram magnitude_delta;  // data range (widened when degenerate)
    std::vector<std::pair<double, double>> scatter;  // (cos_sim, magnitude_delta) per record
};

inline constexpr int kPerturbationBins = 50;

PerturbationSummary analyze_perturbations(const std::vector<PerturbationRecord>& records);

// CSV with header "cos_sim,magnitude_delta", one row per record.
void write_perturbation_csv(const std::filesystem::path& path, const std::vector<PerturbationRecord>& records);
// Full records (o, o*, derived scalars) as JSON lines, as stored by stage-2 training.
void write_perturbation_records(const std::filesystem::path& path, const std::vector<PerturbationRecord>& records);
std::vector<PerturbationRecord> read_perturbation_records(const std::filesystem::path& path);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& histogram);

}  // namespace cfsm
