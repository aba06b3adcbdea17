#pragma once

#include <torch/torch.h>

#include <vector>

#include "cfsm/style_subspace.hpp"

namespace cfsm {

struct LossWeights {
    double lambda_adv = 1.0;
    double lambda_ort = 1.0;
    double lambda_id = 8.0;

    void validate() const;
};

// Mean over scales of the per-pixel sigmoid cross-entropy: real → 1, fake → 0.
// fake_logits must come from detached generator outputs.
torch::Tensor discriminator_loss(const std::vector<torch::Tensor>& real_logits,
                                 const std::vector<torch::Tensor>& fake_logits);

// Non-saturating generator loss: mean over scales of −log σ(logit).
torch::Tensor generator_adv_loss(const std::vector<torch::Tensor>& fake_logits);

// Row-wise L2 normalization; throws NumericError if any row has (near) zero norm.
torch::Tensor l2_normalize_rows(const torch::Tensor& x);

// 1 − cos between matching rows.
torch::Tensor cosine_dissimilarity(const torch::Tensor& a, const torch::Tensor& b);

// Batch mean of ((1 − cos(e_x, e_xhat)) − g(a))². Raw embeddings in, normalized internally;
// `magnitude` holds ‖o‖ per sample.
torch::Tensor identity_loss(const torch::Tensor& emb_real, const torch::Tensor& emb_synth,
                            const torch::Tensor& magnitude, const MagnitudeSchedule& schedule);

torch::Tensor total_generator_loss(const torch::Tensor& adv, const torch::Tensor& ort, const torch::Tensor& id,
                                   const LossWeights& w);
double total_generator_loss(double adv, double ort, double id, const LossWeights& w);

// Additive angular margin head: W holds one class direction per row (normalized at use).
class MarginHeadImpl : public torch::nn::Module {
public:
    MarginHeadImpl(int64_t num_classes, int64_t embedding_dim, double scale = 16.0, double margin = 0.3);

    int64_t num_classes() const { return W.size(0); }

    torch::Tensor W;
    double scale;
    double margin;
};
TORCH_MODULE(MarginHead);

struct MarginLoss {
    torch::Tensor loss;        // scalar mean
    torch::Tensor per_sample;  // B
};

// Cosine logits s·cos θ_j, target logit replaced by s·cos(θ_y + m), softmax cross-entropy.
MarginLoss margin_classification_loss(const torch::Tensor& embeddings, const MarginHead& head,
                                      const torch::Tensor& labels);

}  // namespace cfsm
