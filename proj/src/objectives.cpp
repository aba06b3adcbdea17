#include "cfsm/objectives.hpp"

#include <cmath>
#include <numbers>

#include "cfsm/errors.hpp"

namespace cfsm {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
    for (double w : {lambda_adv, lambda_ort, lambda_id}) {
        if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
    }
}

torch::Tensor discriminator_loss(const std::vector<torch::Tensor>& real_logits,
                                 const std::vector<torch::Tensor>& fake_logits) {
    if (real_logits.empty() || real_logits.size() != fake_logits.size()) {
        throw ArgumentError("discriminator_loss: scale count mismatch");
    }
    torch::Tensor total;
    for (size_t k = 0; k < real_logits.size(); ++k) {
        // −log σ(r) = softplus(−r);  −log(1 − σ(f)) = softplus(f)
        auto term = F::softplus(-real_logits[k]).mean() + F::softplus(fake_logits[k]).mean();
        total = k == 0 ? term : total + term;
    }
    return total / static_cast<double>(real_logits.size());
}

torch::Tensor generator_adv_loss(const std::vector<torch::Tensor>& fake_logits) {
    if (fake_logits.empty()) throw ArgumentError("generator_adv_loss: no logits");
    torch::Tensor total;
    for (size_t k = 0; k < fake_logits.size(); ++k) {
        auto term = F::softplus(-fake_logits[k]).mean();
        total = k == 0 ? term : total + term;
    }
    return total / static_cast<double>(fake_logits.size());
}

torch::Tensor l2_normalize_rows(const torch::Tensor& x) {
    auto norms = x.norm(2, /*dim=*/1, /*keepdim=*/true);
    if (norms.min().item<double>() < 1e-12) throw NumericError("zero-norm embedding");
    return x / norms;
}

torch::Tensor cosine_dissimilarity(const torch::Tensor& a, const torch::Tensor& b) {
    return 1.0 - (l2_normalize_rows(a) * l2_normalize_rows(b)).sum(1);
}

torch::Tensor identity_loss(const torch::Tensor& emb_real, const torch::Tensor& emb_synth,
                            const torch::Tensor& magnitude, const MagnitudeSchedule& schedule) {
    if (emb_real.sizes() != emb_synth.sizes()) throw ArgumentError("identity_loss: embedding shapes differ");
    if (magnitude.numel() != emb_real.size(0)) throw ArgumentError("identity_loss: one magnitude per sample");
    auto target = magnitude_target(schedule, magnitude.reshape({-1}).to(emb_real.scalar_type()));
    return (cosine_dissimilarity(emb_real, emb_synth) - target).pow(2).mean();
}

torch::Tensor total_generator_loss(const torch::Tensor& adv, const torch::Tensor& ort, const torch::Tensor& id,
                                   const LossWeights& w) {
    return w.lambda_adv * adv + w.lambda_ort * ort + w.lambda_id * id;
}

double total_generator_loss(double adv, double ort, double id, const LossWeights& w) {
    return w.lambda_adv * adv + w.lambda_ort * ort + w.lambda_id * id;
}

MarginHeadImpl::MarginHeadImpl(int64_t num_classes, int64_t embedding_dim, double s, double m)
    : scale(s), margin(m) {
    if (num_classes < 2) throw ArgumentError("margin head needs at least 2 classes");
    if (!(s > 0.0)) throw ArgumentError("margin head scale must be positive");
    if (!(m >= 0.0 && m < std::numbers::pi / 2)) throw ArgumentError("margin must lie in [0, pi/2)");
    W = register_parameter("W", torch::randn({num_classes, embedding_dim}) / std::sqrt(static_cast<double>(embedding_dim)));
}

MarginLoss margin_classification_loss(const torch::Tensor& embeddings, const MarginHead& head,
                                      const torch::Tensor& labels) {
    if (labels.numel() != embeddings.size(0)) throw ArgumentError("margin loss: one label per embedding");
    auto lbl = labels.to(torch::kInt64).reshape({-1});
    if (lbl.numel() > 0) {
        const auto lo = lbl.min().item<int64_t>(), hi = lbl.max().item<int64_t>();
        if (lo < 0 || hi >= head->num_classes()) {
            throw ArgumentError("margin loss: label out of range [0, " + std::to_string(head->num_classes()) + ")");
        }
    }
    auto cos = torch::mm(l2_normalize_rows(embeddings), l2_normalize_rows(head->W.to(embeddings.scalar_type())).t());
    auto cos_y = cos.gather(1, lbl.unsqueeze(1)).squeeze(1);
    // cos(θ + m) = cos θ cos m − sin θ sin m; the clamp keeps sqrt differentiable at |cos θ| = 1.
    auto sin_y = torch::sqrt((1.0 - cos_y * cos_y).clamp_min(1e-12));
    auto target = cos_y * std::cos(head->margin) - sin_y * std::sin(head->margin);
    auto one_hot = F::one_hot(lbl, head->num_classes()).to(cos.scalar_type());
    auto logits = head->scale * (cos + one_hot * (target - cos_y).unsqueeze(1));
    auto per_sample = -torch::log_softmax(logits, 1).gather(1, lbl.unsqueeze(1)).squeeze(1);
    return {per_sample.mean(), per_sample};
}

}  // namespace cfsm
