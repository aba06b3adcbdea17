#pragma once

#include <torch/torch.h>

#include "cfsm/data_pipeline.hpp"

namespace cfsm {

// Learnable affine style subspace: z = U·o + μ with U ∈ R^{d×q}, μ ∈ R^d.
// U starts i.i.d. N(0, 1/d) and μ at zero; orthonormality is only encouraged through
// orthogonality_loss, never enforced by re-projection.
class StyleSubspaceImpl : public torch::nn::Module {
public:
    StyleSubspaceImpl(int64_t d, int64_t q);

    // o: q or B×q  →  z: d or B×d
    torch::Tensor forward(const torch::Tensor& o) const;

    int64_t d() const { return U.size(0); }
    int64_t q() const { return U.size(1); }

    torch::Tensor U;
    torch::Tensor mu;
};
TORCH_MODULE(StyleSubspace);

struct StyleCoefficient {
    torch::Tensor o;  // length q

    double magnitude() const { return o.norm().item<double>(); }
};

StyleCoefficient sample_coefficient(Rng& rng, int64_t q);

// B×q matrix of i.i.d. standard normal draws, row-major in draw order.
torch::Tensor sample_coefficients(Rng& rng, int64_t batch, int64_t q);

torch::Tensor to_style_code(const StyleSubspace& subspace, const torch::Tensor& o);
inline torch::Tensor to_style_code(const StyleSubspace& subspace, const StyleCoefficient& o) {
    return to_style_code(subspace, o.o);
}

// Σ_ij |(UᵀU − I)_ij|
torch::Tensor orthogonality_loss(const torch::Tensor& U);

// Linear map from coefficient magnitude a to the target identity dissimilarity:
// g(l_a) = l_m, g(u_a) = u_m, with a clamped to [l_a, u_a].
struct MagnitudeSchedule {
    double l_a = 0.0;
    double u_a = 6.0;
    double l_m = 0.05;
    double u_m = 0.65;

    void validate() const;
};

double magnitude_target(const MagnitudeSchedule& schedule, double a);
torch::Tensor magnitude_target(const MagnitudeSchedule& schedule, const torch::Tensor& a);

}  // namespace cfsm
