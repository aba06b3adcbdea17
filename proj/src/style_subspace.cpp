#include "cfsm/style_subspace.hpp"

#include <algorithm>
#include <cmath>

#include "cfsm/errors.hpp"

namespace cfsm {

StyleSubspaceImpl::StyleSubspaceImpl(int64_t d, int64_t q) {
    if (q < 1 || q >= d) throw ArgumentError("style subspace requires 1 <= q < d");
    U = register_parameter("U", torch::randn({d, q}) / std::sqrt(static_cast<double>(d)));
    mu = register_parameter("mu", torch::zeros({d}));
}

torch::Tensor StyleSubspaceImpl::forward(const torch::Tensor& o) const {
    if (o.size(-1) != q()) {
        throw ArgumentError("style coefficient has " + std::to_string(o.size(-1)) + " entries, subspace expects " +
                            std::to_string(q()));
    }
    if (o.dim() == 1) return torch::mv(U, o) + mu;
    if (o.dim() == 2) return torch::addmm(mu, o, U.t());
    throw ArgumentError("style coefficient must be q or B×q");
}

StyleCoefficient sample_coefficient(Rng& rng, int64_t q) { return {sample_coefficients(rng, 1, q).squeeze(0)}; }

torch::Tensor sample_coefficients(Rng& rng, int64_t batch, int64_t q) {
    if (q < 1 || batch < 1) throw ArgumentError("sample_coefficients: q and batch must be >= 1");
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto out = torch::empty({batch, q}, torch::kFloat32);
    auto* p = out.data_ptr<float>();
    for (int64_t i = 0; i < batch * q; ++i) p[i] = normal(rng);
    return out;
}

torch::Tensor to_style_code(const StyleSubspace& subspace, const torch::Tensor& o) { return subspace->forward(o); }

torch::Tensor orthogonality_loss(const torch::Tensor& U) {
    const auto q = U.size(1);
    auto gram = torch::mm(U.t(), U);
    return (gram - torch::eye(q, U.options())).abs().sum();
}

void MagnitudeSchedule::validate() const {
    if (!(l_a < u_a)) throw ConfigError("magnitude schedule requires l_a < u_a");
    if (!(l_m < u_m)) throw ConfigError("magnitude schedule requires l_m < u_m");
}

double magnitude_target(const MagnitudeSchedule& s, double a) {
    const double clamped = std::clamp(a, s.l_a, s.u_a);
    return (clamped - s.l_a) * (s.u_m - s.l_m) / (s.u_a - s.l_a) + s.l_m;
}

torch::Tensor magnitude_target(const MagnitudeSchedule& s, const torch::Tensor& a) {
    return (a.clamp(s.l_a, s.u_a) - s.l_a) * ((s.u_m - s.l_m) / (s.u_a - s.l_a)) + s.l_m;
}

}  // namespace cfsm
