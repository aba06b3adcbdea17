#include "cfsm/guided_augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cfsm/errors.hpp"
#include "cfsm/objectives.hpp"

namespace cfsm {

torch::Tensor fgsm_delta(const std::function<torch::Tensor(const torch::Tensor&)>& per_sample_loss,
                         const torch::Tensor& o, double epsilon) {
    if (!(epsilon > 0.0)) throw ArgumentError("FGSM budget must be positive");
    if (o.dim() != 2) throw ArgumentError("FGSM expects B×q coefficients");
    auto probe = o.detach().clone().set_requires_grad(true);
    auto losses = per_sample_loss(probe);
    if (losses.numel() != o.size(0)) throw ArgumentError("FGSM loss must return one value per sample");
    auto grad = torch::autograd::grad({losses.sum()}, {probe})[0].detach();
    auto finite = torch::isfinite(grad).all(1);
    if (!finite.all().item<bool>()) {
        const auto bad = (~finite).nonzero()[0][0].item<int64_t>();
        throw NumericError("non-finite style gradient for sample " + std::to_string(bad));
    }
    return epsilon * torch::sign(grad);
}

torch::Tensor fgsm_style_perturbation_from_content(FRModel& fr, SynthesisModel& synth, const StyleSubspace& subspace,
                                                   const torch::Tensor& content, const torch::Tensor& labels,
                                                   const torch::Tensor& o, double epsilon) {
    const bool was_training = fr.net->is_training();
    fr.net->eval();
    auto loss_fn = [&](const torch::Tensor& coeff) {
        auto images = synthesize_from_content(synth, subspace, content, coeff);
        return margin_classification_loss(fr.net->forward(images), fr.head, labels).per_sample;
    };
    torch::Tensor delta;
    try {
        delta = fgsm_delta(loss_fn, o, epsilon);
    } catch (...) {
        if (was_training) fr.net->train();
        throw;
    }
    if (was_training) fr.net->train();
    return delta;
}

torch::Tensor fgsm_style_perturbation(FRModel& fr, SynthesisModel& synth, const StyleSubspace& subspace,
                                      const torch::Tensor& images, const torch::Tensor& labels,
                                      const torch::Tensor& o, double epsilon) {
    torch::Tensor content;
    {
        torch::NoGradGuard no_grad;
        content = synth->encode(images);
    }
    return fgsm_style_perturbation_from_content(fr, synth, subspace, content, labels, o, epsilon);
}

std::vector<bool> choose_synthetic(int64_t batch, double synth_ratio, Rng& rng) {
    if (!(synth_ratio >= 0.0 && synth_ratio <= 1.0)) throw ArgumentError("synth_ratio must lie in [0, 1]");
    const auto n_synth = static_cast<int64_t>(std::llround(synth_ratio * static_cast<double>(batch)));
    std::vector<int64_t> order(static_cast<size_t>(batch));
    std::iota(order.begin(), order.end(), int64_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> chosen(static_cast<size_t>(batch), false);
    for (int64_t i = 0; i < n_synth; ++i) chosen[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;
    return chosen;
}

torch::Tensor chosen_indices(const std::vector<bool>& chosen) {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < chosen.size(); ++i) {
        if (chosen[i]) idx.push_back(static_cast<int64_t>(i));
    }
    return torch::tensor(idx, torch::kInt64);
}

ComposedBatch compose_selected(const Batch& real, const torch::Tensor& synthetic, const std::vector<bool>& chosen) {
    if (static_cast<int64_t>(chosen.size()) != real.size()) throw ArgumentError("compose: mask length mismatch");
    auto idx = chosen_indices(chosen);
    if (synthetic.size(0) != idx.size(0) || synthetic.sizes().slice(1) != real.images.sizes().slice(1)) {
        throw ArgumentError("compose: need one synthetic image per chosen position");
    }
    ComposedBatch out;
    out.synthetic = chosen;
    out.batch.images = real.images.clone();
    if (idx.size(0) > 0) out.batch.images.index_copy_(0, idx, synthetic.detach());
    out.batch.labels = real.labels.clone();
    return out;
}

ComposedBatch compose_batch(const Batch& real, const torch::Tensor& synthetic, double synth_ratio, Rng& rng) {
    if (synthetic.sizes() != real.images.sizes()) throw ArgumentError("compose_batch: shape mismatch");
    auto chosen = choose_synthetic(real.size(), synth_ratio, rng);
    return compose_selected(real, synthetic.index_select(0, chosen_indices(chosen)), chosen);
}

std::vector<PerturbationRecord> make_perturbation_records(const torch::Tensor& o, const torch::Tensor& o_star) {
    if (o.sizes() != o_star.sizes() || o.dim() != 2) throw ArgumentError("perturbation records need matching B×q");
    auto a = o.detach().to(torch::kFloat64).contiguous();
    auto b = o_star.detach().to(torch::kFloat64).contiguous();
    std::vector<PerturbationRecord> records;
    for (int64_t i = 0; i < a.size(0); ++i) {
        auto oi = a[i], si = b[i];
        const double na = oi.norm().item<double>(), nb = si.norm().item<double>();
        PerturbationRecord r;
        auto fa = oi.to(torch::kFloat32), fb = si.to(torch::kFloat32);
        r.o.assign(fa.data_ptr<float>(), fa.data_ptr<float>() + fa.numel());
        r.o_star.assign(fb.data_ptr<float>(), fb.data_ptr<float>() + fb.numel());
        if (na < 1e-12 || nb < 1e-12) throw NumericError("zero-norm style coefficient in perturbation record");
        r.cos_sim = std::clamp(oi.dot(si).item<double>() / (na * nb), -1.0, 1.0);
        r.magnitude_delta = nb - na;
        records.push_back(std::move(r));
    }
    return records;
}

Histogram make_histogram(const std::vector<double>& values, double lo, double hi, int bins) {
    if (bins < 1 || !(hi > lo)) throw ArgumentError("histogram needs bins >= 1 and hi > lo");
    Histogram h{lo, hi, std::vector<int64_t>(static_cast<size_t>(bins), 0)};
    for (double v : values) {
        auto k = static_cast<int64_t>(std::floor((v - lo) / (hi - lo) * bins));
        k = std::clamp<int64_t>(k, 0, bins - 1);
        ++h.counts[static_cast<size_t>(k)];
    }
    return h;
}

PerturbationSummary analyze_perturbations(const std::vector<PerturbationRecord>& records) {
    if (records.empty()) throw ArgumentError("analyze_perturbations needs at least one record");
    std::vector<double> cos, mag;
    PerturbationSummary s;
    for (const auto& r : records) {
        cos.push_back(r.cos_sim);
        mag.push_back(r.magnitude_delta);
        s.scatter.emplace_back(r.cos_sim, r.magnitude_delta);
    }
    s.cos_sim = make_histogram(cos, -1.0, 1.0, kPerturbationBins);
    double lo = *std::min_element(mag.begin(), mag.end()), hi = *std::max_element(mag.begin(), mag.end());
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
    s.magnitude_delta = make_histogram(mag, lo, hi, kPerturbationBins);
    return s;
}

void write_perturbation_csv(const std::filesystem::path& path, const std::vector<PerturbationRecord>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os.precision(9);
    os << "cos_sim,magnitude_delta\n";
    for (const auto& r : records) os << r.cos_sim << ',' << r.magnitude_delta << '\n';
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os.precision(9);
    os << "bin_lo,bin_hi,count\n";
    for (size_t i = 0; i < h.counts.size(); ++i) {
        os << h.lo + h.bin_width() * static_cast<double>(i) << ',' << h.lo + h.bin_width() * static_cast<double>(i + 1)
           << ',' << h.counts[i] << '\n';
    }
}

void write_perturbation_records(const std::filesystem::path& path, const std::vector<PerturbationRecord>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    for (const auto& r : records) {
        os << nlohmann::json{{"o", r.o}, {"o_star", r.o_star}, {"cos_sim", r.cos_sim}, {"magnitude_delta", r.magnitude_delta}}
                  .dump()
           << '\n';
    }
}

std::vector<PerturbationRecord> read_perturbation_records(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<PerturbationRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PerturbationRecord r;
            r.o = j.at("o").get<std::vector<float>>();
            r.o_star = j.at("o_star").get<std::vector<float>>();
            r.cos_sim = j.at("cos_sim").get<double>();
            r.magnitude_delta = j.at("magnitude_delta").get<double>();
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed perturbation record in " + path.string() + ": " + e.what());
        }
    }
    return records;
}

}  // namespace cfsm
