#include "cfsm/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "cfsm/errors.hpp"
#include "cfsm/fr_model.hpp"
#include "cfsm/trainer_stage2.hpp"

namespace cfsm {

namespace {

void check_pairs(const torch::Tensor& emb, const torch::Tensor& labels, const char* what) {
    if (emb.dim() != 2 || labels.dim() != 1 || emb.size(0) != labels.size(0)) {
        throw ArgumentError(std::string(what) + " embeddings must be N×e with N labels");
    }
}

}  // namespace

std::vector<double> rank_k(const torch::Tensor& gallery, const torch::Tensor& gallery_labels, const torch::Tensor& probe,
                           const torch::Tensor& probe_labels, const std::vector<int>& ks) {
    check_pairs(gallery, gallery_labels, "gallery");
    check_pairs(probe, probe_labels, "probe");
    if (probe.size(0) == 0) throw ArgumentError("no probes");
    for (int k : ks) {
        if (k < 1) throw ArgumentError("rank k must be >= 1");
    }
    auto gl = gallery_labels.to(torch::kInt64).contiguous();
    auto pl = probe_labels.to(torch::kInt64).contiguous();
    const int64_t* g = gl.data_ptr<int64_t>();
    const int64_t* p = pl.data_ptr<int64_t>();
    const int64_t G = gl.size(0);
    const int64_t P = pl.size(0);

    std::set<int64_t> in_gallery(g, g + G);
    std::set<int64_t> missing;
    for (int64_t i = 0; i < P; ++i) {
        if (!in_gallery.count(p[i])) missing.insert(p[i]);
    }
    if (!missing.empty()) {
        std::string list;
        for (auto id : missing) list += (list.empty() ? "" : ", ") + std::to_string(id);
        throw ArgumentError("probe identities absent from gallery: " + list);
    }

    auto scores = probe.detach().to(torch::kFloat64).matmul(gallery.detach().to(torch::kFloat64).t()).contiguous();
    const double* s = scores.data_ptr<double>();
    std::vector<int64_t> hits(ks.size(), 0);
    for (int64_t i = 0; i < P; ++i) {
        const double* row = s + i * G;
        // first mate in (score desc, index asc) order
        int64_t mate = -1;
        for (int64_t j = 0; j < G; ++j) {
            if (g[j] == p[i] && (mate < 0 || row[j] > row[mate])) mate = j;
        }
        int64_t position = 0;
        for (int64_t j = 0; j < G; ++j) {
            if (row[j] > row[mate] || (row[j] == row[mate] && j < mate)) ++position;
        }
        for (size_t t = 0; t < ks.size(); ++t) {
            if (position < ks[t]) ++hits[t];
        }
    }
    std::vector<double> acc;
    for (auto h : hits) acc.push_back(static_cast<double>(h) / static_cast<double>(P));
    return acc;
}

std::vector<TarAtFar> tar_at_far(const std::vector<double>& genuine, const std::vector<double>& impostor,
                                 const std::vector<double>& fars) {
    if (genuine.empty() || impostor.empty()) throw ArgumentError("tar_at_far needs genuine and impostor scores");
    std::vector<double> imp = impostor;
    std::sort(imp.begin(), imp.end(), std::greater<>());
    std::vector<double> gen = genuine;
    std::sort(gen.begin(), gen.end());
    std::vector<double> all = gen;
    all.insert(all.end(), imp.begin(), imp.end());
    std::sort(all.begin(), all.end());

    const auto n_imp = static_cast<double>(imp.size());
    std::vector<TarAtFar> out;
    for (double far : fars) {
        if (!(far >= 0.0 && far <= 1.0)) throw ArgumentError("FAR must be in [0, 1]");
        TarAtFar r;
        r.far = far;
        r.insufficient_impostors = far < 1.0 / n_imp;
        const auto allowed = static_cast<size_t>(std::floor(far * n_imp + 1e-9));
        if (allowed >= imp.size()) {
            r.threshold = all.front();
        } else {
            // any t above the (allowed+1)-th largest impostor keeps the count within bounds
            auto it = std::upper_bound(all.begin(), all.end(), imp[allowed]);
            r.threshold = it == all.end() ? std::numeric_limits<double>::infinity() : *it;
        }
        const auto accepted = gen.end() - std::lower_bound(gen.begin(), gen.end(), r.threshold);
        r.tar = static_cast<double>(accepted) / static_cast<double>(gen.size());
        out.push_back(r);
    }
    return out;
}

void pair_scores(const torch::Tensor& gallery, const torch::Tensor& gallery_labels, const torch::Tensor& probe,
                 const torch::Tensor& probe_labels, std::vector<double>& genuine, std::vector<double>& impostor) {
    check_pairs(gallery, gallery_labels, "gallery");
    check_pairs(probe, probe_labels, "probe");
    auto scores = probe.detach().to(torch::kFloat64).matmul(gallery.detach().to(torch::kFloat64).t()).contiguous();
    auto gl = gallery_labels.to(torch::kInt64).contiguous();
    auto pl = probe_labels.to(torch::kInt64).contiguous();
    const int64_t G = gl.size(0);
    const double* s = scores.data_ptr<double>();
    for (int64_t i = 0; i < pl.size(0); ++i) {
        for (int64_t j = 0; j < G; ++j) {
            (pl.data_ptr<int64_t>()[i] == gl.data_ptr<int64_t>()[j] ? genuine : impostor).push_back(s[i * G + j]);
        }
    }
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    nlohmann::json rj = nlohmann::json::object();
    for (const auto& [k, v] : rank) rj["rank" + std::to_string(k)] = v;
    j["rank"] = rj;
    nlohmann::json tj = nlohmann::json::array();
    for (const auto& t : tar) {
        tj.push_back({{"far", t.far},
                      {"tar", t.tar},
                      {"threshold", std::isfinite(t.threshold) ? nlohmann::json(t.threshold) : nlohmann::json(nullptr)},
                      {"insufficient_impostors", t.insufficient_impostors}});
    }
    j["tar_at_far"] = tj;
    j["counts"] = {{"gallery", gallery_count},
                   {"probe", probe_count},
                   {"genuine_pairs", genuine_pairs},
                   {"impostor_pairs", impostor_pairs}};
    j["probes_degraded"] = probes_degraded;
    return j;
}

EvalReport evaluate_embeddings(const torch::Tensor& gallery, const torch::Tensor& gallery_labels,
                               const torch::Tensor& probe, const torch::Tensor& probe_labels,
                               const std::vector<int>& ks, const std::vector<double>& fars) {
    EvalReport report;
    const auto acc = rank_k(gallery, gallery_labels, probe, probe_labels, ks);
    for (size_t i = 0; i < ks.size(); ++i) report.rank[ks[i]] = acc[i];
    std::vector<double> genuine, impostor;
    pair_scores(gallery, gallery_labels, probe, probe_labels, genuine, impostor);
    report.genuine_pairs = static_cast<int64_t>(genuine.size());
    report.impostor_pairs = static_cast<int64_t>(impostor.size());
    report.tar = tar_at_far(genuine, impostor, fars);
    report.gallery_count = gallery.size(0);
    report.probe_count = probe.size(0);
    return report;
}

EvalReport evaluate(const std::filesystem::path& fr_checkpoint, const Manifest& gallery, const Manifest& probe,
                    const std::optional<DegradationSpec>& degradation, uint64_t seed, const std::vector<int>& ks,
                    const std::vector<double>& fars) {
    FRModel fr = load_fr(fr_checkpoint);
    Batch g = load_all(gallery);
    Batch p = load_all(probe);
    if (degradation) {
        degradation->validate();
        Rng rng(seed);
        for (int64_t i = 0; i < p.size(); ++i) {
            auto img = tensor_to_image(p.images[i]);
            p.images[i].copy_(image_to_tensor(apply_degradation(img, *degradation, rng)));
        }
    }
    auto report = evaluate_embeddings(embed(fr.net, g), g.labels, embed(fr.net, p), p.labels, ks, fars);
    report.probes_degraded = degradation.has_value();
    return report;
}

}  // namespace cfsm
