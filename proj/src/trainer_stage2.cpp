#include "cfsm/trainer_stage2.hpp"

#include <cmath>
#include <sstream>

#include "cfsm/errors.hpp"

namespace cfsm {

namespace {

EmbeddingNetOptions fr_options(const Stage2Config& cfg) {
    EmbeddingNetOptions o;
    o.base_channels = cfg.fr_channels;
    o.embedding_dim = cfg.embedding_dim;
    return o;
}

uint64_t synthesis_hash(const CfsmModel& m) {
    return parameter_hash(*m.synth) ^ (parameter_hash(*m.style) * 0x9E3779B97F4A7C15ULL);
}

}  // namespace

Checkpoint make_fr_checkpoint(const FRModel& fr, const Stage2Config& cfg, int step, const std::string& rng_state) {
    Checkpoint ckpt;
    const auto config = to_json(cfg);
    const auto dumped = config.dump();
    ckpt.metadata = {{"kind", "fr"},
                     {"config", config},
                     {"config_hash", hex64(fnv1a64(dumped.data(), dumped.size()))},
                     {"num_classes", fr.head->num_classes()},
                     {"step", step},
                     {"rng_state", rng_state}};
    ckpt.add_module("net.", *fr.net);
    ckpt.add_module("head.", *fr.head);
    return ckpt;
}

FRModel fr_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "fr") throw CheckpointError("not a recognition-model checkpoint");
    const auto cfg = stage2_config_from_json(ckpt.metadata.at("config"));
    FRModel fr(fr_options(cfg), ckpt.metadata.at("num_classes").get<int64_t>(), cfg.arcface_s, cfg.arcface_m);
    ckpt.load_module("net.", *fr.net);
    ckpt.load_module("head.", *fr.head);
    fr.net->eval();
    return fr;
}

FRModel load_fr(const std::filesystem::path& path) { return fr_from_checkpoint(load_checkpoint(path)); }

nlohmann::json Stage2Metrics::to_json() const {
    return {{"step", step}, {"loss_cla", loss_cla}, {"synthetic_count", synthetic_count}, {"mean_delta_linf", mean_delta_linf}};
}

Stage2Trainer::Stage2Trainer(const Stage2Config& cfg, Batch labeled, int num_classes, std::optional<CfsmModel> synthesis)
    : cfg_(cfg),
      synthesis_(std::move(synthesis)),
      sampler_(std::move(labeled), cfg.batch_size, cfg.seed * 4 + 1, cfg.prefetch),
      rng_(cfg.seed * 4 + 3) {
    if (cfg_.mode != AugmentMode::baseline && !synthesis_) {
        throw ConfigError("mode " + to_string(cfg_.mode) + " requires a synthesis checkpoint");
    }
    torch::manual_seed(cfg_.seed);
    fr_ = FRModel(fr_options(cfg_), num_classes, cfg_.arcface_s, cfg_.arcface_m);
    fr_.net->train();
    opt_ = std::make_unique<torch::optim::Adam>(
        fr_.parameters(), torch::optim::AdamOptions(cfg_.lr).betas({cfg_.adam_betas[0], cfg_.adam_betas[1]}));
    if (synthesis_) {
        freeze(*synthesis_->synth);
        freeze(*synthesis_->style);
        freeze(*synthesis_->disc);
    }
}

std::string Stage2Trainer::rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
}

Stage2Metrics Stage2Trainer::step() {
    Batch batch = sampler_.next();
    Stage2Metrics metrics;
    metrics.step = step_;

    Batch train_batch = batch;
    if (cfg_.mode != AugmentMode::baseline) {
        // only the positions that end up synthetic are pushed through the synthesis model
        auto& cfsm = *synthesis_;
        const auto chosen = choose_synthetic(batch.size(), cfg_.synth_ratio, rng_);
        const auto idx = chosen_indices(chosen);
        const int64_t n = idx.size(0);
        metrics.synthetic_count = static_cast<int>(n);
        if (n > 0) {
            auto o = sample_coefficients(rng_, n, cfsm.style->q());
            auto labels = batch.labels.index_select(0, idx);
            torch::Tensor content;
            {
                torch::NoGradGuard no_grad;
                content = cfsm.synth->encode(batch.images.index_select(0, idx));
            }
            auto coeff = o;
            if (cfg_.mode == AugmentMode::guided) {
                auto delta = fgsm_style_perturbation_from_content(fr_, cfsm.synth, cfsm.style, content, labels, o,
                                                                  cfg_.epsilon);
                coeff = o + delta;
                metrics.mean_delta_linf = delta.abs().amax(1).mean().item<double>();
                if (cfg_.record_perturbations) {
                    for (auto& r : make_perturbation_records(o, coeff)) records_.push_back(std::move(r));
                }
            }
            torch::Tensor synthetic;
            {
                torch::NoGradGuard no_grad;
                synthetic = synthesize_from_content(cfsm.synth, cfsm.style, content, coeff);
            }
            train_batch = compose_selected(batch, synthetic, chosen).batch;
        }
    }

    fr_.net->train();
    opt_->zero_grad();
    auto loss = margin_classification_loss(fr_.net->forward(train_batch.images), fr_.head, train_batch.labels).loss;
    metrics.loss_cla = loss.item<double>();
    if (!std::isfinite(metrics.loss_cla)) throw NumericError("non-finite loss_cla at step " + std::to_string(step_));
    loss.backward();
    opt_->step();
    ++step_;
    return metrics;
}

Stage2Result train_fr(const Stage2Config& cfg, const Manifest& labeled, const std::filesystem::path& out_dir) {
    cfg.validate();
    if (labeled.num_identities < 2) throw ArgumentError("stage-2 needs a labeled manifest with >= 2 identities");
    std::filesystem::create_directories(out_dir);

    std::optional<CfsmModel> cfsm;
    uint64_t frozen_hash = 0;
    if (cfg.mode != AugmentMode::baseline) {
        if (!std::filesystem::exists(cfg.synthesis_checkpoint)) {
            throw ConfigError("stage2.synthesis_checkpoint does not exist: " + cfg.synthesis_checkpoint.string());
        }
        cfsm = load_cfsm(cfg.synthesis_checkpoint);
        frozen_hash = synthesis_hash(*cfsm);
    }

    const Manifest train = labeled.subset(Split::train);
    Batch data = load_all(train);
    const int num_classes = static_cast<int>(data.labels.max().item<int64_t>() + 1);
    Stage2Trainer trainer(cfg, std::move(data), num_classes, cfsm);

    Stage2Result result;
    result.metrics_log = out_dir / "metrics.jsonl";
    MetricsLog log(result.metrics_log);
    nlohmann::json header{{"run", "train-fr"}, {"mode", to_string(cfg.mode)}, {"steps", cfg.steps}, {"seed", cfg.seed}};
    if (cfg.mode != AugmentMode::baseline) {
        header["epsilon"] = cfg.epsilon;
        header["synth_ratio"] = cfg.synth_ratio;
    }
    log.write(header);
    for (int s = 0; s < cfg.steps; ++s) {
        auto m = trainer.step();
        log.write(m.to_json());
        result.history.push_back(m);
    }
    if (cfsm && synthesis_hash(*cfsm) != frozen_hash) {
        throw std::logic_error("synthesis parameters changed during recognition training");
    }
    result.checkpoint = out_dir / "fr.ckpt";
    save_checkpoint(result.checkpoint, trainer.checkpoint());
    if (cfg.record_perturbations && cfg.mode == AugmentMode::guided) {
        result.perturbations = out_dir / "perturbations.jsonl";
        write_perturbation_records(result.perturbations, trainer.perturbations());
        write_perturbation_csv(out_dir / "perturbations.csv", trainer.perturbations());
    }
    return result;
}

}  // namespace cfsm
