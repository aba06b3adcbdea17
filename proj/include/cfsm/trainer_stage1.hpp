#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cfsm/checkpoint.hpp"
#include "cfsm/config.hpp"
#include "cfsm/data_pipeline.hpp"
#include "cfsm/fr_model.hpp"
#include "cfsm/metrics_log.hpp"
#include "cfsm/synthesis_model.hpp"

namespace cfsm {

// Everything a stage-1 checkpoint holds: generator side, discriminator and the frozen
// identity extractor f used by the identity loss.
struct CfsmModel {
    SynthesisModel synth{nullptr};
    StyleSubspace style{nullptr};
    MultiScaleDiscriminator disc{nullptr};
    EmbeddingNet idnet{nullptr};

    static CfsmModel create(const Stage1Config& cfg);

    SynthesisOptions options() const { return synth->options(); }
    std::vector<torch::Tensor> generator_parameters() const;
};

SynthesisOptions synthesis_options(const Stage1Config& cfg);
EmbeddingNetOptions identity_net_options(const Stage1Config& cfg);

// Tensor names: "enc.*", "dec.*", "mlp.*", "style.U", "style.mu", "disc.k{0,1,2}.*", "idnet.*".
Checkpoint make_cfsm_checkpoint(const CfsmModel& model, const Stage1Config& cfg, int step, const std::string& rng_state);
CfsmModel cfsm_from_checkpoint(const Checkpoint& ckpt);
CfsmModel load_cfsm(const std::filesystem::path& path);
Stage1Config stage1_config_of(const Checkpoint& ckpt);

struct IdPretrainOptions {
    int steps = 2000;
    int batch_size = 32;
    double lr = 1e-3;
    double arcface_s = 16.0;
    double arcface_m = 0.3;
    uint64_t seed = 0;
};

// Trains an embedding net with the margin loss on labeled images, then freezes it.
EmbeddingNet pretrain_identity_extractor(const Batch& labeled, int num_classes, const EmbeddingNetOptions& opts,
                                         const IdPretrainOptions& train);

struct Stage1Metrics {
    int step = 0;
    double loss_d = 0.0;
    double loss_adv = 0.0;
    double loss_ort = 0.0;
    double loss_id = 0.0;
    double loss_g = 0.0;
    double mean_dissimilarity = 0.0;

    nlohmann::json to_json() const;
};

// One step = sample X (source) and Y (target), draw o per image, synthesize, update D on
// (Y, detached X̂), then update E, G, MLP, U, μ on λ_adv·L_adv + λ_ort·L_ort + λ_id·L_id.
class Stage1Trainer {
public:
    Stage1Trainer(const Stage1Config& cfg, Batch source, Batch target, CfsmModel model);

    Stage1Metrics step();
    int steps_done() const { return step_; }

    CfsmModel& model() { return model_; }
    const Stage1Config& config() const { return cfg_; }
    std::string rng_state() const;
    Checkpoint checkpoint() const { return make_cfsm_checkpoint(model_, cfg_, step_, rng_state()); }

private:
    Stage1Config cfg_;
    CfsmModel model_;
    BatchSampler source_;
    BatchSampler target_;
    Rng rng_;
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    int step_ = 0;
};

struct Stage1Result {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_log;
    std::vector<Stage1Metrics> history;
};

// Full stage-1 run: loads manifests, prepares f (loaded or pre-trained), trains, writes
// out_dir/metrics.jsonl, periodic out_dir/cfsm_step<N>.ckpt and the final out_dir/cfsm.ckpt.
// Throws NumericError naming the step and loss term if any loss becomes non-finite.
Stage1Result train_synthesis(const Stage1Config& cfg, const Manifest& source, const Manifest& target,
                             const std::filesystem::path& out_dir);

// Identity extractor prepared the way train_synthesis does it (file or in-repo pre-training).
EmbeddingNet prepare_identity_extractor(const Stage1Config& cfg, const Manifest& source);

}  // namespace cfsm
