#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "cfsm/checkpoint.hpp"
#include "cfsm/config.hpp"
#include "cfsm/fr_model.hpp"
#include "cfsm/guided_augment.hpp"
#include "cfsm/trainer_stage1.hpp"

namespace cfsm {

// FR checkpoint tensors: "net.*" (embedding network) and "head.W".
Checkpoint make_fr_checkpoint(const FRModel& fr, const Stage2Config& cfg, int step, const std::string& rng_state);
FRModel fr_from_checkpoint(const Checkpoint& ckpt);
FRModel load_fr(const std::filesystem::path& path);

struct Stage2Metrics {
    int step = 0;
    double loss_cla = 0.0;
    int synthetic_count = 0;
    double mean_delta_linf = 0.0;  // guided only

    nlohmann::json to_json() const;
};

// Recognition training on (optionally) synthesis-augmented batches. The synthesis model and
// subspace are frozen for the whole run.
class Stage2Trainer {
public:
    // `synthesis` is required unless cfg.mode == baseline.
    Stage2Trainer(const Stage2Config& cfg, Batch labeled, int num_classes, std::optional<CfsmModel> synthesis);

    Stage2Metrics step();
    int steps_done() const { return step_; }

    FRModel& fr() { return fr_; }
    const Stage2Config& config() const { return cfg_; }
    const std::vector<PerturbationRecord>& perturbations() const { return records_; }
    std::string rng_state() const;
    Checkpoint checkpoint() const { return make_fr_checkpoint(fr_, cfg_, step_, rng_state()); }

private:
    Stage2Config cfg_;
    FRModel fr_;
    std::optional<CfsmModel> synthesis_;
    BatchSampler sampler_;
    Rng rng_;
    std::unique_ptr<torch::optim::Adam> opt_;
    std::vector<PerturbationRecord> records_;
    int step_ = 0;
};

struct Stage2Result {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_log;
    std::filesystem::path perturbations;  // empty unless recorded
    std::vector<Stage2Metrics> history;
};

// Writes out_dir/metrics.jsonl (first line: run header with mode, epsilon, synth_ratio),
// out_dir/fr.ckpt and, when recording, out_dir/perturbations.jsonl + .csv.
// Throws std::logic_error if the synthesis parameters change during the run.
Stage2Result train_fr(const Stage2Config& cfg, const Manifest& labeled, const std::filesystem::path& out_dir);

}  // namespace cfsm
