#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfsm/data_pipeline.hpp"
#include "cfsm/objectives.hpp"
#include "cfsm/style_subspace.hpp"

namespace cfsm {

struct DataConfig {
    int image_size = 32;
    int num_identities = 50;
    int samples_per_id = 10;
    uint64_t seed = 0;
    // Unlabeled target pool: rendered from identities disjoint from the labeled set, then degraded.
    int target_identities = 50;
    int target_samples_per_id = 10;
    double target_fraction = 1.0;
    DegradationSpec degradation;
};

struct Stage1Config {
    std::filesystem::path source;  // labeled manifest
    std::filesystem::path target;  // unlabeled manifest
    int steps = 3000;
    int batch_size = 16;
    double lr = 1e-4;
    std::array<double, 2> adam_betas{0.5, 0.99};
    LossWeights weights;
    MagnitudeSchedule schedule;
    int q = 10;
    int d = 128;
    int image_size = 32;
    uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: final checkpoint only
    int base_channels = 64;
    int disc_channels = 64;
    int mlp_hidden = 256;
    // Frozen identity extractor: loaded from `identity_extractor` when set, else pre-trained in-repo.
    std::filesystem::path identity_extractor;
    int id_pretrain_steps = 2000;
    double id_lr = 1e-3;
    int embedding_dim = 128;
    int fr_channels = 32;
    double arcface_s = 16.0;
    double arcface_m = 0.3;
    bool prefetch = false;
    bool verify_update_discipline = false;

    void validate() const;
};

enum class AugmentMode { baseline, random_style, guided };
std::string to_string(AugmentMode mode);
AugmentMode augment_mode_from_string(const std::string& name);

struct Stage2Config {
    std::filesystem::path labeled;
    AugmentMode mode = AugmentMode::guided;
    double epsilon = 0.314;
    double synth_ratio = 0.5;
    int steps = 3000;
    int batch_size = 32;
    double lr = 1e-4;
    std::array<double, 2> adam_betas{0.5, 0.99};
    double arcface_s = 16.0;
    double arcface_m = 0.3;
    int embedding_dim = 128;
    int fr_channels = 32;
    uint64_t seed = 0;
    std::filesystem::path synthesis_checkpoint;
    bool record_perturbations = false;
    bool prefetch = false;

    void validate() const;
};

struct EvalConfig {
    std::filesystem::path fr_checkpoint;
    std::filesystem::path gallery;
    std::filesystem::path probe;
    std::optional<DegradationSpec> degradation;
    uint64_t seed = 0;
    std::vector<int> ks{1, 5};
    std::vector<double> fars{1e-1, 1e-2};
};

struct Config {
    DataConfig data;
    Stage1Config stage1;
    Stage2Config stage2;
    EvalConfig eval;
    nlohmann::json raw = nlohmann::json::object();  // resolved document as read
};

// Fail-closed parse: unknown keys and wrong types are ConfigError naming "section.key".
Config parse_config(const nlohmann::json& doc);
Config load_config(const std::filesystem::path& path);

nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const Stage1Config& c);
nlohmann::json to_json(const Stage2Config& c);
nlohmann::json to_json(const EvalConfig& c);

DataConfig data_config_from_json(const nlohmann::json& j);
Stage1Config stage1_config_from_json(const nlohmann::json& j);
Stage2Config stage2_config_from_json(const nlohmann::json& j);
EvalConfig eval_config_from_json(const nlohmann::json& j);

}  // namespace cfsm
