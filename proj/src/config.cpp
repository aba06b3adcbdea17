#include "cfsm/config.hpp"

#include <fstream>
#include <set>

#include "cfsm/errors.hpp"

namespace cfsm {

namespace {

// Reads keys from one JSON object section, rejecting anything not in `known`.
class Section {
public:
    Section(const nlohmann::json& j, std::string name, std::set<std::string> known) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError(name_ + " must be a JSON object");
        for (const auto& [k, v] : j_.items()) {
            if (!known.count(k)) throw ConfigError("unknown config key: " + name_ + "." + k);
        }
    }

    template <typename T>
    void read(const char* key, T& out) const {
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("wrong type for config key: " + name_ + "." + key);
        }
    }

    void read_path(const char* key, std::filesystem::path& out) const {
        std::string s;
        read(key, s);
        if (!s.empty()) out = s;
    }

    bool has(const char* key) const { return j_.contains(key); }
    const nlohmann::json& at(const char* key) const { return j_.at(key); }
    std::string qualified(const char* key) const { return name_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string name_;
};

void require_positive(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid value for " + what);
}

}  // namespace

std::string to_string(AugmentMode mode) {
    switch (mode) {
        case AugmentMode::baseline: return "baseline";
        case AugmentMode::random_style: return "random";
        case AugmentMode::guided: return "guided";
    }
    return "guided";
}

AugmentMode augment_mode_from_string(const std::string& name) {
    if (name == "baseline") return AugmentMode::baseline;
    if (name == "random" || name == "random_style") return AugmentMode::random_style;
    if (name == "guided") return AugmentMode::guided;
    throw ConfigError("unknown mode '" + name + "' (expected baseline|random|guided)");
}

void Stage1Config::validate() const {
    require_positive(steps >= 1, "stage1.steps");
    require_positive(batch_size >= 2, "stage1.batch_size");
    require_positive(lr > 0.0, "stage1.lr");
    require_positive(q >= 1 && q < d, "stage1.q");
    require_positive(image_size % 4 == 0 && image_size > 0, "stage1.image_size");
    require_positive(base_channels >= 1 && disc_channels >= 1 && mlp_hidden >= 1, "stage1 channel widths");
    require_positive(id_pretrain_steps >= 0, "stage1.id_pretrain_steps");
    try {
        weights.validate();
        schedule.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("stage1: ") + e.what());
    }
}

void Stage2Config::validate() const {
    if (labeled.empty()) throw ConfigError("missing required config key: stage2.labeled");
    if (mode != AugmentMode::baseline) {
        if (synthesis_checkpoint.empty()) {
            throw ConfigError("missing required config key: stage2.synthesis_checkpoint (mode " + to_string(mode) + ")");
        }
        require_positive(epsilon > 0.0, "stage2.epsilon");
        require_positive(synth_ratio >= 0.0 && synth_ratio <= 1.0, "stage2.synth_ratio");
    }
    require_positive(steps >= 1, "stage2.steps");
    require_positive(batch_size >= 2, "stage2.batch_size");
    require_positive(lr > 0.0, "stage2.lr");
}

DataConfig data_config_from_json(const nlohmann::json& j) {
    Section s(j, "data", {"image_size", "num_identities", "samples_per_id", "seed", "target_identities",
                          "target_samples_per_id", "target_fraction", "degradation"});
    DataConfig c;
    s.read("image_size", c.image_size);
    s.read("num_identities", c.num_identities);
    s.read("samples_per_id", c.samples_per_id);
    s.read("seed", c.seed);
    s.read("target_identities", c.target_identities);
    s.read("target_samples_per_id", c.target_samples_per_id);
    s.read("target_fraction", c.target_fraction);
    if (s.has("degradation")) c.degradation = s.at("degradation").get<DegradationSpec>();
    return c;
}

Stage1Config stage1_config_from_json(const nlohmann::json& j) {
    Section s(j, "stage1",
              {"source", "target", "steps", "batch_size", "lr", "adam_betas", "lambda_adv", "lambda_ort", "lambda_id",
               "l_a", "u_a", "l_m", "u_m", "q", "d", "image_size", "seed", "checkpoint_every", "base_channels",
               "disc_channels", "mlp_hidden", "identity_extractor", "id_pretrain_steps", "id_lr", "embedding_dim",
               "fr_channels", "arcface_s", "arcface_m", "prefetch", "verify_update_discipline"});
    Stage1Config c;
    s.read_path("source", c.source);
    s.read_path("target", c.target);
    s.read("steps", c.steps);
    s.read("batch_size", c.batch_size);
    s.read("lr", c.lr);
    s.read("adam_betas", c.adam_betas);
    s.read("lambda_adv", c.weights.lambda_adv);
    s.read("lambda_ort", c.weights.lambda_ort);
    s.read("lambda_id", c.weights.lambda_id);
    s.read("l_a", c.schedule.l_a);
    s.read("u_a", c.schedule.u_a);
    s.read("l_m", c.schedule.l_m);
    s.read("u_m", c.schedule.u_m);
    s.read("q", c.q);
    s.read("d", c.d);
    s.read("image_size", c.image_size);
    s.read("seed", c.seed);
    s.read("checkpoint_every", c.checkpoint_every);
    s.read("base_channels", c.base_channels);
    s.read("disc_channels", c.disc_channels);
    s.read("mlp_hidden", c.mlp_hidden);
    s.read_path("identity_extractor", c.identity_extractor);
    s.read("id_pretrain_steps", c.id_pretrain_steps);
    s.read("id_lr", c.id_lr);
    s.read("embedding_dim", c.embedding_dim);
    s.read("fr_channels", c.fr_channels);
    s.read("arcface_s", c.arcface_s);
    s.read("arcface_m", c.arcface_m);
    s.read("prefetch", c.prefetch);
    s.read("verify_update_discipline", c.verify_update_discipline);
    return c;
}

Stage2Config stage2_config_from_json(const nlohmann::json& j) {
    Section s(j, "stage2",
              {"labeled", "mode", "epsilon", "synth_ratio", "steps", "batch_size", "lr", "adam_betas", "arcface_s",
               "arcface_m", "embedding_dim", "fr_channels", "seed", "synthesis_checkpoint", "record_perturbations",
               "prefetch"});
    Stage2Config c;
    s.read_path("labeled", c.labeled);
    if (s.has("mode")) {
        std::string mode;
        s.read("mode", mode);
        c.mode = augment_mode_from_string(mode);
    }
    s.read("epsilon", c.epsilon);
    s.read("synth_ratio", c.synth_ratio);
    s.read("steps", c.steps);
    s.read("batch_size", c.batch_size);
    s.read("lr", c.lr);
    s.read("adam_betas", c.adam_betas);
    s.read("arcface_s", c.arcface_s);
    s.read("arcface_m", c.arcface_m);
    s.read("embedding_dim", c.embedding_dim);
    s.read("fr_channels", c.fr_channels);
    s.read("seed", c.seed);
    s.read_path("synthesis_checkpoint", c.synthesis_checkpoint);
    s.read("record_perturbations", c.record_perturbations);
    s.read("prefetch", c.prefetch);
    return c;
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
    Section s(j, "eval", {"fr_checkpoint", "gallery", "probe", "degradation", "seed", "ks", "fars"});
    EvalConfig c;
    s.read_path("fr_checkpoint", c.fr_checkpoint);
    s.read_path("gallery", c.gallery);
    s.read_path("probe", c.probe);
    if (s.has("degradation") && !s.at("degradation").is_null()) c.degradation = s.at("degradation").get<DegradationSpec>();
    s.read("seed", c.seed);
    s.read("ks", c.ks);
    s.read("fars", c.fars);
    return c;
}

Config parse_config(const nlohmann::json& doc) {
    Section top(doc, "config", {"data", "stage1", "stage2", "eval"});
    Config c;
    c.raw = doc;
    static const nlohmann::json empty = nlohmann::json::object();
    c.data = data_config_from_json(doc.contains("data") ? doc.at("data") : empty);
    c.stage1 = stage1_config_from_json(doc.contains("stage1") ? doc.at("stage1") : empty);
    c.stage2 = stage2_config_from_json(doc.contains("stage2") ? doc.at("stage2") : empty);
    c.eval = eval_config_from_json(doc.contains("eval") ? doc.at("eval") : empty);
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    // Relative paths inside the config resolve against the config's directory.
    const auto base = std::filesystem::absolute(path).parent_path();
    auto resolve = [&](const char* section, const char* key) {
        if (doc.contains(section) && doc[section].is_object() && doc[section].contains(key) &&
            doc[section][key].is_string()) {
            std::filesystem::path p = doc[section][key].get<std::string>();
            if (!p.empty() && p.is_relative()) doc[section][key] = (base / p).lexically_normal().string();
        }
    };
    for (const char* key : {"source", "target", "identity_extractor"}) resolve("stage1", key);
    for (const char* key : {"labeled", "synthesis_checkpoint"}) resolve("stage2", key);
    for (const char* key : {"fr_checkpoint", "gallery", "probe"}) resolve("eval", key);
    return parse_config(doc);
}

nlohmann::json to_json(const DataConfig& c) {
    return {{"image_size", c.image_size},
            {"num_identities", c.num_identities},
            {"samples_per_id", c.samples_per_id},
            {"seed", c.seed},
            {"target_identities", c.target_identities},
            {"target_samples_per_id", c.target_samples_per_id},
            {"target_fraction", c.target_fraction},
            {"degradation", c.degradation}};
}

nlohmann::json to_json(const Stage1Config& c) {
    return {{"source", c.source.string()},
            {"target", c.target.string()},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"adam_betas", c.adam_betas},
            {"lambda_adv", c.weights.lambda_adv},
            {"lambda_ort", c.weights.lambda_ort},
            {"lambda_id", c.weights.lambda_id},
            {"l_a", c.schedule.l_a},
            {"u_a", c.schedule.u_a},
            {"l_m", c.schedule.l_m},
            {"u_m", c.schedule.u_m},
            {"q", c.q},
            {"d", c.d},
            {"image_size", c.image_size},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"base_channels", c.base_channels},
            {"disc_channels", c.disc_channels},
            {"mlp_hidden", c.mlp_hidden},
            {"identity_extractor", c.identity_extractor.string()},
            {"id_pretrain_steps", c.id_pretrain_steps},
            {"id_lr", c.id_lr},
            {"embedding_dim", c.embedding_dim},
            {"fr_channels", c.fr_channels},
            {"arcface_s", c.arcface_s},
            {"arcface_m", c.arcface_m},
            {"prefetch", c.prefetch},
            {"verify_update_discipline", c.verify_update_discipline}};
}

nlohmann::json to_json(const Stage2Config& c) {
    return {{"labeled", c.labeled.string()},
            {"mode", to_string(c.mode)},
            {"epsilon", c.epsilon},
            {"synth_ratio", c.synth_ratio},
            {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"adam_betas", c.adam_betas},
            {"arcface_s", c.arcface_s},
            {"arcface_m", c.arcface_m},
            {"embedding_dim", c.embedding_dim},
            {"fr_channels", c.fr_channels},
            {"seed", c.seed},
            {"synthesis_checkpoint", c.synthesis_checkpoint.string()},
            {"record_perturbations", c.record_perturbations},
            {"prefetch", c.prefetch}};
}

nlohmann::json to_json(const EvalConfig& c) {
    nlohmann::json j{{"fr_checkpoint", c.fr_checkpoint.string()},
                     {"gallery", c.gallery.string()},
                     {"probe", c.probe.string()},
                     {"seed", c.seed},
                     {"ks", c.ks},
                     {"fars", c.fars}};
    j["degradation"] = c.degradation ? nlohmann::json(*c.degradation) : nlohmann::json(nullptr);
    return j;
}

}  // namespace cfsm
