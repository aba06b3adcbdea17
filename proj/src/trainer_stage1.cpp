#include "cfsm/trainer_stage1.hpp"

#include <cmath>
#include <sstream>

#include "cfsm/errors.hpp"
#include "cfsm/objectives.hpp"

namespace cfsm {

namespace {

void check_finite(double value, const char* term, int step) {
    if (!std::isfinite(value)) {
        throw NumericError("non-finite " + std::string(term) + " at step " + std::to_string(step));
    }
}

void set_requires_grad(torch::nn::Module& module, bool on) {
    for (auto& p : module.parameters()) p.set_requires_grad(on);
}

int64_t num_classes_of(const Batch& labeled) { return labeled.labels.max().item<int64_t>() + 1; }

}  // namespace

SynthesisOptions synthesis_options(const Stage1Config& cfg) {
    SynthesisOptions o;
    o.base_channels = cfg.base_channels;
    o.style_dim = cfg.d;
    o.mlp_hidden = cfg.mlp_hidden;
    o.disc_channels = cfg.disc_channels;
    return o;
}

EmbeddingNetOptions identity_net_options(const Stage1Config& cfg) {
    EmbeddingNetOptions o;
    o.base_channels = cfg.fr_channels;
    o.embedding_dim = cfg.embedding_dim;
    return o;
}

CfsmModel CfsmModel::create(const Stage1Config& cfg) {
    const auto opts = synthesis_options(cfg);
    CfsmModel m;
    m.synth = SynthesisModel(opts);
    m.style = StyleSubspace(cfg.d, cfg.q);
    m.disc = MultiScaleDiscriminator(opts);
    m.idnet = EmbeddingNet(identity_net_options(cfg));
    freeze(*m.idnet);
    return m;
}

std::vector<torch::Tensor> CfsmModel::generator_parameters() const {
    auto params = synth->parameters();
    for (auto& p : style->parameters()) params.push_back(p);
    return params;
}

Checkpoint make_cfsm_checkpoint(const CfsmModel& model, const Stage1Config& cfg, int step, const std::string& rng_state) {
    Checkpoint ckpt;
    const auto config = to_json(cfg);
    const auto dumped = config.dump();
    ckpt.metadata = {{"kind", "cfsm"},
                     {"config", config},
                     {"config_hash", hex64(fnv1a64(dumped.data(), dumped.size()))},
                     {"step", step},
                     {"rng_state", rng_state}};
    ckpt.add_module("", *model.synth);
    ckpt.add_module("style.", *model.style);
    ckpt.add_module("disc.", *model.disc);
    ckpt.add_module("idnet.", *model.idnet);
    return ckpt;
}

Stage1Config stage1_config_of(const Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "cfsm") throw CheckpointError("not a synthesis-model checkpoint");
    return stage1_config_from_json(ckpt.metadata.at("config"));
}

CfsmModel cfsm_from_checkpoint(const Checkpoint& ckpt) {
    const auto cfg = stage1_config_of(ckpt);
    CfsmModel m = CfsmModel::create(cfg);
    ckpt.load_module("", *m.synth);
    ckpt.load_module("style.", *m.style);
    ckpt.load_module("disc.", *m.disc);
    ckpt.load_module("idnet.", *m.idnet);
    freeze(*m.idnet);
    return m;
}

CfsmModel load_cfsm(const std::filesystem::path& path) { return cfsm_from_checkpoint(load_checkpoint(path)); }

EmbeddingNet pretrain_identity_extractor(const Batch& labeled, int num_classes, const EmbeddingNetOptions& opts,
                                         const IdPretrainOptions& train) {
    torch::manual_seed(train.seed);
    FRModel fr(opts, num_classes, train.arcface_s, train.arcface_m);
    fr.net->train();
    torch::optim::Adam opt(fr.parameters(), torch::optim::AdamOptions(train.lr));
    BatchSampler sampler(labeled, train.batch_size, train.seed ^ 0x1D5EEDULL);
    for (int s = 0; s < train.steps; ++s) {
        auto batch = sampler.next();
        opt.zero_grad();
        auto loss = margin_classification_loss(fr.net->forward(batch.images), fr.head, batch.labels).loss;
        loss.backward();
        opt.step();
    }
    freeze(*fr.net);
    return fr.net;
}

EmbeddingNet prepare_identity_extractor(const Stage1Config& cfg, const Manifest& source) {
    if (!cfg.identity_extractor.empty()) {
        const auto ckpt = load_checkpoint(cfg.identity_extractor);
        const auto& meta = ckpt.metadata;
        EmbeddingNetOptions opts;
        std::string prefix;
        if (meta.value("kind", "") == "fr") {
            opts.embedding_dim = meta.at("config").at("embedding_dim").get<int64_t>();
            opts.base_channels = meta.at("config").at("fr_channels").get<int64_t>();
            prefix = "net.";
        } else if (meta.value("kind", "") == "cfsm") {
            opts = identity_net_options(stage1_config_of(ckpt));
            prefix = "idnet.";
        } else {
            throw CheckpointError("identity_extractor must be an FR or synthesis checkpoint");
        }
        EmbeddingNet net(opts);
        ckpt.load_module(prefix, *net);
        freeze(*net);
        return net;
    }
    const Batch labeled = load_all(source.subset(Split::train));
    IdPretrainOptions train;
    train.steps = cfg.id_pretrain_steps;
    train.lr = cfg.id_lr;
    train.arcface_s = cfg.arcface_s;
    train.arcface_m = cfg.arcface_m;
    train.seed = cfg.seed;
    return pretrain_identity_extractor(labeled, static_cast<int>(num_classes_of(labeled)),
                                       identity_net_options(cfg), train);
}

nlohmann::json Stage1Metrics::to_json() const {
    return {{"step", step},         {"loss_d", loss_d},   {"loss_adv", loss_adv},
            {"loss_ort", loss_ort}, {"loss_id", loss_id}, {"loss_g", loss_g},
            {"mean_dissimilarity", mean_dissimilarity}};
}

Stage1Trainer::Stage1Trainer(const Stage1Config& cfg, Batch source, Batch target, CfsmModel model)
    : cfg_(cfg),
      model_(std::move(model)),
      source_(std::move(source), cfg.batch_size, cfg.seed * 4 + 1, cfg.prefetch),
      target_(std::move(target), cfg.batch_size, cfg.seed * 4 + 2, cfg.prefetch),
      rng_(cfg.seed * 4 + 3) {
    const auto adam = torch::optim::AdamOptions(cfg.lr).betas({cfg.adam_betas[0], cfg.adam_betas[1]});
    opt_g_ = std::make_unique<torch::optim::Adam>(model_.generator_parameters(), adam);
    opt_d_ = std::make_unique<torch::optim::Adam>(model_.disc->parameters(), adam);
    freeze(*model_.idnet);
    model_.synth->train();
    model_.disc->train();
}

std::string Stage1Trainer::rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
}

Stage1Metrics Stage1Trainer::step() {
    auto& m = model_;
    const auto x = source_.next().images;
    const auto y = target_.next().images;
    const auto o = sample_coefficients(rng_, x.size(0), cfg_.q);

    auto fake = synthesize(m.synth, m.style, x, o);

    // Discriminator: real target images vs. detached synthesis.
    opt_d_->zero_grad();
    auto loss_d = discriminator_loss(m.disc->forward(y), m.disc->forward(fake.detach()));
    loss_d.backward();
    opt_d_->step();

    // Generator side. D is only evaluated here, so its parameters are taken out of autograd.
    const uint64_t disc_hash = cfg_.verify_update_discipline ? parameter_hash(*m.disc) : 0;
    set_requires_grad(*m.disc, false);
    opt_g_->zero_grad();
    auto adv = generator_adv_loss(m.disc->forward(fake));
    auto ort = orthogonality_loss(m.style->U);
    torch::Tensor emb_real;
    {
        torch::NoGradGuard no_grad;
        emb_real = m.idnet->forward(x);
    }
    auto emb_fake = m.idnet->forward(fake);
    auto magnitude = o.norm(2, 1);
    auto id = identity_loss(emb_real, emb_fake, magnitude, cfg_.schedule);
    auto total = total_generator_loss(adv, ort, id, cfg_.weights);

    Stage1Metrics metrics;
    metrics.step = step_;
    metrics.loss_d = loss_d.item<double>();
    metrics.loss_adv = adv.item<double>();
    metrics.loss_ort = ort.item<double>();
    metrics.loss_id = id.item<double>();
    metrics.loss_g = total.item<double>();
    check_finite(metrics.loss_d, "loss_d", step_);
    check_finite(metrics.loss_adv, "loss_adv", step_);
    check_finite(metrics.loss_ort, "loss_ort", step_);
    check_finite(metrics.loss_id, "loss_id", step_);

    total.backward();
    opt_g_->step();
    set_requires_grad(*m.disc, true);
    if (cfg_.verify_update_discipline && parameter_hash(*m.disc) != disc_hash) {
        throw std::logic_error("generator update modified discriminator parameters");
    }
    {
        torch::NoGradGuard no_grad;
        metrics.mean_dissimilarity = cosine_dissimilarity(emb_real, emb_fake.detach()).mean().item<double>();
    }
    ++step_;
    return metrics;
}

Stage1Result train_synthesis(const Stage1Config& config, const Manifest& source, const Manifest& target,
                             const std::filesystem::path& out_dir) {
    config.validate();
    if (!target.unlabeled()) throw ArgumentError("stage-1 target manifest must be unlabeled");
    if (source.unlabeled()) throw ArgumentError("stage-1 source manifest must be labeled");
    std::filesystem::create_directories(out_dir);

    Stage1Config cfg = config;
    EmbeddingNet idnet = prepare_identity_extractor(cfg, source);
    cfg.embedding_dim = static_cast<int>(idnet->options().embedding_dim);
    cfg.fr_channels = static_cast<int>(idnet->options().base_channels);

    torch::manual_seed(cfg.seed);
    CfsmModel model = CfsmModel::create(cfg);
    model.idnet = idnet;

    Stage1Trainer trainer(cfg, load_all(source.subset(Split::train)), load_all(target), model);
    Stage1Result result;
    result.metrics_log = out_dir / "metrics.jsonl";
    MetricsLog log(result.metrics_log);
    for (int s = 0; s < cfg.steps; ++s) {
        const auto metrics = trainer.step();
        log.write(metrics.to_json());
        result.history.push_back(metrics);
        if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 &&
            trainer.steps_done() < cfg.steps) {
            save_checkpoint(out_dir / ("cfsm_step" + std::to_string(trainer.steps_done()) + ".ckpt"),
                            trainer.checkpoint());
        }
    }
    result.checkpoint = out_dir / "cfsm.ckpt";
    save_checkpoint(result.checkpoint, trainer.checkpoint());
    return result;
}

}  // namespace cfsm
