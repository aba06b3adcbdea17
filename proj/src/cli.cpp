#include "cfsm/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "cfsm/config.hpp"
#include "cfsm/dataset_similarity.hpp"
#include "cfsm/errors.hpp"
#include "cfsm/eval_metrics.hpp"
#include "cfsm/guided_augment.hpp"
#include "cfsm/trainer_stage1.hpp"
#include "cfsm/trainer_stage2.hpp"
#include "cfsm/traversal.hpp"

namespace cfsm {

namespace {

namespace fs = std::filesystem;

struct Globals {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out = "out";
};

Config resolve_config(const Globals& g) {
    Config cfg = g.config_path.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config_path);
    if (g.seed) {
        cfg.data.seed = *g.seed;
        cfg.stage1.seed = *g.seed;
        cfg.stage2.seed = *g.seed;
        cfg.eval.seed = *g.seed;
    }
    return cfg;
}

void record_config(const fs::path& out_dir, const Config& cfg, const nlohmann::json& extra = {}) {
    fs::create_directories(out_dir);
    nlohmann::json doc{{"data", to_json(cfg.data)},
                       {"stage1", to_json(cfg.stage1)},
                       {"stage2", to_json(cfg.stage2)},
                       {"eval", to_json(cfg.eval)}};
    if (!extra.is_null()) doc["command"] = extra;
    std::ofstream os(out_dir / "config.json");
    if (!os) throw IoError("cannot write " + (out_dir / "config.json").string());
    os << doc.dump(2) << '\n';
}

// Gallery/probe manifests may be whole toy datasets; use their test splits when present.
Manifest split_or_all(const Manifest& m, Split split) {
    auto sub = m.subset(split);
    return sub.records.empty() ? m : sub;
}

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> names;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            names.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty() || !names.empty()) names.push_back(cur);
    return names;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Controllable face synthesis on a toy glyph dataset"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON config with sections data, stage1, stage2, eval");
    app.add_option("--seed", g.seed, "Overrides the seed of every section");
    app.add_option("--out", g.out, "Output directory");

    auto* make_data = app.add_subcommand("make-data", "Render the labeled toy set and the degraded target set");

    auto* train_cfsm_cmd = app.add_subcommand("train-cfsm", "Stage 1: train the synthesis model and style subspace");

    auto* train_fr_cmd = app.add_subcommand("train-fr", "Stage 2: train the recognition model");
    std::string mode;
    train_fr_cmd->add_option("--mode", mode, "baseline|random|guided");
    bool record = false;
    train_fr_cmd->add_flag("--record-perturbations", record, "Store o and o* for every guided sample");

    auto* synth = app.add_subcommand("synthesize", "Render a basis traversal or magnitude sweep");
    std::string synth_ckpt, synth_image, synth_mode = "basis";
    TraversalOptions topts;
    synth->add_option("--checkpoint", synth_ckpt, "Stage-1 checkpoint")->required();
    synth->add_option("--image", synth_image, "Input PNG")->required();
    synth->add_option("--mode", synth_mode, "Basis traversal or magnitude sweep")->check(CLI::IsMember({"basis", "magnitude"}));
    synth->add_option("--basis", topts.basis_index, "Basis index i for the traversal");
    synth->add_option("--rows", topts.rows, "Rows of the output grid");
    synth->add_option("--sigma-steps", topts.sigma_steps, "Columns over [-3, 3] sigma");
    synth->add_option("--magnitude", topts.base_magnitude, "Magnitude mode: a before scaling");

    auto* sim = app.add_subcommand("similarity", "Pairwise style-subspace similarity between stage-1 checkpoints");
    std::vector<std::string> sim_ckpts;
    std::string sim_names;
    bool best_perm = false;
    sim->add_option("checkpoints", sim_ckpts, "Stage-1 checkpoints (two or more)")->required()->expected(2, -1);
    sim->add_option("--names", sim_names, "Comma-separated labels (default: file stems)");
    sim->add_flag("--best-permutation", best_perm, "Diagnostic: best basis pairing instead of index pairing");

    auto* eval = app.add_subcommand("eval", "Rank-k and TAR@FAR on gallery/probe manifests");
    std::string eval_ckpt;
    bool degrade = false;
    eval->add_option("--checkpoint", eval_ckpt, "Recognition checkpoint (default: eval.fr_checkpoint)");
    eval->add_flag("--degrade-probes", degrade, "Degrade probes with data.degradation when eval has none");

    auto* analyze = app.add_subcommand("analyze-perturbations", "Histograms of guided perturbation records");
    std::string records_path;
    analyze->add_option("records", records_path, "perturbations.jsonl from train-fr")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    torch::set_num_threads(1);
    const fs::path out_dir = g.out;
    try {
        Config cfg = resolve_config(g);
        if (make_data->parsed()) {
            cfg.data.degradation.validate();
            record_config(out_dir, cfg, {{"subcommand", "make-data"}});
            const auto& d = cfg.data;
            auto source = generate_toy_dataset(d.num_identities, d.samples_per_id, d.image_size, d.seed, out_dir / "source");
            auto raw = generate_toy_dataset(d.target_identities, d.target_samples_per_id, d.image_size, d.seed,
                                            out_dir / "target_clean", d.num_identities);
            auto target = build_target_set(raw, d.degradation, d.target_fraction, d.seed, out_dir / "target");
            out << "source: " << source.size() << " images, target: " << target.size() << " images\n";
        } else if (train_cfsm_cmd->parsed()) {
            if (cfg.stage1.source.empty()) throw ConfigError("missing required config key: stage1.source");
            if (cfg.stage1.target.empty()) throw ConfigError("missing required config key: stage1.target");
            cfg.stage1.validate();
            record_config(out_dir, cfg, {{"subcommand", "train-cfsm"}});
            auto r = train_synthesis(cfg.stage1, read_manifest(cfg.stage1.source), read_manifest(cfg.stage1.target),
                                     out_dir);
            out << "checkpoint: " << r.checkpoint.string() << '\n';
        } else if (train_fr_cmd->parsed()) {
            if (!mode.empty()) cfg.stage2.mode = augment_mode_from_string(mode);
            if (record) cfg.stage2.record_perturbations = true;
            cfg.stage2.validate();
            record_config(out_dir, cfg, {{"subcommand", "train-fr"}, {"mode", to_string(cfg.stage2.mode)}});
            auto r = train_fr(cfg.stage2, read_manifest(cfg.stage2.labeled), out_dir);
            out << "checkpoint: " << r.checkpoint.string() << '\n';
        } else if (synth->parsed()) {
            topts.mode = synth_mode == "magnitude" ? TraversalMode::magnitude : TraversalMode::basis;
            topts.seed = cfg.stage1.seed;
            record_config(out_dir, cfg,
                          {{"subcommand", "synthesize"}, {"checkpoint", synth_ckpt}, {"image", synth_image},
                           {"mode", synth_mode}, {"basis", topts.basis_index}, {"rows", topts.rows},
                           {"sigma_steps", topts.sigma_steps}, {"magnitude", topts.base_magnitude}});
            auto t = render_traversal(synth_ckpt, synth_image, topts);
            write_png(out_dir / "traversal.png", t.grid);
            out << "wrote " << (out_dir / "traversal.png").string() << '\n';
        } else if (sim->parsed()) {
            std::vector<std::string> names = sim_names.empty() ? std::vector<std::string>{} : split_names(sim_names);
            if (names.empty()) {
                for (const auto& p : sim_ckpts) names.push_back(fs::path(p).stem().string());
            }
            if (names.size() != sim_ckpts.size()) {
                throw ConfigError("--names has " + std::to_string(names.size()) + " labels for " +
                                  std::to_string(sim_ckpts.size()) + " checkpoints");
            }
            record_config(out_dir, cfg, {{"subcommand", "similarity"}, {"checkpoints", sim_ckpts}, {"names", names},
                                         {"best_permutation", best_perm}});
            std::vector<fs::path> paths(sim_ckpts.begin(), sim_ckpts.end());
            auto m = similarity_matrix(paths, names, best_perm);
            write_similarity_csv(out_dir / "similarity.csv", m);
            write_png(out_dir / "similarity.png", similarity_image(m));
            for (size_t i = 0; i < m.size(); ++i) {
                out << m.names[i];
                for (double v : m.S[i]) out << ' ' << v;
                out << '\n';
            }
        } else if (eval->parsed()) {
            if (!eval_ckpt.empty()) cfg.eval.fr_checkpoint = eval_ckpt;
            if (degrade && !cfg.eval.degradation) cfg.eval.degradation = cfg.data.degradation;
            if (cfg.eval.fr_checkpoint.empty()) throw ConfigError("missing required config key: eval.fr_checkpoint");
            if (cfg.eval.gallery.empty()) throw ConfigError("missing required config key: eval.gallery");
            if (cfg.eval.probe.empty()) throw ConfigError("missing required config key: eval.probe");
            record_config(out_dir, cfg, {{"subcommand", "eval"}});
            auto report = evaluate(cfg.eval.fr_checkpoint, split_or_all(read_manifest(cfg.eval.gallery), Split::test_gallery),
                                   split_or_all(read_manifest(cfg.eval.probe), Split::test_probe), cfg.eval.degradation,
                                   cfg.eval.seed, cfg.eval.ks, cfg.eval.fars);
            std::ofstream os(out_dir / "report.json");
            os << report.to_json().dump(2) << '\n';
            out << report.to_json().dump() << '\n';
        } else if (analyze->parsed()) {
            record_config(out_dir, cfg, {{"subcommand", "analyze-perturbations"}, {"records", records_path}});
            auto records = read_perturbation_records(records_path);
            auto summary = analyze_perturbations(records);
            write_histogram_csv(out_dir / "cos_sim_hist.csv", summary.cos_sim);
            write_histogram_csv(out_dir / "magnitude_delta_hist.csv", summary.magnitude_delta);
            write_perturbation_csv(out_dir / "scatter.csv", records);
            out << records.size() << " records\n";
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace cfsm
