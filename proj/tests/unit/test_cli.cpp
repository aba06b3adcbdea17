#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cfsm/checkpoint.hpp"
#include "cfsm/cli.hpp"
#include "cfsm/style_subspace.hpp"
#include "helpers.hpp"

using namespace cfsm;
using testing::TempDir;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "cfsm");
    std::vector<const char*> argv;
    for (auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("unknown subcommand prints usage and exits 2") {
    auto r = run({"frobnicate"});
    CHECK(r.code == 2);
    CHECK(run({}).code == 2);
}

TEST_CASE("config errors exit 2 and name the key") {
    TempDir tmp("cli_cfg");
    std::ofstream(tmp / "c.json") << R"({"stage1": {"source": "s.jsonl"}})";
    auto r = run({"--config", (tmp / "c.json").string(), "--out", (tmp / "o").string(), "train-cfsm"});
    CHECK(r.code == 2);
    CHECK(r.err.find("stage1.target") != std::string::npos);

    std::ofstream(tmp / "typo.json") << R"({"stage2": {"epsilom": 0.1}})";
    auto t = run({"--config", (tmp / "typo.json").string(), "train-fr"});
    CHECK(t.code == 2);
    CHECK(t.err.find("stage2.epsilom") != std::string::npos);
}

TEST_CASE("runtime failures exit 1") {
    TempDir tmp("cli_rt");
    auto r = run({"--out", tmp.path.string(), "analyze-perturbations", (tmp / "missing.jsonl").string()});
    CHECK(r.code == 1);
}

TEST_CASE("similarity writes csv and png and records its config") {
    TempDir tmp("cli_sim");
    for (const char* n : {"a", "b"}) {
        StyleSubspace s(8, 3);
        Checkpoint c;
        c.add("style.U", s->U);
        c.add("style.mu", s->mu);
        save_checkpoint(tmp / (std::string(n) + ".ckpt"), c);
    }
    auto r = run({"--out", (tmp / "out").string(), "similarity", (tmp / "a.ckpt").string(), (tmp / "b.ckpt").string(),
                  "--names", "A,B"});
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(tmp / "out" / "similarity.csv"));
    CHECK(std::filesystem::exists(tmp / "out" / "similarity.png"));
    CHECK(slurp(tmp / "out" / "similarity.csv").rfind(",A,B\n", 0) == 0);
    auto cfg = nlohmann::json::parse(slurp(tmp / "out" / "config.json"));
    CHECK(cfg["command"]["names"] == nlohmann::json::array({"A", "B"}));

    auto bad = run({"--out", (tmp / "out2").string(), "similarity", (tmp / "a.ckpt").string(),
                    (tmp / "b.ckpt").string(), "--names", "A"});
    CHECK(bad.code == 2);
}

TEST_CASE("make-data honors --seed and is reproducible") {
    TempDir tmp("cli_data");
    std::ofstream(tmp / "c.json")
        << R"({"data": {"num_identities": 3, "samples_per_id": 3, "target_identities": 2, "target_samples_per_id": 2,
                       "degradation": {"noise_std_range": [0.05, 0.05], "apply_probabilities": {"noise": 1.0}}}})";
    for (const char* o : {"a", "b"}) {
        auto r = run({"--config", (tmp / "c.json").string(), "--seed", "5", "--out", (tmp / o).string(), "make-data"});
        REQUIRE(r.code == 0);
    }
    CHECK(nlohmann::json::parse(slurp(tmp / "a" / "config.json"))["data"]["seed"] == 5);
    CHECK(slurp(tmp / "a" / "source" / "manifest.jsonl") == slurp(tmp / "b" / "source" / "manifest.jsonl"));
    CHECK(file_hash(tmp / "a" / "target" / "target_00000.png") == file_hash(tmp / "b" / "target" / "target_00000.png"));
}
