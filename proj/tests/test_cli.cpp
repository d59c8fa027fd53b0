#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rffi/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(std::initializer_list<std::string> args) {
    std::vector<const char*> argv{"rffi"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return rffi::cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

struct CliFixture {
    fs::path root;
    CliFixture() : root(fs::temp_directory_path() / "rffi_cli_fixture") {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~CliFixture() { fs::remove_all(root); }

    std::string write_config(const json& j, const std::string& name) const {
        const std::string p = (root / name).string();
        std::ofstream os(p);
        os << j.dump(2);
        return p;
    }

    json base_config() const {
        return json{{"chirp", {{"preamble_count", 2}}},
                    {"gen",
                     {{"out", (root / "corpus").string()},
                      {"devices", {{"count", 3}, {"seed", 31}, {"spread", 1.0}}},
                      {"receivers", {{"count", 2}, {"seed", 32}, {"use", json::array({0})}}},
                      {"packets_per_pair", 6},
                      {"condition", {{"tag", "clean"}, {"snr_db", 60.0}}},
                      {"seed", 5}}}};
    }
};

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::size_t count_lines(const std::string& path) {
    std::ifstream is(path);
    std::size_t n = 0;
    std::string line;
    while (std::getline(is, line)) ++n;
    return n;
}

}  // namespace

TEST_CASE("cli gen produces a corpus and is reproducible") {
    CliFixture fx;
    const std::string cfg = fx.write_config(fx.base_config(), "gen.json");
    REQUIRE(run({"gen", "--config", cfg}) == 0);
    REQUIRE(fs::exists(fx.root / "corpus" / "manifest.json"));
    const auto first = read_bytes((fx.root / "corpus" / "corpus.iq").string());
    REQUIRE(run({"gen", "--config", cfg}) == 0);
    CHECK(first == read_bytes((fx.root / "corpus" / "corpus.iq").string()));
}

TEST_CASE("cli rejects bad usage with exit code 2") {
    CliFixture fx;
    // missing output path
    json j = fx.base_config();
    j["gen"].erase("out");
    const std::string no_out = fx.write_config(j, "no_out.json");
    CHECK(run({"gen", "--config", no_out}) == 2);
    // unknown key
    json k = fx.base_config();
    k["gen"]["unknown_knob"] = 1;
    const std::string bad_key = fx.write_config(k, "bad_key.json");
    CHECK(run({"gen", "--config", bad_key}) == 2);
    // unparsable json
    const std::string broken = (fx.root / "broken.json").string();
    std::ofstream(broken) << "{not json";
    CHECK(run({"gen", "--config", broken}) == 2);
    // missing required flag
    CHECK(run({"gen"}) == 2);
    // unknown subcommand
    CHECK(run({"frobnicate", "--config", "x"}) == 2);
}

TEST_CASE("cli missing input files exit with code 1") {
    CliFixture fx;
    json j{{"pretrain", {{"data", (fx.root / "nope" / "manifest.json").string()}, {"out", (fx.root / "o").string()}}}};
    const std::string cfg = fx.write_config(j, "pre.json");
    CHECK(run({"pretrain", "--config", cfg}) == 1);
}

TEST_CASE("cli end-to-end chain on a tiny corpus", "[slow]") {
    CliFixture fx;
    // three corpora: rx1/rx2 train (clean), test on a third receiver
    for (int i = 0; i < 3; ++i) {
        json j = fx.base_config();
        j["gen"]["out"] = (fx.root / ("c" + std::to_string(i))).string();
        j["gen"]["receivers"]["use"] = json::array({i});
        if (i == 2) j["gen"]["condition"] = {{"tag", "dynamic_nlos"}, {"snr_db", 20.0}};
        j["gen"]["receivers"]["count"] = 3;
        const std::string cfg = fx.write_config(j, "gen" + std::to_string(i) + ".json");
        REQUIRE(run({"gen", "--config", cfg}) == 0);
    }
    // unlabeled pretraining corpus from a disjoint device population
    {
        json j = fx.base_config();
        j["gen"]["out"] = (fx.root / "pre").string();
        j["gen"]["devices"]["seed"] = 99;
        j["gen"]["labeled"] = false;
        const std::string cfg = fx.write_config(j, "gen_pre.json");
        REQUIRE(run({"gen", "--config", cfg}) == 0);
    }

    json train{{"chirp", {{"preamble_count", 2}}},
               {"pretrain",
                {{"data", (fx.root / "pre" / "manifest.json").string()},
                 {"out", (fx.root / "pre_run").string()},
                 {"batch_pairs", 4},
                 {"max_epochs", 2},
                 {"width_scale", 0.125},
                 {"seed", 3}}},
               {"finetune",
                {{"rx1", (fx.root / "c0" / "manifest.json").string()},
                 {"rx2", (fx.root / "c1" / "manifest.json").string()},
                 {"out", (fx.root / "fin_run").string()},
                 {"batch_pairs", 4},
                 {"max_epochs", 2},
                 {"width_scale", 0.125},
                 {"seed", 3}}},
               {"eval",
                {{"model", (fx.root / "fin_run" / "model.ckpt").string()},
                 {"data", (fx.root / "c2" / "manifest.json").string()},
                 {"out", (fx.root / "eval_run").string()}}}};
    const std::string cfg = fx.write_config(train, "train.json");

    REQUIRE(run({"pretrain", "--config", cfg}) == 0);
    REQUIRE(fs::exists(fx.root / "pre_run" / "extractor.ckpt"));
    // epoch log: header + one row per epoch
    CHECK(count_lines((fx.root / "pre_run" / "training_log.csv").string()) <= 3);
    CHECK(count_lines((fx.root / "pre_run" / "training_log.csv").string()) >= 2);

    REQUIRE(run({"finetune", "--config", cfg, "--init", (fx.root / "pre_run" / "extractor.ckpt").string()}) == 0);
    REQUIRE(fs::exists(fx.root / "fin_run" / "model.ckpt"));

    REQUIRE(run({"eval", "--config", cfg}) == 0);
    REQUIRE(fs::exists(fx.root / "eval_run" / "eval_report.csv"));
    REQUIRE(fs::exists(fx.root / "eval_run" / "confusion.csv"));
    CHECK(count_lines((fx.root / "eval_run" / "confusion.csv").string()) == 3);  // K = 3

    // sweep: one point, one repetition, both arms
    json sweep{{"chirp", {{"preamble_count", 2}}},
               {"sweep",
                {{"rx1", (fx.root / "c0" / "manifest.json").string()},
                 {"rx2", (fx.root / "c1" / "manifest.json").string()},
                 {"test", (fx.root / "c2" / "manifest.json").string()},
                 {"init", (fx.root / "pre_run" / "extractor.ckpt").string()},
                 {"out", (fx.root / "sweep_run").string()},
                 {"packets", json::array({4})},
                 {"repetitions", 1},
                 {"batch_pairs", 4},
                 {"max_epochs", 1},
                 {"width_scale", 0.125},
                 {"seed", 3}}}};
    const std::string sweep_cfg = fx.write_config(sweep, "sweep.json");
    REQUIRE(run({"sweep", "--config", sweep_cfg}) == 0);
    // header + points x arms x reps rows
    CHECK(count_lines((fx.root / "sweep_run" / "sweep_runs.csv").string()) == 3);
    CHECK(count_lines((fx.root / "sweep_run" / "sweep_summary.csv").string()) == 3);
}
