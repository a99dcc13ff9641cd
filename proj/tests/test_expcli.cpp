#include <doctest.h>

#include <stdexcept>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fedlora/expcli.hpp"

using namespace fedlora;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* stem) {
    static int counter = 0;
    const auto p = fs::temp_directory_path() /
                   (std::string("fedlora_out_") + stem + "_" + std::to_string(++counter));
    fs::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ParsedConfig tiny_config() {
    ParsedConfig cfg = default_config();
    cfg.experiment.data.per_class = 30;
    cfg.experiment.model.pretrain_epochs = 2;
    cfg.experiment.fed.rounds = 2;
    cfg.experiment.fed.clients = 2;
    return cfg;
}

int cli(std::vector<std::string> args) {
    std::vector<const char*> argv = {"fedlora"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(int(argv.size()), argv.data());
}

MetricsReport metric(double acc, double loss) {
    MetricsReport m;
    m.accuracy = acc;
    m.macro_precision = acc;
    m.macro_recall = acc;
    m.macro_f1 = acc;
    m.mean_loss = loss;
    m.n = 10;
    return m;
}

}  // namespace

TEST_SUITE("expcli") {

TEST_CASE("defaults carry the reference hyperparameters") {
    const ParsedConfig cfg = default_config();
    CHECK(cfg.experiment.adapter.rank == 4);
    CHECK(cfg.experiment.adapter.alpha == 8.0);
    CHECK(cfg.experiment.adapter.dropout == 0.1);
    CHECK(cfg.experiment.fed.batch_size == 16);
    CHECK(cfg.experiment.fed.local_epochs == 3);
    CHECK(cfg.experiment.fed.lr == 1e-3);
    CHECK_NOTHROW(validate_config(cfg.experiment));
}

TEST_CASE("empty config text resolves to the defaults") {
    const ParsedConfig cfg = parse_config_text("");
    CHECK(render_config(cfg) == render_config(default_config()));
}

TEST_CASE("oversized rank is rejected naming adapter.rank") {
    ParsedConfig cfg = default_config();
    apply_override(cfg, "adapter.rank", "8");  // min(num_classes=8, hidden=64) == 8
    try {
        validate_config(cfg.experiment);
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("adapter.rank") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected by name") {
    ParsedConfig cfg = default_config();
    try {
        apply_override(cfg, "adapter.rnak", "4");
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("adapter.rnak") != std::string::npos);
    }
}

TEST_CASE("type mismatches name the key") {
    ParsedConfig cfg = default_config();
    try {
        apply_override(cfg, "fed.rounds", "five");
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("fed.rounds") != std::string::npos);
    }
}

TEST_CASE("config text round-trips through render and parse") {
    ParsedConfig cfg = tiny_config();
    apply_override(cfg, "adapter.strategy", "ffa_lora");
    apply_override(cfg, "fed.lr", "0.00125");
    const ParsedConfig back = parse_config_text(render_config(cfg));
    CHECK(render_config(back) == render_config(cfg));
    CHECK(back.experiment.fed.lr == 0.00125);
}

TEST_CASE("two rounds, two clients, two splits make exactly 8 data rows") {
    RoundReport r1, r2;
    r1.round = 1;
    r2.round = 2;
    for (RoundReport* r : {&r1, &r2}) {
        for (int c = 0; c < 2; ++c) {
            ClientRoundMetrics m;
            m.client_id = c;
            m.train = metric(0.5, 1.0);
            m.eval = metric(0.6, 0.9);
            r->clients.push_back(m);
        }
    }
    const std::string csv = render_rounds_csv({r1, r2});
    int rows = -1;  // discount the header
    for (char ch : csv)
        if (ch == '\n') ++rows;
    CHECK(rows == 8);
    CHECK(csv.rfind(kRoundsHeader, 0) == 0);
}

TEST_CASE("summary's mean accuracy is the arithmetic mean of the final per-client values") {
    ParsedConfig cfg = tiny_config();
    const ExperimentResult result = run_experiment(cfg.experiment);
    const std::string summary = render_summary(result, cfg.experiment);
    double mean = 0.0;
    for (const auto& c : result.rounds.back().clients) mean += c.eval.accuracy;
    mean /= double(result.rounds.back().clients.size());
    char want[64];
    std::snprintf(want, sizeof want, "mean: accuracy %.6g", mean);
    CHECK(summary.find(want) != std::string::npos);
}

TEST_CASE("rerunning the echoed config reproduces every file byte-identically") {
    const std::string dir_a = temp_dir("echo_a");
    const std::string dir_b = temp_dir("echo_b");
    ParsedConfig cfg = tiny_config();
    const ExperimentResult r1 = run_experiment(cfg.experiment);
    const OutputBundle out_a = emit_outputs(r1, cfg, dir_a);

    const ParsedConfig echoed = parse_config_file(out_a.config_path);
    const ExperimentResult r2 = run_experiment(echoed.experiment);
    const OutputBundle out_b = emit_outputs(r2, echoed, dir_b);

    CHECK(slurp(out_a.rounds_path) == slurp(out_b.rounds_path));
    CHECK(slurp(out_a.summary_path) == slurp(out_b.summary_path));
    CHECK(slurp(out_a.config_path) == slurp(out_b.config_path));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("flag overrides survive into the config echo") {
    const std::string dir = temp_dir("override");
    ParsedConfig cfg = tiny_config();
    apply_override(cfg, "fed.rounds", "1");
    const ExperimentResult r = run_experiment(cfg.experiment);
    const OutputBundle out = emit_outputs(r, cfg, dir);
    const std::string echo = slurp(out.config_path);
    CHECK(echo.find("fed.rounds = 1\n") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("preset files resolve to the documented shapes") {
    const char* dir = std::getenv("FEDLORA_PRESET_DIR");
    REQUIRE_MESSAGE(dir != nullptr, "tests expect FEDLORA_PRESET_DIR");

    const ParsedConfig rank = parse_config_file(find_preset_file("rank-ablation", ""));
    CHECK(rank.sweep.ranks == std::vector<int>{2, 4, 8, 16});
    CHECK(rank.experiment.fed.clients == 2);
    CHECK(rank.experiment.fed.rounds == 10);

    const ParsedConfig sota = parse_config_file(find_preset_file("sota-compare", ""));
    CHECK(sota.experiment.fed.clients == 4);
    CHECK(sota.experiment.fed.local_epochs == 3);
    CHECK(sota.experiment.fed.rounds == 5);
    CHECK(sota.sweep.strategies ==
          std::vector<std::string>{"plora", "full_lora", "ffa_lora"});
    CHECK(sota.sweep.seeds == 5);

    const ParsedConfig clients = parse_config_file(find_preset_file("client-ablation", ""));
    CHECK(clients.sweep.clients == std::vector<int>{2, 4, 6, 8});

    const ParsedConfig scale = parse_config_file(find_preset_file("scale-noniid", ""));
    CHECK(scale.experiment.fed.clients == 40);
    CHECK(scale.experiment.data.num_shards == 80);
    CHECK(scale.experiment.data.shards_per_client == 2);
    CHECK(scale.experiment.fed.rounds == 30);

    for (const std::string& name : preset_names()) {
        const ParsedConfig p = parse_config_file(find_preset_file(name, ""));
        for (const SweepRun& run : expand_sweep(p)) {
            CHECK_NOTHROW(validate_config(run.config.experiment));
        }
    }
}

TEST_CASE("an invalid preset name exits with status 2 and writes nothing") {
    const std::string dir = temp_dir("badpreset");
    const int rc = cli({"preset", "no-such-preset", "--out", dir});
    CHECK(rc == 2);
    CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("unknown subcommands exit nonzero") {
    CHECK(cli({"frobnicate"}) != 0);
}

TEST_CASE("FEDLORA_SEED overrides the config seed") {
    const std::string dir = temp_dir("envseed");
    setenv("FEDLORA_SEED", "777", 1);
    const int rc = cli({"run", "--set", "data.per_class=30", "--set", "model.pretrain_epochs=1",
                        "--set", "fed.rounds=1", "--set", "fed.clients=2", "--out", dir});
    unsetenv("FEDLORA_SEED");
    REQUIRE(rc == 0);
    const std::string echo = slurp((fs::path(dir) / "config_echo.cfg").string());
    CHECK(echo.find("seed = 777\n") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("report recomputes a summary from a rounds table") {
    const std::string dir = temp_dir("report");
    ParsedConfig cfg = tiny_config();
    cfg.experiment.fed.rounds = 1;
    const ExperimentResult r = run_experiment(cfg.experiment);
    const OutputBundle out = emit_outputs(r, cfg, dir);
    const std::string summary = summarize_rounds_csv(slurp(out.rounds_path));
    CHECK(summary.find("final round 1") != std::string::npos);
    double mean = 0.0;
    for (const auto& c : r.rounds.back().clients) mean += c.eval.accuracy;
    mean /= double(r.rounds.back().clients.size());
    char want[64];
    std::snprintf(want, sizeof want, "mean: accuracy %.6g", mean);
    CHECK(summary.find(want) != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("sweep expansion covers the cross product with stable labels") {
    ParsedConfig cfg = tiny_config();
    apply_override(cfg, "sweep.strategies", "plora,full_lora");
    apply_override(cfg, "sweep.seeds", "3");
    const std::vector<SweepRun> runs = expand_sweep(cfg);
    REQUIRE(runs.size() == 6);
    CHECK(runs[0].label == "plora_seed42");
    CHECK(runs[5].label == "full_lora_seed44");
    for (const SweepRun& r : runs) CHECK(r.config.sweep.seeds == 1);
}

TEST_CASE("centralized mode forces a single pooled client") {
    ParsedConfig cfg = tiny_config();
    cfg.experiment.mode = "centralized";
    cfg.experiment.fed.clients = 4;  // ignored in centralized mode
    const ExperimentResult r = run_experiment(cfg.experiment);
    CHECK(r.clients.size() == 1);
}

}  // TEST_SUITE
