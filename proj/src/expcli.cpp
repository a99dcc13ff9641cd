#include "fedlora/expcli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace fs = std::filesystem;

namespace fedlora {

namespace {

std::string g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void append_metric_row(std::string& out, int round, int client, const char* split,
                       const MetricsReport& m, uint64_t up, uint64_t down) {
    out += std::to_string(round);
    out += ',';
    out += std::to_string(client);
    out += ',';
    out += split;
    out += ',';
    out += g6(m.mean_loss);
    out += ',';
    out += g6(m.accuracy);
    out += ',';
    out += g6(m.macro_precision);
    out += ',';
    out += g6(m.macro_recall);
    out += ',';
    out += g6(m.macro_f1);
    out += ',';
    out += std::to_string(up);
    out += ',';
    out += std::to_string(down);
    out += '\n';
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    out.write(text.data(), std::streamsize(text.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

std::string render_rounds_csv(const std::vector<RoundReport>& reports) {
    std::string out = kRoundsHeader;
    out += '\n';
    for (const RoundReport& r : reports) {
        for (const ClientRoundMetrics& c : r.clients) {
            append_metric_row(out, r.round, c.client_id, "train", c.train, r.uplink_bytes,
                              r.downlink_bytes);
            append_metric_row(out, r.round, c.client_id, "eval", c.eval, r.uplink_bytes,
                              r.downlink_bytes);
        }
    }
    return out;
}

std::string render_summary(const ExperimentResult& result, const ExperimentConfig& cfg) {
    std::ostringstream s;
    const RoundReport& last = result.rounds.back();
    const RoundReport& first = result.rounds.front();

    const double scale = cfg.adapter.scale_mode == "alpha"
                             ? cfg.adapter.alpha
                             : cfg.adapter.alpha / double(cfg.adapter.rank);

    s << "fedlora experiment summary\n";
    s << "==========================\n";
    s << "mode: " << cfg.mode << "\n";
    s << "strategy: " << cfg.adapter.strategy << "\n";
    s << "aggregator: " << cfg.fed.aggregator << " (prox_mu " << g6(cfg.fed.prox_mu) << ")\n";
    s << "seed: " << cfg.seed << "\n";
    s << "clients: " << result.clients.size() << "\n";
    s << "rounds: " << (result.rounds.size() - 1) << "\n";
    s << "local epochs: " << cfg.fed.local_epochs << ", batch size: " << cfg.fed.batch_size
      << ", lr: " << g6(cfg.fed.lr) << "\n";
    s << "adapter: rank " << cfg.adapter.rank << ", alpha " << g6(cfg.adapter.alpha)
      << ", dropout " << g6(cfg.adapter.dropout) << ", scale_mode " << cfg.adapter.scale_mode
      << ", effective scale " << g6(scale) << "\n";
    s << "pretrain: " << cfg.model.pretrain_epochs << " epochs on pool of "
      << result.base.meta.pool_size << ", holdout accuracy "
      << g6(result.base.meta.holdout_accuracy) << "\n";
    s << "base digest: " << result.base_digest_after << "\n";
    s << "\n";

    s << "round 0 (no fine-tuning):\n";
    s << "  pooled: accuracy " << g6(first.pooled_eval.accuracy) << ", loss "
      << g6(first.pooled_eval.mean_loss) << "\n";
    s << "  mean over clients: accuracy " << g6(first.mean_eval_accuracy()) << ", loss "
      << g6(first.mean_eval_loss()) << "\n";
    s << "\n";

    s << "final round " << last.round << " (post-downlink, eval split):\n";
    double mean_acc = 0.0, mean_p = 0.0, mean_r = 0.0, mean_f1 = 0.0, mean_loss = 0.0;
    double mean_local_acc = 0.0;
    for (const ClientRoundMetrics& c : last.clients) {
        s << "  client " << c.client_id << ": accuracy " << g6(c.eval.accuracy) << ", precision "
          << g6(c.eval.macro_precision) << ", recall " << g6(c.eval.macro_recall) << ", f1 "
          << g6(c.eval.macro_f1) << ", loss " << g6(c.eval.mean_loss) << "\n";
        mean_acc += c.eval.accuracy;
        mean_p += c.eval.macro_precision;
        mean_r += c.eval.macro_recall;
        mean_f1 += c.eval.macro_f1;
        mean_loss += c.eval.mean_loss;
        mean_local_acc += c.local_eval.accuracy;
    }
    const double k = double(last.clients.size());
    s << "  mean: accuracy " << g6(mean_acc / k) << ", precision " << g6(mean_p / k)
      << ", recall " << g6(mean_r / k) << ", f1 " << g6(mean_f1 / k) << ", loss "
      << g6(mean_loss / k) << "\n";
    s << "  pooled: accuracy " << g6(last.pooled_eval.accuracy) << ", loss "
      << g6(last.pooled_eval.mean_loss) << "\n";
    s << "  local (pre-aggregation) mean accuracy: " << g6(mean_local_acc / k) << "\n";
    s << "  micro-averaged metrics equal accuracy for single-label tasks\n";
    s << "\n";

    uint64_t up = 0, down = 0;
    for (const RoundReport& r : result.rounds) {
        up += r.uplink_bytes;
        down += r.downlink_bytes;
    }
    s << "communication:\n";
    s << "  uplink total: " << up << " bytes\n";
    s << "  downlink total: " << down << " bytes\n";
    return s.str();
}

OutputBundle emit_outputs(const ExperimentResult& result, const ParsedConfig& cfg,
                          const std::string& dir) {
    if (result.rounds.empty()) throw std::invalid_argument("emit_outputs: no reports");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());

    OutputBundle bundle;
    bundle.rounds_path = (fs::path(dir) / "rounds.csv").string();
    bundle.summary_path = (fs::path(dir) / "summary.txt").string();
    bundle.config_path = (fs::path(dir) / "config_echo.cfg").string();

    write_text(bundle.rounds_path, render_rounds_csv(result.rounds));
    write_text(bundle.summary_path, render_summary(result, cfg.experiment));
    write_text(bundle.config_path, render_config(cfg));

    if (cfg.experiment.save_adapters) {
        for (const ClientState& c : result.clients) {
            const std::string p =
                (fs::path(dir) / ("adapter_client" + std::to_string(c.id) + ".bin")).string();
            save_adapter(p, c.adapter);
            bundle.adapter_paths.push_back(p);
        }
    }
    return bundle;
}

std::vector<SweepRun> expand_sweep(const ParsedConfig& cfg) {
    const SweepSettings& sw = cfg.sweep;
    if (sw.seeds < 1) throw ConfigError("sweep.seeds: must be >= 1");

    const std::vector<std::string> modes =
        sw.modes.empty() ? std::vector<std::string>{cfg.experiment.mode} : sw.modes;
    const std::vector<std::string> strategies =
        sw.strategies.empty() ? std::vector<std::string>{cfg.experiment.adapter.strategy}
                              : sw.strategies;
    const std::vector<std::string> aggregators =
        sw.aggregators.empty() ? std::vector<std::string>{cfg.experiment.fed.aggregator}
                               : sw.aggregators;
    const std::vector<int> ranks =
        sw.ranks.empty() ? std::vector<int>{cfg.experiment.adapter.rank} : sw.ranks;
    const std::vector<int> clients =
        sw.clients.empty() ? std::vector<int>{cfg.experiment.fed.clients} : sw.clients;
    const std::vector<double> prox_mus =
        sw.prox_mus.empty() ? std::vector<double>{cfg.experiment.fed.prox_mu} : sw.prox_mus;

    std::vector<SweepRun> runs;
    for (const auto& mode : modes) {
        for (const auto& strategy : strategies) {
            for (const auto& agg : aggregators) {
                for (int rank : ranks) {
                    for (int nclients : clients) {
                        for (double mu : prox_mus) {
                            for (int si = 0; si < sw.seeds; ++si) {
                                SweepRun run;
                                run.config = cfg;
                                run.config.sweep = SweepSettings{};  // echo reproduces one run
                                ExperimentConfig& e = run.config.experiment;
                                e.mode = mode;
                                e.adapter.strategy = strategy;
                                e.fed.aggregator = agg;
                                e.adapter.rank = rank;
                                e.fed.clients = nclients;
                                e.fed.prox_mu = mu;
                                e.seed = cfg.experiment.seed + uint64_t(si);
                                // keep shard arithmetic consistent when sweeping clients
                                if (e.data.partition == "shard" && !sw.clients.empty()) {
                                    e.data.num_shards = nclients * e.data.shards_per_client;
                                }

                                std::string label;
                                auto tag = [&label](const std::string& part) {
                                    if (!label.empty()) label += "_";
                                    label += part;
                                };
                                if (modes.size() > 1) tag(mode);
                                if (strategies.size() > 1) tag(strategy);
                                if (aggregators.size() > 1) tag("agg-" + agg);
                                if (prox_mus.size() > 1) tag("mu" + g6(mu));
                                if (ranks.size() > 1) tag("r" + std::to_string(rank));
                                if (clients.size() > 1) tag("k" + std::to_string(nclients));
                                tag("seed" + std::to_string(e.seed));
                                run.label = label;
                                runs.push_back(std::move(run));
                            }
                        }
                    }
                }
            }
        }
    }
    return runs;
}

std::vector<std::string> preset_names() {
    return {"central-vs-fed", "sota-compare", "client-ablation",
            "rank-ablation", "agg-compare",  "scale-noniid"};
}

std::string find_preset_file(const std::string& name, const std::string& preset_dir_flag) {
    std::string dir = preset_dir_flag;
    if (dir.empty()) {
        if (const char* env = std::getenv("FEDLORA_PRESET_DIR")) dir = env;
    }
    if (dir.empty()) dir = "presets";
    const std::string path = (fs::path(dir) / (name + ".cfg")).string();
    const auto known = preset_names();
    const bool is_known = std::find(known.begin(), known.end(), name) != known.end();
    if (!is_known && !fs::exists(path)) {
        std::string msg = "unknown preset \"" + name + "\"; available:";
        for (const auto& n : known) msg += " " + n;
        throw ConfigError(msg);
    }
    if (!fs::exists(path)) {
        throw std::runtime_error("preset file not found: " + path +
                                 " (set --preset-dir or FEDLORA_PRESET_DIR)");
    }
    return path;
}

namespace {

struct CsvRow {
    int round;
    int client;
    std::string split;
    double loss, accuracy, precision, recall, f1;
    uint64_t up, down;
};

std::vector<CsvRow> parse_rounds_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kRoundsHeader) {
        throw std::runtime_error("rounds table: missing or unexpected header");
    }
    std::vector<CsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 10) {
            throw std::runtime_error("rounds table: malformed row \"" + line + "\"");
        }
        CsvRow r;
        r.round = std::stoi(fields[0]);
        r.client = std::stoi(fields[1]);
        r.split = fields[2];
        r.loss = std::stod(fields[3]);
        r.accuracy = std::stod(fields[4]);
        r.precision = std::stod(fields[5]);
        r.recall = std::stod(fields[6]);
        r.f1 = std::stod(fields[7]);
        r.up = std::stoull(fields[8]);
        r.down = std::stoull(fields[9]);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error("rounds table: no data rows");
    return rows;
}

}  // namespace

std::string summarize_rounds_csv(const std::string& csv_text) {
    const std::vector<CsvRow> rows = parse_rounds_csv(csv_text);
    int last_round = 0;
    for (const CsvRow& r : rows) last_round = std::max(last_round, r.round);

    double acc = 0.0, loss = 0.0, f1 = 0.0;
    int n = 0;
    uint64_t up = 0, down = 0;
    std::ostringstream s;
    s << "rounds table summary\n";
    s << "====================\n";
    s << "final round " << last_round << " (eval split):\n";
    for (const CsvRow& r : rows) {
        if (r.round == last_round && r.split == "eval") {
            s << "  client " << r.client << ": accuracy " << g6(r.accuracy) << ", f1 " << g6(r.f1)
              << ", loss " << g6(r.loss) << "\n";
            acc += r.accuracy;
            loss += r.loss;
            f1 += r.f1;
            ++n;
        }
    }
    if (n == 0) throw std::runtime_error("rounds table: final round has no eval rows");
    s << "  mean: accuracy " << g6(acc / n) << ", f1 " << g6(f1 / n) << ", loss " << g6(loss / n)
      << "\n";
    // per-round byte columns repeat per row; count each round once
    int seen_round = -1;
    for (const CsvRow& r : rows) {
        if (r.round != seen_round) {
            seen_round = r.round;
            up += r.up;
            down += r.down;
        }
    }
    s << "communication:\n";
    s << "  uplink total: " << up << " bytes\n";
    s << "  downlink total: " << down << " bytes\n";
    return s.str();
}

namespace {

std::string aggregate_csv_header() {
    return "label,mode,strategy,aggregator,prox_mu,rank,clients,seed,round0_pooled_accuracy,"
           "final_mean_accuracy,final_mean_precision,final_mean_recall,final_mean_f1,"
           "final_mean_loss,final_pooled_accuracy,total_uplink_bytes,total_downlink_bytes\n";
}

std::string aggregate_csv_row(const SweepRun& run, const ExperimentResult& result) {
    const ExperimentConfig& e = run.config.experiment;
    const RoundReport& last = result.rounds.back();
    const RoundReport& first = result.rounds.front();
    double mean_p = 0.0, mean_r = 0.0, mean_f1 = 0.0;
    for (const auto& c : last.clients) {
        mean_p += c.eval.macro_precision;
        mean_r += c.eval.macro_recall;
        mean_f1 += c.eval.macro_f1;
    }
    const double k = double(last.clients.size());
    uint64_t up = 0, down = 0;
    for (const auto& r : result.rounds) {
        up += r.uplink_bytes;
        down += r.downlink_bytes;
    }
    std::ostringstream s;
    s << run.label << ',' << e.mode << ',' << e.adapter.strategy << ',' << e.fed.aggregator << ','
      << g6(e.fed.prox_mu) << ',' << e.adapter.rank << ',' << e.fed.clients << ',' << e.seed << ','
      << g6(first.pooled_eval.accuracy) << ',' << g6(last.mean_eval_accuracy()) << ','
      << g6(mean_p / k) << ',' << g6(mean_r / k) << ',' << g6(mean_f1 / k) << ','
      << g6(last.mean_eval_loss()) << ',' << g6(last.pooled_eval.accuracy) << ',' << up << ','
      << down << '\n';
    return s.str();
}

int execute_runs(const ParsedConfig& cfg, const std::string& out_override, int jobs) {
    std::vector<SweepRun> runs = expand_sweep(cfg);
    const std::string root =
        out_override.empty() ? cfg.experiment.output_dir : out_override;

    std::string aggregate = aggregate_csv_header();
    for (SweepRun& run : runs) {
        run.config.experiment.output_dir =
            runs.size() == 1 ? root : (fs::path(root) / run.label).string();
        validate_config(run.config.experiment);
        const ExperimentResult result = run_experiment(run.config.experiment, jobs);
        emit_outputs(result, run.config, run.config.experiment.output_dir);
        aggregate += aggregate_csv_row(run, result);
        std::cout << run.label << ": final mean eval accuracy "
                  << g6(result.rounds.back().mean_eval_accuracy()) << "\n";
    }
    if (runs.size() > 1) {
        std::error_code ec;
        fs::create_directories(root, ec);
        write_text((fs::path(root) / "aggregate.csv").string(), aggregate);
    }
    return 0;
}

ParsedConfig load_cli_config(const std::string& config_path,
                             const std::vector<std::string>& sets) {
    ParsedConfig cfg = config_path.empty() ? default_config() : parse_config_file(config_path);
    for (const std::string& kv : sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got \"" + kv + "\"");
        }
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (const char* env = std::getenv("FEDLORA_SEED")) {
        apply_override(cfg, "seed", env);
    }
    return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"fedlora: federated LoRA fine-tuning laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, preset_name, preset_dir, rounds_file, out_file;
    std::vector<std::string> sets;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key = value lines)");
        cmd->add_option("--set", sets, "override, dotted path: --set fed.rounds=10");
    };

    CLI::App* run = app.add_subcommand("run", "run one experiment (or the config's sweep)");
    add_common(run);
    run->add_option("--out", out_dir, "output directory (overrides output_dir)");
    run->add_option("--jobs", jobs, "train clients concurrently with this many jobs");

    CLI::App* preset = app.add_subcommand("preset", "run a named preset config");
    preset->add_option("name", preset_name, "preset name")->required();
    preset->add_option("--set", sets, "override, dotted path");
    preset->add_option("--out", out_dir, "output directory");
    preset->add_option("--preset-dir", preset_dir, "directory holding preset .cfg files");
    preset->add_option("--jobs", jobs, "train clients concurrently with this many jobs");

    CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset file");
    add_common(gen);
    gen->add_option("--out", out_file, "destination dataset file")->required();

    CLI::App* pre = app.add_subcommand("pretrain", "build and pretrain a frozen base");
    add_common(pre);
    pre->add_option("--out", out_file, "destination base checkpoint")->required();

    CLI::App* rep = app.add_subcommand("report", "recompute a summary from a rounds table");
    rep->add_option("rounds", rounds_file, "rounds.csv produced by run")->required();
    rep->add_option("--out", out_file, "write the summary here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (run->parsed()) {
            return execute_runs(load_cli_config(config_path, sets), out_dir, jobs);
        }
        if (preset->parsed()) {
            std::string path;
            try {
                path = find_preset_file(preset_name, preset_dir);
            } catch (const ConfigError& e) {
                std::cerr << e.what() << "\n";
                return 2;
            }
            ParsedConfig cfg = parse_config_file(path);
            for (const std::string& kv : sets) {
                const size_t eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw ConfigError("--set expects key=value, got \"" + kv + "\"");
                }
                apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (const char* env = std::getenv("FEDLORA_SEED")) apply_override(cfg, "seed", env);
            return execute_runs(cfg, out_dir, jobs);
        }
        if (gen->parsed()) {
            const ParsedConfig cfg = load_cli_config(config_path, sets);
            validate_config(cfg.experiment);
            MixtureConfig mix;
            const DataSettings& d = cfg.experiment.data;
            mix.num_classes = d.num_classes;
            mix.visual_dim = d.visual_dim;
            mix.text_dim = d.text_dim;
            mix.visual_tokens = d.visual_tokens;
            mix.text_tokens = d.text_tokens;
            mix.per_class = d.per_class;
            mix.num_domains = d.num_domains;
            mix.separation = d.separation;
            RngStream rng = RngStream(cfg.experiment.seed).child(kRngData);
            save_dataset(out_file, gen_mixture(mix, rng));
            std::cout << "wrote " << out_file << "\n";
            return 0;
        }
        if (pre->parsed()) {
            const ParsedConfig pc = load_cli_config(config_path, sets);
            validate_config(pc.experiment);
            const ExperimentConfig& e = pc.experiment;
            MixtureConfig mix;
            mix.num_classes = e.data.num_classes;
            mix.visual_dim = e.data.visual_dim;
            mix.text_dim = e.data.text_dim;
            mix.visual_tokens = e.data.visual_tokens;
            mix.text_tokens = e.data.text_tokens;
            mix.per_class = e.data.per_class;
            mix.num_domains = e.data.num_domains;
            mix.separation = e.data.separation;
            RngStream data_rng = RngStream(e.seed).child(kRngData);
            const Dataset full = gen_mixture(mix, data_rng);
            RngStream pool_rng = RngStream(e.seed).child(kRngPool);
            auto [pool, rest] = split_pretrain_pool(full, e.data.pretrain_fraction, pool_rng);
            (void)rest;
            ModelConfig mc;
            mc.visual_dim = e.data.visual_dim;
            mc.text_dim = e.data.text_dim;
            mc.visual_tokens = e.data.visual_tokens;
            mc.text_tokens = e.data.text_tokens;
            mc.hidden_dim = e.model.hidden_dim;
            mc.num_classes = e.data.num_classes;
            mc.seed = e.seed;
            RngStream model_rng = RngStream(e.seed).child(kRngModel);
            FrozenBase base = build_base(mc, model_rng);
            base = pretrain_base(std::move(base), pool, e.model.pretrain_epochs,
                                 e.model.pretrain_lr, e.model.pretrain_batch);
            save_base(out_file, base);
            std::cout << "wrote " << out_file << " (holdout accuracy "
                      << g6(base.meta.holdout_accuracy) << ")\n";
            return 0;
        }
        if (rep->parsed()) {
            std::ifstream in(rounds_file, std::ios::binary);
            if (!in) throw std::runtime_error("cannot open rounds table: " + rounds_file);
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string summary = summarize_rounds_csv(ss.str());
            if (out_file.empty()) {
                std::cout << summary;
            } else {
                write_text(out_file, summary);
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace fedlora
