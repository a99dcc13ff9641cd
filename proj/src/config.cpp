#include "fedlora/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace fedlora {

namespace {

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(uint8_t(s[b]))) ++b;
    while (e > b && std::isspace(uint8_t(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

int parse_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected integer, got \"" + v + "\"");
    }
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected unsigned integer, got \"" + v + "\"");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got \"" + v + "\"");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got \"" + v + "\"");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    out.erase(std::remove(out.begin(), out.end(), std::string{}), out.end());
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        out += v[i];
    }
    return out;
}

struct Binding {
    const char* key;
    std::function<void(ParsedConfig&, const std::string&)> set;
    std::function<std::string(const ParsedConfig&)> get;
};

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = [] {
        std::vector<Binding> b;
        auto add = [&](const char* key, auto setter, auto getter) {
            b.push_back({key,
                         [key, setter](ParsedConfig& c, const std::string& v) { setter(c, key, v); },
                         getter});
        };

        add("seed",
            [](ParsedConfig& c, const char* k, const std::string& v) { c.experiment.seed = parse_u64(k, v); },
            [](const ParsedConfig& c) { return std::to_string(c.experiment.seed); });
        add("mode",
            [](ParsedConfig& c, const char*, const std::string& v) { c.experiment.mode = v; },
            [](const ParsedConfig& c) { return c.experiment.mode; });
        add("output_dir",
            [](ParsedConfig& c, const char*, const std::string& v) { c.experiment.output_dir = v; },
            [](const ParsedConfig& c) { return c.experiment.output_dir; });
        add("save_adapters",
            [](ParsedConfig& c, const char* k, const std::string& v) { c.experiment.save_adapters = parse_bool(k, v); },
            [](const ParsedConfig& c) { return c.experiment.save_adapters ? "true" : "false"; });

#define FEDLORA_INT(KEY, FIELD)                                                                     \
    add(KEY,                                                                                        \
        [](ParsedConfig& c, const char* k, const std::string& v) { c.FIELD = parse_int(k, v); },    \
        [](const ParsedConfig& c) { return std::to_string(c.FIELD); })
#define FEDLORA_DOUBLE(KEY, FIELD)                                                                  \
    add(KEY,                                                                                        \
        [](ParsedConfig& c, const char* k, const std::string& v) { c.FIELD = parse_double(k, v); }, \
        [](const ParsedConfig& c) { return fmt_double(c.FIELD); })
#define FEDLORA_STRING(KEY, FIELD)                                                                  \
    add(KEY, [](ParsedConfig& c, const char*, const std::string& v) { c.FIELD = v; },               \
        [](const ParsedConfig& c) { return c.FIELD; })
#define FEDLORA_BOOL(KEY, FIELD)                                                                    \
    add(KEY,                                                                                        \
        [](ParsedConfig& c, const char* k, const std::string& v) { c.FIELD = parse_bool(k, v); },   \
        [](const ParsedConfig& c) { return c.FIELD ? "true" : "false"; })

        FEDLORA_INT("data.num_classes", experiment.data.num_classes);
        FEDLORA_INT("data.visual_dim", experiment.data.visual_dim);
        FEDLORA_INT("data.text_dim", experiment.data.text_dim);
        FEDLORA_INT("data.visual_tokens", experiment.data.visual_tokens);
        FEDLORA_INT("data.text_tokens", experiment.data.text_tokens);
        FEDLORA_INT("data.per_class", experiment.data.per_class);
        FEDLORA_INT("data.num_domains", experiment.data.num_domains);
        FEDLORA_DOUBLE("data.separation", experiment.data.separation);
        FEDLORA_STRING("data.partition", experiment.data.partition);
        FEDLORA_INT("data.num_shards", experiment.data.num_shards);
        FEDLORA_INT("data.shards_per_client", experiment.data.shards_per_client);
        FEDLORA_DOUBLE("data.eval_fraction", experiment.data.eval_fraction);
        FEDLORA_DOUBLE("data.pretrain_fraction", experiment.data.pretrain_fraction);

        FEDLORA_INT("model.hidden_dim", experiment.model.hidden_dim);
        FEDLORA_INT("model.pretrain_epochs", experiment.model.pretrain_epochs);
        FEDLORA_DOUBLE("model.pretrain_lr", experiment.model.pretrain_lr);
        FEDLORA_INT("model.pretrain_batch", experiment.model.pretrain_batch);

        FEDLORA_INT("adapter.rank", experiment.adapter.rank);
        FEDLORA_DOUBLE("adapter.alpha", experiment.adapter.alpha);
        FEDLORA_DOUBLE("adapter.dropout", experiment.adapter.dropout);
        FEDLORA_STRING("adapter.strategy", experiment.adapter.strategy);
        FEDLORA_STRING("adapter.scale_mode", experiment.adapter.scale_mode);
        FEDLORA_BOOL("adapter.shared_frozen_a", experiment.adapter.shared_frozen_a);

        FEDLORA_INT("fed.clients", experiment.fed.clients);
        FEDLORA_INT("fed.rounds", experiment.fed.rounds);
        FEDLORA_INT("fed.local_epochs", experiment.fed.local_epochs);
        FEDLORA_INT("fed.batch_size", experiment.fed.batch_size);
        FEDLORA_DOUBLE("fed.lr", experiment.fed.lr);
        FEDLORA_STRING("fed.aggregator", experiment.fed.aggregator);
        FEDLORA_DOUBLE("fed.prox_mu", experiment.fed.prox_mu);
        FEDLORA_DOUBLE("fed.participation", experiment.fed.participation);

        FEDLORA_INT("sweep.seeds", sweep.seeds);

#undef FEDLORA_INT
#undef FEDLORA_DOUBLE
#undef FEDLORA_STRING
#undef FEDLORA_BOOL

        add("sweep.modes",
            [](ParsedConfig& c, const char*, const std::string& v) { c.sweep.modes = split_list(v); },
            [](const ParsedConfig& c) { return join(c.sweep.modes); });
        add("sweep.strategies",
            [](ParsedConfig& c, const char*, const std::string& v) { c.sweep.strategies = split_list(v); },
            [](const ParsedConfig& c) { return join(c.sweep.strategies); });
        add("sweep.aggregators",
            [](ParsedConfig& c, const char*, const std::string& v) { c.sweep.aggregators = split_list(v); },
            [](const ParsedConfig& c) { return join(c.sweep.aggregators); });
        add("sweep.ranks",
            [](ParsedConfig& c, const char* k, const std::string& v) {
                c.sweep.ranks.clear();
                for (const auto& s : split_list(v)) c.sweep.ranks.push_back(parse_int(k, s));
            },
            [](const ParsedConfig& c) {
                std::vector<std::string> s;
                for (int r : c.sweep.ranks) s.push_back(std::to_string(r));
                return join(s);
            });
        add("sweep.clients",
            [](ParsedConfig& c, const char* k, const std::string& v) {
                c.sweep.clients.clear();
                for (const auto& s : split_list(v)) c.sweep.clients.push_back(parse_int(k, s));
            },
            [](const ParsedConfig& c) {
                std::vector<std::string> s;
                for (int r : c.sweep.clients) s.push_back(std::to_string(r));
                return join(s);
            });
        add("sweep.prox_mus",
            [](ParsedConfig& c, const char* k, const std::string& v) {
                c.sweep.prox_mus.clear();
                for (const auto& s : split_list(v)) c.sweep.prox_mus.push_back(parse_double(k, s));
            },
            [](const ParsedConfig& c) {
                std::vector<std::string> s;
                for (double r : c.sweep.prox_mus) s.push_back(fmt_double(r));
                return join(s);
            });
        return b;
    }();
    return table;
}

}  // namespace

ParsedConfig default_config() { return ParsedConfig{}; }

void apply_override(ParsedConfig& cfg, const std::string& key, const std::string& value) {
    for (const Binding& b : bindings()) {
        if (key == b.key) {
            b.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key \"" + key + "\"");
}

ParsedConfig parse_config_text(const std::string& text) {
    ParsedConfig cfg = default_config();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        apply_override(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

ParsedConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void validate_config(const ExperimentConfig& cfg) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError(field + ": " + why);
    };
    if (cfg.mode != "federated" && cfg.mode != "centralized") {
        fail("mode", "expected federated or centralized, got \"" + cfg.mode + "\"");
    }
    const DataSettings& d = cfg.data;
    if (d.num_classes < 2) fail("data.num_classes", "must be >= 2");
    if (d.visual_dim < 1) fail("data.visual_dim", "must be >= 1");
    if (d.text_dim < 1) fail("data.text_dim", "must be >= 1");
    if (d.visual_tokens < 1) fail("data.visual_tokens", "must be >= 1");
    if (d.text_tokens < 1) fail("data.text_tokens", "must be >= 1");
    if (d.per_class < 1) fail("data.per_class", "must be >= 1");
    if (d.num_domains < 1 || d.num_domains > d.num_classes) {
        fail("data.num_domains", "must be in [1, data.num_classes]");
    }
    if (d.separation <= 0.0) fail("data.separation", "must be > 0");
    if (d.partition != "iid" && d.partition != "shard" && d.partition != "domain") {
        fail("data.partition", "expected iid, shard, or domain, got \"" + d.partition + "\"");
    }
    if (d.eval_fraction <= 0.0 || d.eval_fraction >= 1.0) {
        fail("data.eval_fraction", "must be in (0,1)");
    }
    if (d.pretrain_fraction <= 0.0 || d.pretrain_fraction >= 1.0) {
        fail("data.pretrain_fraction", "must be in (0,1)");
    }
    const ModelSettings& m = cfg.model;
    if (m.hidden_dim < 1) fail("model.hidden_dim", "must be >= 1");
    if (m.pretrain_epochs < 0) fail("model.pretrain_epochs", "must be >= 0");
    if (m.pretrain_lr <= 0.0) fail("model.pretrain_lr", "must be > 0");
    if (m.pretrain_batch < 1) fail("model.pretrain_batch", "must be >= 1");

    const AdapterSettings& a = cfg.adapter;
    const int min_side = std::min(d.num_classes, m.hidden_dim);
    if (a.rank < 1 || a.rank >= min_side) {
        fail("adapter.rank", "must satisfy 1 <= rank < min(num_classes, hidden_dim) = " +
                                 std::to_string(min_side) + ", got " + std::to_string(a.rank));
    }
    if (a.alpha <= 0.0) fail("adapter.alpha", "must be > 0");
    if (a.dropout < 0.0 || a.dropout >= 1.0) fail("adapter.dropout", "must be in [0,1)");
    if (a.strategy != "plora" && a.strategy != "full_lora" && a.strategy != "ffa_lora") {
        fail("adapter.strategy", "expected plora, full_lora, or ffa_lora, got \"" + a.strategy + "\"");
    }
    if (a.scale_mode != "alpha_over_rank" && a.scale_mode != "alpha") {
        fail("adapter.scale_mode", "expected alpha_over_rank or alpha, got \"" + a.scale_mode + "\"");
    }

    const FedSettings& f = cfg.fed;
    if (f.clients < 1) fail("fed.clients", "must be >= 1");
    if (f.rounds < 0) fail("fed.rounds", "must be >= 0");
    if (f.local_epochs < 1) fail("fed.local_epochs", "must be >= 1");
    if (f.batch_size < 1) fail("fed.batch_size", "must be >= 1");
    if (f.lr <= 0.0) fail("fed.lr", "must be > 0");
    if (f.aggregator != "mean" && f.aggregator != "weighted") {
        fail("fed.aggregator", "expected mean or weighted, got \"" + f.aggregator + "\"");
    }
    if (f.prox_mu < 0.0) fail("fed.prox_mu", "must be >= 0");
    if (f.participation <= 0.0 || f.participation > 1.0) {
        fail("fed.participation", "must be in (0,1]");
    }
    if (d.partition == "domain" && d.num_domains < f.clients) {
        fail("data.num_domains", "domain partition needs num_domains >= fed.clients");
    }
    if (d.partition == "shard" && d.num_shards != f.clients * d.shards_per_client) {
        fail("data.num_shards", "must equal fed.clients * data.shards_per_client = " +
                                    std::to_string(f.clients * d.shards_per_client));
    }
}

std::string render_config(const ParsedConfig& cfg) {
    std::string out;
    for (const Binding& b : bindings()) {
        const std::string v = b.get(cfg);
        if (v.empty() && std::string_view(b.key).starts_with("sweep.") &&
            std::string_view(b.key) != "sweep.seeds") {
            continue;  // unset sweep axes stay out of the echo
        }
        out += b.key;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

}  // namespace fedlora
