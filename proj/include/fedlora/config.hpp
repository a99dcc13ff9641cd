#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedlora {

// Defaults follow the reference hyperparameters: rank 4, scaling factor 8,
// dropout 0.1, batch size 16, 3 local epochs. The learning rate defaults to
// 1e-3 — sized for this model family — and is echoed into every output.
struct DataSettings {
    int num_classes = 8;
    int visual_dim = 8;
    int text_dim = 4;
    int visual_tokens = 2;
    int text_tokens = 2;
    int per_class = 400;
    int num_domains = 4;
    double separation = 3.0;
    std::string partition = "domain";  // iid | shard | domain
    int num_shards = 8;
    int shards_per_client = 2;
    double eval_fraction = 0.2;
    double pretrain_fraction = 0.2;
};

struct ModelSettings {
    int hidden_dim = 64;
    int pretrain_epochs = 20;
    double pretrain_lr = 0.05;
    int pretrain_batch = 32;
};

struct AdapterSettings {
    int rank = 4;
    double alpha = 8.0;
    double dropout = 0.1;
    std::string strategy = "plora";            // plora | full_lora | ffa_lora
    std::string scale_mode = "alpha_over_rank";  // alpha_over_rank | alpha
    bool shared_frozen_a = false;              // ffa_lora: one frozen A for all clients
};

struct FedSettings {
    int clients = 4;
    int rounds = 5;
    int local_epochs = 3;
    int batch_size = 16;
    double lr = 1e-3;
    std::string aggregator = "mean";  // mean | weighted
    double prox_mu = 0.0;
    double participation = 1.0;
};

struct ExperimentConfig {
    uint64_t seed = 42;
    std::string mode = "federated";  // federated | centralized
    std::string output_dir = "out";
    bool save_adapters = false;
    DataSettings data;
    ModelSettings model;
    AdapterSettings adapter;
    FedSettings fed;
};

/// Sweep axes; a preset is a config file that sets some of these. Every axis
/// with more than one value multiplies the run list.
struct SweepSettings {
    int seeds = 1;  // run seeds seed, seed+1, ...
    std::vector<std::string> modes;
    std::vector<std::string> strategies;
    std::vector<std::string> aggregators;
    std::vector<int> ranks;
    std::vector<int> clients;
    std::vector<double> prox_mus;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The full key space, "section.key = value" per line. Unknown keys are
/// rejected with the offending key named.
struct ParsedConfig {
    ExperimentConfig experiment;
    SweepSettings sweep;
};

ParsedConfig default_config();
ParsedConfig parse_config_text(const std::string& text);
ParsedConfig parse_config_file(const std::string& path);
void apply_override(ParsedConfig& cfg, const std::string& key, const std::string& value);
void validate_config(const ExperimentConfig& cfg);

/// Fully-resolved "key = value" rendering; parsing it back reproduces cfg.
std::string render_config(const ParsedConfig& cfg);

}  // namespace fedlora
