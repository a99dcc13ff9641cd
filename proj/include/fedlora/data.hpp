#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedlora/linalg.hpp"

namespace fedlora {

/// One two-modality example: a small grid of visual tokens, a small grid of
/// text tokens, and the class index the model should emit.
struct Example {
    Matrix visual;  // N_v × D_v
    Matrix text;    // N_t × D_t
    int label = 0;
};

struct MixtureConfig {
    int num_classes = 8;
    int visual_dim = 8;
    int text_dim = 4;
    int visual_tokens = 2;
    int text_tokens = 2;
    int per_class = 400;
    int num_domains = 4;
    double separation = 3.0;
};

struct Dataset {
    std::vector<Example> examples;
    std::vector<int> domains;  // per-example source domain
    int num_classes = 0;
    int num_domains = 0;
    uint64_t seed = 0;
    MixtureConfig gen;  // generator settings; files are a cache of (gen, seed)

    size_t size() const { return examples.size(); }
};

// Class-conditional Gaussian clusters in visual space plus per-class text
// prototypes, noise std 1. Each domain owns a disjoint slice of the classes
// (class c lives in domain c mod num_domains) and applies a fixed random
// rotation to both modalities, so domains are both feature-shifted and
// label-skewed — the siloed-organization regime.
Dataset gen_mixture(const MixtureConfig& cfg, RngStream& rng);

struct ClientSplit {
    std::vector<size_t> train;
    std::vector<size_t> eval;
};

struct Partition {
    std::vector<ClientSplit> clients;
};

Partition partition_iid(const Dataset& ds, int k, double eval_fraction, RngStream& rng);

// Sort by label, cut into num_shards contiguous shards, deal shards_per_client
// random shards to each client. Standard label-skew construction.
Partition partition_shards(const Dataset& ds, int num_shards, int shards_per_client, int k,
                           double eval_fraction, RngStream& rng);

// Domain d goes to client d mod k. Train/eval splits are carved per domain
// from the dataset seed, so the evaluated pool is independent of k.
Partition partition_domains(const Dataset& ds, int k, double eval_fraction);

std::pair<std::vector<size_t>, std::vector<size_t>> split_train_eval(std::vector<size_t> indices,
                                                                     double eval_fraction,
                                                                     RngStream& rng);

/// Carve a domain-balanced pretraining pool (first) from the dataset;
/// returns {pool, remainder}. The pool never overlaps federated client data.
std::pair<Dataset, Dataset> split_pretrain_pool(const Dataset& ds, double fraction,
                                                RngStream& rng);

// Dataset cache files, format FVLM-DATA/1.
std::vector<std::byte> serialize_dataset(const Dataset& ds);
Dataset parse_dataset(std::span<const std::byte> bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace fedlora
