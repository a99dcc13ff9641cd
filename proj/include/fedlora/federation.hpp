#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedlora/adapters.hpp"
#include "fedlora/config.hpp"
#include "fedlora/data.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/model.hpp"

namespace fedlora {

struct LocalHyper {
    double lr = 1e-3;
    int batch_size = 16;
    int local_epochs = 3;
    double prox_mu = 0.0;
};

struct ClientState {
    int id = 0;
    std::vector<size_t> train_idx;
    std::vector<size_t> eval_idx;
    LoraAdapter adapter;
    LocalHyper hyper;
};

enum class AggregatorKind { Mean, Weighted };

struct ServerState {
    int round = 0;  // rounds completed so far
    AggregatorKind aggregator = AggregatorKind::Mean;
    std::optional<AggregatedUpdate> last_update;
};

struct ClientRoundMetrics {
    int client_id = 0;
    double sgd_train_loss = 0.0;      // mean minibatch loss, final local epoch
    MetricsReport train;              // post-downlink, client train split
    MetricsReport eval;               // post-downlink, client eval split
    MetricsReport local_eval;         // pre-aggregation, after local training
};

struct RoundReport {
    int round = 0;
    std::vector<ClientRoundMetrics> clients;
    MetricsReport pooled_eval;  // post-downlink, union of all client eval splits
    uint64_t uplink_bytes = 0;
    uint64_t downlink_bytes = 0;
    double wall_seconds = 0.0;  // in-memory only; never written to output files

    double mean_eval_accuracy() const;
    double mean_eval_loss() const;
};

struct RoundContext {
    uint64_t master_seed = 0;
    int round = 0;  // 1-based round number being executed
};

/// Fixed RNG-path tags; the whole experiment's randomness is a pure function
/// of (master_seed, these tags, client/round/epoch/step indices).
enum RngTag : int64_t {
    kRngData = 101,
    kRngPool = 102,
    kRngModel = 103,
    kRngPartition = 104,
    kRngAdapter = 105,
    kRngShuffle = 106,
    kRngDropout = 107,
    kRngParticipation = 108,
    kRngSharedAdapter = 109,
};

// One client's local pass: local_epochs of minibatch SGD on the sequence
// cross-entropy, per-batch shuffle from the client's own stream. With
// prox_mu > 0 each trainable matrix M also descends mu*(M - M_at_downlink).
// FfaLora never updates A. The frozen base is untouched.
ClientState local_train(const ClientState& client, const FrozenBase& base, const Dataset& ds,
                        const RoundContext& ctx, const LoraAdapter* downlink_reference,
                        double* out_mean_loss = nullptr);

// Anchored mean: B1 + sum_k w_k (B_k - B1), so averaging identical payloads
// returns them bit-exactly. Mean is weighted with all counts equal.
AggregatedUpdate aggregate_mean(std::span<const UplinkPayload> payloads);
AggregatedUpdate aggregate_weighted(std::span<const UplinkPayload> payloads);

MetricsReport evaluate_client(const FrozenBase& base, const LoraAdapter& adapter,
                              const Dataset& ds, std::span<const size_t> indices,
                              ConfusionMatrix* pooled_cm = nullptr,
                              std::vector<double>* pooled_losses = nullptr);

/// One full round: local training on every selected client, uplink, server
/// aggregation, downlink to all clients, post-downlink evaluation. On any
/// client failure the round aborts and `clients` keeps its round-t state.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const FrozenBase& base, const Dataset& ds, const RoundContext& ctx,
                      double participation = 1.0, int jobs = 1);

struct ExperimentResult {
    std::vector<RoundReport> rounds;  // rounds[0] is the untrained baseline
    FrozenBase base;
    std::vector<ClientState> clients;
    Dataset fed_data;  // the federated slice the clients trained on
    std::string base_digest_before;
    std::string base_digest_after;
};

/// Build data, pretrain, partition, run all rounds. `jobs > 1` trains clients
/// concurrently; reports are bit-identical either way.
ExperimentResult run_experiment(const ExperimentConfig& cfg, int jobs = 1);

}  // namespace fedlora
