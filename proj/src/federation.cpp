#include "fedlora/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <stdexcept>

namespace fedlora {

double RoundReport::mean_eval_accuracy() const {
    if (clients.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& c : clients) acc += c.eval.accuracy;
    return acc / double(clients.size());
}

double RoundReport::mean_eval_loss() const {
    if (clients.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& c : clients) acc += c.eval.mean_loss;
    return acc / double(clients.size());
}

ClientState local_train(const ClientState& client, const FrozenBase& base, const Dataset& ds,
                        const RoundContext& ctx, const LoraAdapter* downlink_reference,
                        double* out_mean_loss) {
    const double mu = client.hyper.prox_mu;
    if (mu > 0.0 && downlink_reference == nullptr) {
        throw std::invalid_argument("local_train: prox_mu > 0 requires the downlink reference");
    }
    if (client.train_idx.empty()) {
        throw std::invalid_argument("local_train: client " + std::to_string(client.id) +
                                    " has no training data");
    }

    ClientState out = client;
    LoraAdapter& adapter = out.adapter;
    const bool train_a = adapter.strategy != StrategyKind::FfaLora;
    const int hidden = base.config.hidden_dim;

    RngStream shuffle_root =
        RngStream(ctx.master_seed).child(kRngShuffle).child(client.id).child(ctx.round);
    RngStream dropout_root =
        RngStream(ctx.master_seed).child(kRngDropout).child(client.id).child(ctx.round);

    double last_epoch_loss = 0.0;
    std::vector<size_t> order = out.train_idx;
    for (int epoch = 0; epoch < client.hyper.local_epochs; ++epoch) {
        RngStream erng = shuffle_root.child(epoch);
        erng.shuffle(order);
        RngStream drng = dropout_root.child(epoch);

        double epoch_loss = 0.0;
        int64_t step = 0;
        for (size_t start = 0; start < order.size(); start += size_t(client.hyper.batch_size)) {
            const size_t stop = std::min(order.size(), start + size_t(client.hyper.batch_size));
            const double inv = 1.0 / double(stop - start);
            RngStream srng = drng.child(step++);

            Matrix grad_a(adapter.A.rows, adapter.A.cols);
            Matrix grad_b(adapter.B.rows, adapter.B.cols);

            for (size_t bi = start; bi < stop; ++bi) {
                const Example& ex = ds.examples[order[bi]];
                const DropoutMask mask =
                    adapter.dropout > 0.0
                        ? make_dropout_mask(hidden, adapter.dropout, srng)
                        : keep_all_mask(hidden);
                const std::vector<double> features = extract_features(base, ex);
                const std::vector<double> logits = lora_forward(base.head, adapter, features, mask);
                const std::vector<std::vector<double>> steps = {logits};
                const std::vector<int> targets = {ex.label};
                const SeqCeResult ce = sequence_cross_entropy(steps, targets);
                epoch_loss += ce.loss;
                const GradPair g = lora_backward(base.head, adapter, features, mask, ce.dlogits[0]);
                for (size_t i = 0; i < grad_a.data.size(); ++i) grad_a.data[i] += inv * g.dA.data[i];
                for (size_t i = 0; i < grad_b.data.size(); ++i) grad_b.data[i] += inv * g.dB.data[i];
            }

            if (mu > 0.0) {
                for (size_t i = 0; i < grad_b.data.size(); ++i) {
                    grad_b.data[i] += mu * (adapter.B.data[i] - downlink_reference->B.data[i]);
                }
                if (train_a) {
                    for (size_t i = 0; i < grad_a.data.size(); ++i) {
                        grad_a.data[i] += mu * (adapter.A.data[i] - downlink_reference->A.data[i]);
                    }
                }
            }

            const double lr = client.hyper.lr;
            for (size_t i = 0; i < adapter.B.data.size(); ++i) adapter.B.data[i] -= lr * grad_b.data[i];
            if (train_a) {
                for (size_t i = 0; i < adapter.A.data.size(); ++i)
                    adapter.A.data[i] -= lr * grad_a.data[i];
            }
        }
        last_epoch_loss = epoch_loss / double(order.size());
    }
    if (out_mean_loss) *out_mean_loss = last_epoch_loss;
    return out;
}

namespace {

Matrix anchored_average(std::span<const Matrix* const> matrices, std::span<const double> weights,
                        const char* what) {
    const Matrix& first = *matrices.front();
    Matrix acc(first.rows, first.cols);
    for (size_t k = 0; k < matrices.size(); ++k) {
        const Matrix& m = *matrices[k];
        if (m.rows != first.rows || m.cols != first.cols) {
            throw std::invalid_argument("aggregate: payload " + std::to_string(k) + " has " +
                                        std::string(what) + " shape " + m.shape_str() +
                                        ", expected " + first.shape_str());
        }
        for (size_t i = 0; i < acc.data.size(); ++i) {
            acc.data[i] += weights[k] * (m.data[i] - first.data[i]);
        }
    }
    return add(first, acc);
}

AggregatedUpdate aggregate_with_weights(std::span<const UplinkPayload> payloads,
                                        std::span<const double> weights) {
    const bool any_a = payloads.front().A.has_value();
    std::vector<const Matrix*> bs, as;
    for (const auto& p : payloads) {
        if (p.A.has_value() != any_a) {
            throw std::invalid_argument("aggregate: payloads disagree on whether A is shipped");
        }
        bs.push_back(&p.B);
        if (any_a) as.push_back(&*p.A);
    }
    AggregatedUpdate out;
    out.B = anchored_average(bs, weights, "B");
    if (any_a) out.A = anchored_average(as, weights, "A");
    return out;
}

}  // namespace

AggregatedUpdate aggregate_mean(std::span<const UplinkPayload> payloads) {
    if (payloads.empty()) throw std::invalid_argument("aggregate_mean: no payloads");
    const double k = double(payloads.size());
    std::vector<double> weights(payloads.size(), 1.0 / k);
    return aggregate_with_weights(payloads, weights);
}

AggregatedUpdate aggregate_weighted(std::span<const UplinkPayload> payloads) {
    if (payloads.empty()) throw std::invalid_argument("aggregate_weighted: no payloads");
    int64_t total = 0;
    for (const auto& p : payloads) {
        if (p.sample_count <= 0) {
            throw std::invalid_argument("aggregate_weighted: client " +
                                        std::to_string(p.client_id) + " has sample_count " +
                                        std::to_string(p.sample_count));
        }
        total += p.sample_count;
    }
    std::vector<double> weights;
    weights.reserve(payloads.size());
    for (const auto& p : payloads) weights.push_back(double(p.sample_count) / double(total));
    return aggregate_with_weights(payloads, weights);
}

MetricsReport evaluate_client(const FrozenBase& base, const LoraAdapter& adapter,
                              const Dataset& ds, std::span<const size_t> indices,
                              ConfusionMatrix* pooled_cm, std::vector<double>* pooled_losses) {
    if (indices.empty()) throw std::invalid_argument("evaluate_client: no examples");
    ConfusionMatrix cm(ds.num_classes);
    std::vector<double> losses;
    losses.reserve(indices.size());
    const DropoutMask mask = keep_all_mask(base.config.hidden_dim);
    for (size_t idx : indices) {
        const Example& ex = ds.examples[idx];
        const std::vector<double> logits = forward_adapted_masked(base, adapter, ex, mask);
        const int pred = argmax_lowest_tie(logits);
        ++cm.at(ex.label, pred);
        losses.push_back(softmax_cross_entropy(logits, ex.label).loss);
    }
    if (pooled_cm) pooled_cm->merge(cm);
    if (pooled_losses) pooled_losses->insert(pooled_losses->end(), losses.begin(), losses.end());
    return macro_metrics(cm, losses);
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const FrozenBase& base, const Dataset& ds, const RoundContext& ctx,
                      double participation, int jobs) {
    if (clients.empty()) throw std::invalid_argument("run_round: no clients");
    const auto t0 = std::chrono::steady_clock::now();

    // participation: deterministic choice of which clients train this round
    std::vector<int> selected(clients.size());
    std::iota(selected.begin(), selected.end(), 0);
    if (participation < 1.0) {
        const int keep = std::max<int>(1, int(std::llround(participation * double(clients.size()))));
        RngStream prng = RngStream(ctx.master_seed).child(kRngParticipation).child(ctx.round);
        prng.shuffle(selected);
        selected.resize(size_t(keep));
        std::sort(selected.begin(), selected.end());
    }

    // local training into fresh states; `clients` is committed only at the end
    std::vector<ClientState> trained(clients.size());
    std::vector<double> sgd_loss(clients.size(), 0.0);
    auto train_one = [&](int ci) {
        const ClientState& c = clients[size_t(ci)];
        const LoraAdapter reference = c.adapter;  // value at downlink
        return local_train(c, base, ds, ctx, &reference, &sgd_loss[size_t(ci)]);
    };
    if (jobs > 1) {
        std::vector<std::future<ClientState>> futures(clients.size());
        for (int ci : selected) {
            futures[size_t(ci)] = std::async(std::launch::async, train_one, ci);
        }
        // barrier: every selected client must report before aggregation;
        // a failure surfaces here and leaves `clients` untouched
        std::exception_ptr first_error;
        for (int ci : selected) {
            try {
                trained[size_t(ci)] = futures[size_t(ci)].get();
            } catch (...) {
                if (!first_error) first_error = std::current_exception();
            }
        }
        if (first_error) std::rethrow_exception(first_error);
    } else {
        for (int ci : selected) trained[size_t(ci)] = train_one(ci);
    }
    for (size_t ci = 0; ci < clients.size(); ++ci) {
        if (!std::binary_search(selected.begin(), selected.end(), int(ci))) {
            trained[ci] = clients[ci];  // unselected clients carry state forward
        }
    }

    RoundReport report;
    report.round = ctx.round;
    report.clients.resize(clients.size());

    // uplink
    std::vector<UplinkPayload> payloads;
    payloads.reserve(selected.size());
    uint64_t uplink_bytes = 0;
    for (int ci : selected) {
        const ClientState& c = trained[size_t(ci)];
        UplinkPayload p = extract_uplink(c.adapter, c.adapter.strategy,
                                         int64_t(c.train_idx.size()), c.id, ctx.round);
        uplink_bytes += p.byte_size;
        payloads.push_back(std::move(p));
    }

    // pre-aggregation ("local") evaluation
    for (size_t ci = 0; ci < trained.size(); ++ci) {
        report.clients[ci].client_id = trained[ci].id;
        report.clients[ci].sgd_train_loss = sgd_loss[ci];
        report.clients[ci].local_eval =
            evaluate_client(base, trained[ci].adapter, ds, trained[ci].eval_idx);
    }

    // aggregate and broadcast
    const AggregatedUpdate update = server.aggregator == AggregatorKind::Mean
                                        ? aggregate_mean(payloads)
                                        : aggregate_weighted(payloads);
    const uint64_t downlink_unit =
        serialize_downlink(update, trained.front().adapter.strategy, ctx.round).size();
    for (auto& c : trained) {
        c.adapter = install_downlink(c.adapter, update, c.adapter.strategy);
    }
    report.uplink_bytes = uplink_bytes;
    report.downlink_bytes = downlink_unit * uint64_t(trained.size());

    // post-downlink evaluation is what the per-round tables report
    ConfusionMatrix pooled_cm(ds.num_classes);
    std::vector<double> pooled_losses;
    for (size_t ci = 0; ci < trained.size(); ++ci) {
        report.clients[ci].train =
            evaluate_client(base, trained[ci].adapter, ds, trained[ci].train_idx);
        report.clients[ci].eval = evaluate_client(base, trained[ci].adapter, ds,
                                                  trained[ci].eval_idx, &pooled_cm, &pooled_losses);
    }
    report.pooled_eval = macro_metrics(pooled_cm, pooled_losses);

    server.last_update = update;
    server.round = ctx.round;
    clients = std::move(trained);  // commit

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

namespace {

Partition build_partition(const ExperimentConfig& cfg, const Dataset& fed_data, int clients,
                          RngStream& rng) {
    if (cfg.data.partition == "iid") {
        return partition_iid(fed_data, clients, cfg.data.eval_fraction, rng);
    }
    if (cfg.data.partition == "shard") {
        return partition_shards(fed_data, cfg.data.num_shards, cfg.data.shards_per_client, clients,
                                cfg.data.eval_fraction, rng);
    }
    return partition_domains(fed_data, clients, cfg.data.eval_fraction);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, int jobs) {
    validate_config(cfg);
    const bool centralized = cfg.mode == "centralized";
    const int num_clients = centralized ? 1 : cfg.fed.clients;

    MixtureConfig mix;
    mix.num_classes = cfg.data.num_classes;
    mix.visual_dim = cfg.data.visual_dim;
    mix.text_dim = cfg.data.text_dim;
    mix.visual_tokens = cfg.data.visual_tokens;
    mix.text_tokens = cfg.data.text_tokens;
    mix.per_class = cfg.data.per_class;
    mix.num_domains = cfg.data.num_domains;
    mix.separation = cfg.data.separation;

    RngStream data_rng = RngStream(cfg.seed).child(kRngData);
    const Dataset full = gen_mixture(mix, data_rng);
    RngStream pool_rng = RngStream(cfg.seed).child(kRngPool);
    auto [pool, fed_data] = split_pretrain_pool(full, cfg.data.pretrain_fraction, pool_rng);

    ModelConfig mc;
    mc.visual_dim = cfg.data.visual_dim;
    mc.text_dim = cfg.data.text_dim;
    mc.visual_tokens = cfg.data.visual_tokens;
    mc.text_tokens = cfg.data.text_tokens;
    mc.hidden_dim = cfg.model.hidden_dim;
    mc.num_classes = cfg.data.num_classes;
    mc.seed = cfg.seed;

    RngStream model_rng = RngStream(cfg.seed).child(kRngModel);
    FrozenBase base = build_base(mc, model_rng);
    base = pretrain_base(std::move(base), pool, cfg.model.pretrain_epochs, cfg.model.pretrain_lr,
                         cfg.model.pretrain_batch);

    ExperimentResult result;
    result.base_digest_before = base_digest(base);

    // centralized mode pools everything into one iid "client"
    ExperimentConfig effective = cfg;
    if (centralized) effective.data.partition = "iid";
    RngStream part_rng = RngStream(cfg.seed).child(kRngPartition);
    const Partition part = build_partition(effective, fed_data, num_clients, part_rng);

    const StrategyKind strategy = strategy_from_name(cfg.adapter.strategy);
    const ScaleConvention convention = cfg.adapter.scale_mode == "alpha"
                                           ? ScaleConvention::AlphaDirect
                                           : ScaleConvention::AlphaOverRank;

    std::vector<ClientState> clients(static_cast<size_t>(num_clients));
    for (int ci = 0; ci < num_clients; ++ci) {
        ClientState& c = clients[size_t(ci)];
        c.id = ci;
        c.train_idx = part.clients[size_t(ci)].train;
        c.eval_idx = part.clients[size_t(ci)].eval;
        c.hyper = {cfg.fed.lr, cfg.fed.batch_size, cfg.fed.local_epochs, cfg.fed.prox_mu};
        // under ffa_lora the shared_frozen_a switch gives every client one
        // common frozen A instead of a personal one
        const bool shared = strategy == StrategyKind::FfaLora && cfg.adapter.shared_frozen_a;
        RngStream arng = shared ? RngStream(cfg.seed).child(kRngSharedAdapter)
                                : RngStream(cfg.seed).child(kRngAdapter).child(ci);
        c.adapter = init_adapter(cfg.data.num_classes, cfg.model.hidden_dim, cfg.adapter.rank,
                                 cfg.adapter.alpha, cfg.adapter.dropout, strategy, arng);
        c.adapter.scale_convention = convention;
    }

    ServerState server;
    server.aggregator =
        cfg.fed.aggregator == "weighted" ? AggregatorKind::Weighted : AggregatorKind::Mean;

    // round 0: the no-fine-tuning baseline with the fresh (zero-B) adapters
    {
        RoundReport r0;
        r0.round = 0;
        r0.clients.resize(clients.size());
        ConfusionMatrix pooled_cm(fed_data.num_classes);
        std::vector<double> pooled_losses;
        for (size_t ci = 0; ci < clients.size(); ++ci) {
            r0.clients[ci].client_id = clients[ci].id;
            r0.clients[ci].train =
                evaluate_client(base, clients[ci].adapter, fed_data, clients[ci].train_idx);
            r0.clients[ci].eval = evaluate_client(base, clients[ci].adapter, fed_data,
                                                  clients[ci].eval_idx, &pooled_cm, &pooled_losses);
            r0.clients[ci].local_eval = r0.clients[ci].eval;
        }
        r0.pooled_eval = macro_metrics(pooled_cm, pooled_losses);
        result.rounds.push_back(std::move(r0));
    }

    for (int round = 1; round <= cfg.fed.rounds; ++round) {
        RoundContext ctx{cfg.seed, round};
        result.rounds.push_back(
            run_round(server, clients, base, fed_data, ctx, cfg.fed.participation, jobs));
    }

    result.base_digest_after = base_digest(base);
    result.base = std::move(base);
    result.clients = std::move(clients);
    result.fed_data = std::move(fed_data);
    return result;
}

}  // namespace fedlora
