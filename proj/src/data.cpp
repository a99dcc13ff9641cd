#include "fedlora/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedlora/bytes.hpp"

namespace fedlora {

namespace {

constexpr double kNoiseStd = 1.0;
constexpr std::string_view kDataMagic = "FVLM-DATA/1";
constexpr uint8_t kDataVersion = 1;

// rng path tags local to data generation
enum : int64_t {
    kTagCentroids = 1,
    kTagRotations = 2,
    kTagSamples = 3,
    kTagDomainSplit = 4,
};

void validate(const MixtureConfig& c) {
    if (c.num_classes < 2) throw std::invalid_argument("gen_mixture: need at least 2 classes");
    if (c.visual_dim < 1 || c.text_dim < 1 || c.visual_tokens < 1 || c.text_tokens < 1) {
        throw std::invalid_argument("gen_mixture: dimensions must be positive");
    }
    if (c.per_class < 1) throw std::invalid_argument("gen_mixture: per_class must be >= 1");
    if (c.separation <= 0.0) throw std::invalid_argument("gen_mixture: separation must be > 0");
    if (c.num_domains < 1 || c.num_domains > c.num_classes) {
        throw std::invalid_argument("gen_mixture: num_domains must be in [1, num_classes]");
    }
}

std::vector<double> rotated_noisy(const Matrix& rotation, std::span<const double> centroid,
                                  RngStream& rng) {
    std::vector<double> v(centroid.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = centroid[i] + kNoiseStd * rng.next_gaussian();
    return matvec(rotation, v);
}

}  // namespace

Dataset gen_mixture(const MixtureConfig& cfg, RngStream& rng) {
    validate(cfg);

    RngStream centroid_rng = rng.child(kTagCentroids);
    std::vector<std::vector<double>> visual_centroids(size_t(cfg.num_classes));
    std::vector<std::vector<double>> text_centroids(size_t(cfg.num_classes));
    for (int c = 0; c < cfg.num_classes; ++c) {
        RngStream crng = centroid_rng.child(c);
        visual_centroids[size_t(c)].resize(size_t(cfg.visual_dim));
        for (double& v : visual_centroids[size_t(c)]) v = cfg.separation * crng.next_gaussian();
        text_centroids[size_t(c)].resize(size_t(cfg.text_dim));
        for (double& v : text_centroids[size_t(c)]) v = cfg.separation * crng.next_gaussian();
    }

    RngStream rot_rng = rng.child(kTagRotations);
    std::vector<Matrix> visual_rot, text_rot;
    visual_rot.reserve(size_t(cfg.num_domains));
    text_rot.reserve(size_t(cfg.num_domains));
    for (int d = 0; d < cfg.num_domains; ++d) {
        RngStream drng = rot_rng.child(d);
        RngStream vr = drng.child(0);
        RngStream tr = drng.child(1);
        visual_rot.push_back(random_orthogonal(cfg.visual_dim, vr));
        text_rot.push_back(random_orthogonal(cfg.text_dim, tr));
    }

    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.num_domains = cfg.num_domains;
    ds.seed = rng.key();
    ds.gen = cfg;
    ds.examples.reserve(size_t(cfg.num_classes) * size_t(cfg.per_class));

    RngStream sample_rng = rng.child(kTagSamples);
    for (int c = 0; c < cfg.num_classes; ++c) {
        const int domain = c % cfg.num_domains;
        RngStream crng = sample_rng.child(c);
        for (int i = 0; i < cfg.per_class; ++i) {
            RngStream erng = crng.child(i);
            Example ex;
            ex.label = c;
            ex.visual = Matrix(cfg.visual_tokens, cfg.visual_dim);
            for (int t = 0; t < cfg.visual_tokens; ++t) {
                const auto row = rotated_noisy(visual_rot[size_t(domain)],
                                               visual_centroids[size_t(c)], erng);
                std::copy(row.begin(), row.end(), ex.visual.data.begin() + size_t(t) * cfg.visual_dim);
            }
            ex.text = Matrix(cfg.text_tokens, cfg.text_dim);
            for (int t = 0; t < cfg.text_tokens; ++t) {
                const auto row =
                    rotated_noisy(text_rot[size_t(domain)], text_centroids[size_t(c)], erng);
                std::copy(row.begin(), row.end(), ex.text.data.begin() + size_t(t) * cfg.text_dim);
            }
            ds.examples.push_back(std::move(ex));
            ds.domains.push_back(domain);
        }
    }
    return ds;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_train_eval(std::vector<size_t> indices,
                                                                     double eval_fraction,
                                                                     RngStream& rng) {
    if (eval_fraction <= 0.0 || eval_fraction >= 1.0) {
        throw std::invalid_argument("split_train_eval: eval_fraction must be in (0,1), got " +
                                    std::to_string(eval_fraction));
    }
    if (indices.size() < 2) {
        throw std::invalid_argument("split_train_eval: need at least 2 indices, got " +
                                    std::to_string(indices.size()));
    }
    rng.shuffle(indices);
    size_t eval_n = size_t(std::llround(double(indices.size()) * eval_fraction));
    eval_n = std::clamp<size_t>(eval_n, 1, indices.size() - 1);
    std::vector<size_t> eval(indices.begin(), indices.begin() + ptrdiff_t(eval_n));
    std::vector<size_t> train(indices.begin() + ptrdiff_t(eval_n), indices.end());
    // sorted index lists keep downstream iteration order canonical
    std::sort(eval.begin(), eval.end());
    std::sort(train.begin(), train.end());
    return {std::move(train), std::move(eval)};
}

Partition partition_iid(const Dataset& ds, int k, double eval_fraction, RngStream& rng) {
    if (k < 1) throw std::invalid_argument("partition_iid: need k >= 1");
    if (ds.size() < size_t(k) * 2) {
        throw std::invalid_argument("partition_iid: dataset of " + std::to_string(ds.size()) +
                                    " cannot feed " + std::to_string(k) + " clients");
    }
    std::vector<size_t> order(ds.size());
    std::iota(order.begin(), order.end(), size_t(0));
    RngStream shuffle_rng = rng.child(0);
    shuffle_rng.shuffle(order);

    const size_t base = ds.size() / size_t(k);
    const size_t rem = ds.size() % size_t(k);
    Partition part;
    part.clients.resize(size_t(k));
    size_t pos = 0;
    for (int c = 0; c < k; ++c) {
        const size_t take = base + (size_t(c) < rem ? 1 : 0);  // remainder to lowest ids
        std::vector<size_t> slice(order.begin() + ptrdiff_t(pos),
                                  order.begin() + ptrdiff_t(pos + take));
        pos += take;
        RngStream split_rng = rng.child(1).child(c);
        auto [train, eval] = split_train_eval(std::move(slice), eval_fraction, split_rng);
        part.clients[size_t(c)] = {std::move(train), std::move(eval)};
    }
    return part;
}

Partition partition_shards(const Dataset& ds, int num_shards, int shards_per_client, int k,
                           double eval_fraction, RngStream& rng) {
    if (k < 1 || shards_per_client < 1) {
        throw std::invalid_argument("partition_shards: k and shards_per_client must be >= 1");
    }
    if (num_shards != k * shards_per_client) {
        throw std::invalid_argument("partition_shards: num_shards (" + std::to_string(num_shards) +
                                    ") must equal k*shards_per_client (" +
                                    std::to_string(k * shards_per_client) + ")");
    }
    if (ds.size() < size_t(num_shards)) {
        throw std::invalid_argument("partition_shards: dataset of " + std::to_string(ds.size()) +
                                    " is smaller than " + std::to_string(num_shards) + " shards");
    }

    std::vector<size_t> order(ds.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return ds.examples[a].label < ds.examples[b].label;
    });

    std::vector<int> shard_ids(static_cast<size_t>(num_shards));
    std::iota(shard_ids.begin(), shard_ids.end(), 0);
    RngStream deal_rng = rng.child(0);
    deal_rng.shuffle(shard_ids);

    const size_t base = ds.size() / size_t(num_shards);
    const size_t rem = ds.size() % size_t(num_shards);
    auto shard_bounds = [&](int s) {
        // earliest shards absorb the remainder
        const size_t lo = size_t(s) * base + std::min<size_t>(size_t(s), rem);
        const size_t hi = lo + base + (size_t(s) < rem ? 1 : 0);
        return std::pair<size_t, size_t>{lo, hi};
    };

    Partition part;
    part.clients.resize(size_t(k));
    for (int c = 0; c < k; ++c) {
        std::vector<size_t> slice;
        for (int j = 0; j < shards_per_client; ++j) {
            const int s = shard_ids[size_t(c * shards_per_client + j)];
            const auto [lo, hi] = shard_bounds(s);
            for (size_t p = lo; p < hi; ++p) slice.push_back(order[p]);
        }
        RngStream split_rng = rng.child(1).child(c);
        auto [train, eval] = split_train_eval(std::move(slice), eval_fraction, split_rng);
        part.clients[size_t(c)] = {std::move(train), std::move(eval)};
    }
    return part;
}

Partition partition_domains(const Dataset& ds, int k, double eval_fraction) {
    if (k < 1) throw std::invalid_argument("partition_domains: need k >= 1");
    if (ds.num_domains < k) {
        throw std::invalid_argument("partition_domains: dataset has " +
                                    std::to_string(ds.num_domains) + " domains, fewer than " +
                                    std::to_string(k) + " clients");
    }

    std::vector<std::vector<size_t>> by_domain(size_t(ds.num_domains));
    for (size_t i = 0; i < ds.size(); ++i) by_domain[size_t(ds.domains[i])].push_back(i);

    Partition part;
    part.clients.resize(size_t(k));
    for (int d = 0; d < ds.num_domains; ++d) {
        if (by_domain[size_t(d)].empty()) {
            throw std::invalid_argument("partition_domains: domain " + std::to_string(d) +
                                        " is empty");
        }
        // split per domain from the dataset seed; client assignment never
        // shifts which examples are train vs eval
        RngStream split_rng = RngStream(ds.seed).child(kTagDomainSplit).child(d);
        auto [train, eval] = split_train_eval(by_domain[size_t(d)], eval_fraction, split_rng);
        ClientSplit& dst = part.clients[size_t(d % k)];
        dst.train.insert(dst.train.end(), train.begin(), train.end());
        dst.eval.insert(dst.eval.end(), eval.begin(), eval.end());
    }
    for (auto& c : part.clients) {
        std::sort(c.train.begin(), c.train.end());
        std::sort(c.eval.begin(), c.eval.end());
    }
    return part;
}

std::pair<Dataset, Dataset> split_pretrain_pool(const Dataset& ds, double fraction,
                                                RngStream& rng) {
    if (fraction <= 0.0 || fraction >= 1.0) {
        throw std::invalid_argument("split_pretrain_pool: fraction must be in (0,1)");
    }
    std::vector<std::vector<size_t>> by_domain(size_t(std::max(ds.num_domains, 1)));
    for (size_t i = 0; i < ds.size(); ++i) by_domain[size_t(ds.domains[i])].push_back(i);

    std::vector<uint8_t> in_pool(ds.size(), 0);
    for (int d = 0; d < int(by_domain.size()); ++d) {
        auto& idx = by_domain[size_t(d)];
        RngStream drng = rng.child(d);
        drng.shuffle(idx);
        const size_t take = std::max<size_t>(1, size_t(std::llround(double(idx.size()) * fraction)));
        for (size_t j = 0; j < take && j < idx.size(); ++j) in_pool[idx[j]] = 1;
    }

    Dataset pool, rest;
    for (Dataset* out : {&pool, &rest}) {
        out->num_classes = ds.num_classes;
        out->num_domains = ds.num_domains;
        out->seed = ds.seed;
        out->gen = ds.gen;
    }
    for (size_t i = 0; i < ds.size(); ++i) {
        Dataset& dst = in_pool[i] ? pool : rest;
        dst.examples.push_back(ds.examples[i]);
        dst.domains.push_back(ds.domains[i]);
    }
    return {std::move(pool), std::move(rest)};
}

std::vector<std::byte> serialize_dataset(const Dataset& ds) {
    ByteWriter w;
    w.magic(kDataMagic);
    w.u8(kDataVersion);
    w.u32(uint32_t(ds.num_classes));
    w.u32(uint32_t(ds.num_domains));
    w.u64(ds.seed);
    w.u32(uint32_t(ds.gen.num_classes));
    w.u32(uint32_t(ds.gen.visual_dim));
    w.u32(uint32_t(ds.gen.text_dim));
    w.u32(uint32_t(ds.gen.visual_tokens));
    w.u32(uint32_t(ds.gen.text_tokens));
    w.u32(uint32_t(ds.gen.per_class));
    w.u32(uint32_t(ds.gen.num_domains));
    w.f64(ds.gen.separation);
    w.u64(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        const Example& ex = ds.examples[i];
        w.u32(uint32_t(ex.label));
        w.u32(uint32_t(ds.domains[i]));
        for (double v : ex.visual.data) w.f64(v);
        for (double v : ex.text.data) w.f64(v);
    }
    return w.take();
}

Dataset parse_dataset(std::span<const std::byte> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kDataMagic, "dataset file");
    if (r.u8() != kDataVersion) throw BadMagic("dataset file: unsupported version");
    Dataset ds;
    ds.num_classes = int(r.u32());
    ds.num_domains = int(r.u32());
    ds.seed = r.u64();
    ds.gen.num_classes = int(r.u32());
    ds.gen.visual_dim = int(r.u32());
    ds.gen.text_dim = int(r.u32());
    ds.gen.visual_tokens = int(r.u32());
    ds.gen.text_tokens = int(r.u32());
    ds.gen.per_class = int(r.u32());
    ds.gen.num_domains = int(r.u32());
    ds.gen.separation = r.f64();
    const uint64_t n = r.u64();
    ds.examples.reserve(n);
    ds.domains.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        Example ex;
        ex.label = int(r.u32());
        ds.domains.push_back(int(r.u32()));
        std::vector<double> vis(size_t(ds.gen.visual_tokens) * size_t(ds.gen.visual_dim));
        for (double& v : vis) v = r.f64();
        ex.visual = Matrix(ds.gen.visual_tokens, ds.gen.visual_dim, std::move(vis));
        std::vector<double> txt(size_t(ds.gen.text_tokens) * size_t(ds.gen.text_dim));
        for (double& v : txt) v = r.f64();
        ex.text = Matrix(ds.gen.text_tokens, ds.gen.text_dim, std::move(txt));
        ds.examples.push_back(std::move(ex));
    }
    if (r.remaining() != 0) throw TruncatedInput("dataset file: trailing bytes");
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    write_file_bytes(path, serialize_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return parse_dataset(read_file_bytes(path)); }

}  // namespace fedlora
