#include "fedlora/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedlora/bytes.hpp"
#include "fedlora/metrics.hpp"

namespace fedlora {

namespace {

constexpr std::string_view kBaseMagic = "FVLM-BASE/1";
constexpr uint8_t kBaseVersion = 1;

enum : int64_t {
    kTagProjection = 1,
    kTagExtractor = 2,
    kTagHead = 3,
    kTagPretrainShuffle = 4,
    kTagHoldout = 5,
};

void validate(const ModelConfig& c) {
    if (c.visual_dim < 1 || c.text_dim < 1 || c.visual_tokens < 1 || c.text_tokens < 1 ||
        c.hidden_dim < 1) {
        throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    }
    if (c.num_classes < 2) throw std::invalid_argument("ModelConfig: need num_classes >= 2");
}

void check_example(const ModelConfig& c, const Example& ex) {
    if (ex.visual.rows != c.visual_tokens || ex.visual.cols != c.visual_dim ||
        ex.text.rows != c.text_tokens || ex.text.cols != c.text_dim) {
        throw std::invalid_argument("example shapes (visual " + ex.visual.shape_str() + ", text " +
                                    ex.text.shape_str() + ") do not match model config");
    }
}

LinearLayer gaussian_layer(int out, int in, RngStream& rng) {
    LinearLayer l;
    l.weight = gaussian_matrix(out, in, 1.0 / std::sqrt(double(in)), rng);
    l.bias.assign(size_t(out), 0.0);
    return l;
}

void write_matrix(ByteWriter& w, const Matrix& m) {
    w.u32(uint32_t(m.rows));
    w.u32(uint32_t(m.cols));
    for (double v : m.data) w.f64(v);
}

Matrix read_matrix(ByteReader& r) {
    const int rows = int(r.u32());
    const int cols = int(r.u32());
    if (rows < 1 || cols < 1 || rows > (1 << 20) || cols > (1 << 20)) {
        throw BadMagic("base checkpoint: implausible matrix shape");
    }
    std::vector<double> data(size_t(rows) * size_t(cols));
    for (double& v : data) v = r.f64();
    return Matrix(rows, cols, std::move(data));
}

void write_layer(ByteWriter& w, const LinearLayer& l) {
    write_matrix(w, l.weight);
    w.u8(l.bias.empty() ? 0 : 1);
    for (double v : l.bias) w.f64(v);
}

LinearLayer read_layer(ByteReader& r) {
    LinearLayer l;
    l.weight = read_matrix(r);
    if (r.u8() != 0) {
        l.bias.resize(size_t(l.weight.rows));
        for (double& v : l.bias) v = r.f64();
    }
    return l;
}

}  // namespace

FrozenBase build_base(const ModelConfig& cfg, RngStream& rng) {
    validate(cfg);
    FrozenBase base;
    base.config = cfg;
    RngStream prng = rng.child(kTagProjection);
    base.projection.P =
        gaussian_matrix(cfg.text_dim, cfg.visual_dim, 1.0 / std::sqrt(double(cfg.visual_dim)), prng);
    RngStream erng = rng.child(kTagExtractor);
    base.extractor.push_back(gaussian_layer(cfg.hidden_dim, cfg.concat_dim(), erng));
    RngStream hrng = rng.child(kTagHead);
    base.head = gaussian_layer(cfg.num_classes, cfg.hidden_dim, hrng);
    return base;
}

std::vector<double> project_concat(const Matrix& visual, const Matrix& text,
                                   const ProjectionLayer& proj) {
    if (visual.cols != proj.P.cols) {
        throw std::invalid_argument("project_concat: visual dim " + std::to_string(visual.cols) +
                                    " vs projection " + proj.P.shape_str());
    }
    if (text.cols != proj.P.rows) {
        throw std::invalid_argument("project_concat: text dim " + std::to_string(text.cols) +
                                    " vs projection " + proj.P.shape_str());
    }
    const Matrix projected = matmul(visual, transpose(proj.P));  // N_v × D_t
    std::vector<double> out;
    out.reserve(projected.data.size() + text.data.size());
    out.insert(out.end(), projected.data.begin(), projected.data.end());
    out.insert(out.end(), text.data.begin(), text.data.end());
    return out;
}

std::vector<double> extract_features(const FrozenBase& base, const Example& ex) {
    check_example(base.config, ex);
    std::vector<double> h = project_concat(ex.visual, ex.text, base.projection);
    for (const LinearLayer& layer : base.extractor) {
        h = relu(linear_forward(layer, h));
    }
    return h;
}

std::vector<double> base_forward(const FrozenBase& base, const Example& ex) {
    return linear_forward(base.head, extract_features(base, ex));
}

std::vector<double> forward_adapted(const FrozenBase& base, const LoraAdapter& adapter,
                                    const Example& ex, RunMode mode, RngStream& rng) {
    if (mode == RunMode::Train && adapter.dropout > 0.0) {
        const DropoutMask mask = make_dropout_mask(base.config.hidden_dim, adapter.dropout, rng);
        return forward_adapted_masked(base, adapter, ex, mask);
    }
    return forward_adapted_masked(base, adapter, ex, keep_all_mask(base.config.hidden_dim));
}

std::vector<double> forward_adapted_masked(const FrozenBase& base, const LoraAdapter& adapter,
                                           const Example& ex, const DropoutMask& mask) {
    return lora_forward(base.head, adapter, extract_features(base, ex), mask);
}

FrozenBase pretrain_base(FrozenBase base, const Dataset& pool, int epochs, double lr,
                         int batch_size) {
    if (base.meta.frozen) {
        throw std::invalid_argument("pretrain_base: base is already frozen; pretraining happens "
                                    "once, before federation");
    }
    if (pool.size() == 0) throw std::invalid_argument("pretrain_base: empty pretraining pool");
    if (epochs < 0 || lr <= 0.0 || batch_size < 1) {
        throw std::invalid_argument("pretrain_base: invalid epochs/lr/batch_size");
    }

    // held-out slice for the recorded accuracy, carved from the base seed
    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), size_t(0));
    RngStream holdout_rng = RngStream(base.config.seed).child(kTagHoldout);
    holdout_rng.shuffle(order);
    const size_t held = std::max<size_t>(1, pool.size() / 5);
    std::vector<size_t> holdout(order.begin(), order.begin() + ptrdiff_t(held));
    std::vector<size_t> train(order.begin() + ptrdiff_t(held), order.end());
    if (train.empty()) train = holdout;  // degenerate pools train and test on the same slice

    const int hidden = base.config.hidden_dim;
    const int concat = base.config.concat_dim();

    RngStream shuffle_rng = RngStream(base.config.seed).child(kTagPretrainShuffle);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        RngStream ernd = shuffle_rng.child(epoch);
        ernd.shuffle(train);
        for (size_t start = 0; start < train.size(); start += size_t(batch_size)) {
            const size_t stop = std::min(train.size(), start + size_t(batch_size));
            const double inv = 1.0 / double(stop - start);

            Matrix d_head(base.config.num_classes, hidden);
            std::vector<double> d_head_bias(size_t(base.config.num_classes), 0.0);
            Matrix d_hidden(hidden, concat);
            std::vector<double> d_hidden_bias(size_t(hidden), 0.0);
            Matrix d_proj(base.config.text_dim, base.config.visual_dim);

            for (size_t bi = start; bi < stop; ++bi) {
                const Example& ex = pool.examples[train[bi]];
                check_example(base.config, ex);

                const std::vector<double> concat_v = project_concat(ex.visual, ex.text, base.projection);
                const LinearLayer& hl = base.extractor.front();
                const std::vector<double> pre = linear_forward(hl, concat_v);
                const std::vector<double> act = relu(pre);
                const std::vector<double> logits = linear_forward(base.head, act);
                const CeResult ce = softmax_cross_entropy(logits, ex.label);

                // head
                for (int i = 0; i < base.config.num_classes; ++i) {
                    d_head_bias[size_t(i)] += inv * ce.dlogits[size_t(i)];
                    for (int j = 0; j < hidden; ++j) {
                        d_head.at(i, j) += inv * ce.dlogits[size_t(i)] * act[size_t(j)];
                    }
                }
                // hidden (through ReLU)
                std::vector<double> d_act = matvec_t(base.head.weight, ce.dlogits);
                for (int j = 0; j < hidden; ++j) {
                    if (pre[size_t(j)] <= 0.0) d_act[size_t(j)] = 0.0;
                }
                for (int j = 0; j < hidden; ++j) {
                    d_hidden_bias[size_t(j)] += inv * d_act[size_t(j)];
                    for (int q = 0; q < concat; ++q) {
                        d_hidden.at(j, q) += inv * d_act[size_t(j)] * concat_v[size_t(q)];
                    }
                }
                // projection: upstream block for V·Pᵀ is the first N_v rows of
                // the unflattened concat gradient; dP = dYᵀ·V
                const std::vector<double> d_concat = matvec_t(hl.weight, d_act);
                const int dv = base.config.visual_dim;
                const int dt = base.config.text_dim;
                for (int t = 0; t < base.config.visual_tokens; ++t) {
                    for (int j = 0; j < dt; ++j) {
                        const double up = d_concat[size_t(t) * size_t(dt) + size_t(j)];
                        if (up == 0.0) continue;
                        for (int q = 0; q < dv; ++q) {
                            d_proj.at(j, q) += inv * up * ex.visual.at(t, q);
                        }
                    }
                }
            }

            for (size_t i = 0; i < base.head.weight.data.size(); ++i)
                base.head.weight.data[i] -= lr * d_head.data[i];
            for (size_t i = 0; i < base.head.bias.size(); ++i)
                base.head.bias[i] -= lr * d_head_bias[i];
            LinearLayer& hl = base.extractor.front();
            for (size_t i = 0; i < hl.weight.data.size(); ++i)
                hl.weight.data[i] -= lr * d_hidden.data[i];
            for (size_t i = 0; i < hl.bias.size(); ++i) hl.bias[i] -= lr * d_hidden_bias[i];
            for (size_t i = 0; i < base.projection.P.data.size(); ++i)
                base.projection.P.data[i] -= lr * d_proj.data[i];
        }
    }

    int64_t correct = 0;
    for (size_t i : holdout) {
        const std::vector<double> logits = base_forward(base, pool.examples[i]);
        if (argmax_lowest_tie(logits) == pool.examples[i].label) ++correct;
    }
    base.meta.epochs = epochs;
    base.meta.pool_size = int64_t(pool.size());
    base.meta.holdout_accuracy = double(correct) / double(holdout.size());
    base.meta.frozen = true;
    return base;
}

std::vector<std::byte> serialize_base(const FrozenBase& base) {
    ByteWriter w;
    w.magic(kBaseMagic);
    w.u8(kBaseVersion);
    w.u32(uint32_t(base.config.visual_dim));
    w.u32(uint32_t(base.config.text_dim));
    w.u32(uint32_t(base.config.visual_tokens));
    w.u32(uint32_t(base.config.text_tokens));
    w.u32(uint32_t(base.config.hidden_dim));
    w.u32(uint32_t(base.config.num_classes));
    w.u64(base.config.seed);
    w.u32(uint32_t(base.meta.epochs));
    w.i64(base.meta.pool_size);
    w.f64(base.meta.holdout_accuracy);
    w.u8(base.meta.frozen ? 1 : 0);
    write_matrix(w, base.projection.P);
    w.u32(uint32_t(base.extractor.size()));
    for (const LinearLayer& l : base.extractor) write_layer(w, l);
    write_layer(w, base.head);
    return w.take();
}

FrozenBase parse_base(std::span<const std::byte> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kBaseMagic, "base checkpoint");
    if (r.u8() != kBaseVersion) throw BadMagic("base checkpoint: unsupported version");
    FrozenBase base;
    base.config.visual_dim = int(r.u32());
    base.config.text_dim = int(r.u32());
    base.config.visual_tokens = int(r.u32());
    base.config.text_tokens = int(r.u32());
    base.config.hidden_dim = int(r.u32());
    base.config.num_classes = int(r.u32());
    base.config.seed = r.u64();
    base.meta.epochs = int(r.u32());
    base.meta.pool_size = r.i64();
    base.meta.holdout_accuracy = r.f64();
    base.meta.frozen = r.u8() != 0;
    base.projection.P = read_matrix(r);
    const uint32_t layers = r.u32();
    if (layers > 64) throw BadMagic("base checkpoint: implausible extractor depth");
    for (uint32_t i = 0; i < layers; ++i) base.extractor.push_back(read_layer(r));
    base.head = read_layer(r);
    if (r.remaining() != 0) throw TruncatedInput("base checkpoint: trailing bytes");
    return base;
}

void save_base(const std::string& path, const FrozenBase& base) {
    write_file_bytes(path, serialize_base(base));
}

FrozenBase load_base(const std::string& path) { return parse_base(read_file_bytes(path)); }

std::string base_digest(const FrozenBase& base) {
    const auto bytes = serialize_base(base);
    return sha256_hex(bytes);
}

}  // namespace fedlora
