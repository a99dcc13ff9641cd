#include "fedlora/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedlora {

namespace {

void check_adapter_against(const LinearLayer& w0, const LoraAdapter& adapter) {
    const int m = w0.out_dim();
    const int n = w0.in_dim();
    if (adapter.rank >= std::min(m, n)) {
        throw std::invalid_argument("adapter rank " + std::to_string(adapter.rank) +
                                    " is not low-rank for a " + w0.weight.shape_str() + " layer");
    }
    if (adapter.out_dim() != m || adapter.in_dim() != n) {
        throw std::invalid_argument("adapter shapes (B " + adapter.B.shape_str() + ", A " +
                                    adapter.A.shape_str() + ") do not match layer " +
                                    w0.weight.shape_str());
    }
    if (adapter.A.rows != adapter.rank || adapter.B.cols != adapter.rank) {
        throw std::invalid_argument("adapter rank field disagrees with matrix shapes");
    }
}

}  // namespace

std::vector<double> linear_forward(const LinearLayer& layer, std::span<const double> x) {
    if (size_t(layer.in_dim()) != x.size()) {
        throw std::invalid_argument("linear_forward: layer " + layer.weight.shape_str() +
                                    " vs input length " + std::to_string(x.size()));
    }
    std::vector<double> y = matvec(layer.weight, x);
    if (!layer.bias.empty()) {
        if (layer.bias.size() != y.size()) {
            throw std::invalid_argument("linear_forward: bias length mismatch");
        }
        for (size_t i = 0; i < y.size(); ++i) y[i] += layer.bias[i];
    }
    return y;
}

DropoutMask keep_all_mask(int dim) {
    DropoutMask m;
    m.keep.assign(size_t(dim), 1);
    m.rate = 0.0;
    m.scale = 1.0;
    return m;
}

DropoutMask make_dropout_mask(int dim, double rate, RngStream& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("make_dropout_mask: rate must be in [0,1), got " +
                                    std::to_string(rate));
    }
    if (rate == 0.0) return keep_all_mask(dim);
    DropoutMask m;
    m.rate = rate;
    m.scale = 1.0 / (1.0 - rate);
    m.keep.resize(size_t(dim));
    for (auto& k : m.keep) k = rng.next_double() >= rate ? 1 : 0;
    return m;
}

std::vector<double> apply_mask(const DropoutMask& mask, std::span<const double> x) {
    if (mask.keep.size() != x.size()) {
        throw std::invalid_argument("apply_mask: mask dim " + std::to_string(mask.keep.size()) +
                                    " vs input length " + std::to_string(x.size()));
    }
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = mask.keep[i] ? x[i] * mask.scale : 0.0;
    return out;
}

std::vector<double> lora_forward(const LinearLayer& w0, const LoraAdapter& adapter,
                                 std::span<const double> x, const DropoutMask& mask) {
    check_adapter_against(w0, adapter);
    std::vector<double> h = linear_forward(w0, x);
    const std::vector<double> xt = apply_mask(mask, x);
    const std::vector<double> ax = matvec(adapter.A, xt);   // r
    const std::vector<double> bax = matvec(adapter.B, ax);  // m
    const double s = adapter.scale();
    for (size_t i = 0; i < h.size(); ++i) h[i] += s * bax[i];
    return h;
}

GradPair lora_backward(const LinearLayer& w0, const LoraAdapter& adapter,
                       std::span<const double> x, const DropoutMask& mask,
                       std::span<const double> upstream) {
    check_adapter_against(w0, adapter);
    if (upstream.size() != size_t(adapter.out_dim())) {
        throw std::invalid_argument("lora_backward: upstream length " +
                                    std::to_string(upstream.size()) + " vs output dim " +
                                    std::to_string(adapter.out_dim()));
    }
    const std::vector<double> xt = apply_mask(mask, x);
    const std::vector<double> ax = matvec(adapter.A, xt);          // r
    const std::vector<double> btu = matvec_t(adapter.B, upstream);  // r
    const double s = adapter.scale();
    GradPair g;
    g.dB = scale(outer(upstream, ax), s);  // m×r
    g.dA = scale(outer(btu, xt), s);       // r×n
    return g;
}

CeResult softmax_cross_entropy(std::span<const double> logits, int target_class) {
    if (logits.size() < 2) {
        throw std::invalid_argument("softmax_cross_entropy: need at least 2 classes");
    }
    if (target_class < 0 || size_t(target_class) >= logits.size()) {
        throw std::invalid_argument("softmax_cross_entropy: target " +
                                    std::to_string(target_class) + " out of range for " +
                                    std::to_string(logits.size()) + " classes");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    CeResult res;
    res.dlogits.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        res.dlogits[i] = std::exp(logits[i] - mx);
        z += res.dlogits[i];
    }
    for (double& p : res.dlogits) p /= z;
    res.loss = -(logits[size_t(target_class)] - mx - std::log(z));
    res.dlogits[size_t(target_class)] -= 1.0;
    return res;
}

SeqCeResult sequence_cross_entropy(std::span<const std::vector<double>> step_logits,
                                   std::span<const int> targets) {
    if (step_logits.empty()) {
        throw std::invalid_argument("sequence_cross_entropy: empty sequence");
    }
    if (step_logits.size() != targets.size()) {
        throw std::invalid_argument("sequence_cross_entropy: " + std::to_string(step_logits.size()) +
                                    " steps vs " + std::to_string(targets.size()) + " targets");
    }
    SeqCeResult res;
    res.dlogits.reserve(step_logits.size());
    for (size_t i = 0; i < step_logits.size(); ++i) {
        CeResult step = softmax_cross_entropy(step_logits[i], targets[i]);
        res.loss += step.loss;
        res.dlogits.push_back(std::move(step.dlogits));
    }
    return res;
}

std::vector<double> relu(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

}  // namespace fedlora
