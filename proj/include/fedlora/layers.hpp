#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedlora/adapters.hpp"
#include "fedlora/linalg.hpp"

namespace fedlora {

/// Dense layer y = Wx (+ bias). Layers belonging to the frozen base never
/// change after pretraining completes.
struct LinearLayer {
    Matrix weight;             // out×in
    std::vector<double> bias;  // length out, or empty for no bias

    int in_dim() const { return weight.cols; }
    int out_dim() const { return weight.rows; }
};

std::vector<double> linear_forward(const LinearLayer& layer, std::span<const double> x);

/// Inverted-dropout mask: kept coordinates are scaled by 1/(1-rate) so the
/// masked signal is unbiased in expectation. A pure function of its RNG path.
struct DropoutMask {
    std::vector<uint8_t> keep;
    double rate = 0.0;
    double scale = 1.0;
};

DropoutMask keep_all_mask(int dim);
DropoutMask make_dropout_mask(int dim, double rate, RngStream& rng);
std::vector<double> apply_mask(const DropoutMask& mask, std::span<const double> x);

struct GradPair {
    Matrix dA;  // r×n
    Matrix dB;  // m×r
};

// h = W0·x (+ bias) + s·B·A·(mask⊙x). Dropout touches only the adapter path,
// so a zero B leaves the frozen-base output bit-exact.
std::vector<double> lora_forward(const LinearLayer& w0, const LoraAdapter& adapter,
                                 std::span<const double> x, const DropoutMask& mask);

// With x̃ = mask⊙x:  dB = s·upstream·(A·x̃)ᵀ,  dA = s·(Bᵀ·upstream)·x̃ᵀ.
// W0 is frozen and receives no gradient.
GradPair lora_backward(const LinearLayer& w0, const LoraAdapter& adapter,
                       std::span<const double> x, const DropoutMask& mask,
                       std::span<const double> upstream);

struct CeResult {
    double loss = 0.0;
    std::vector<double> dlogits;
};

/// Single-token cross-entropy, max-stabilized. dlogits = softmax - onehot(target).
CeResult softmax_cross_entropy(std::span<const double> logits, int target_class);

struct SeqCeResult {
    double loss = 0.0;
    std::vector<std::vector<double>> dlogits;  // per step
};

/// Teacher-forced sum of per-step cross-entropies over an output sequence.
SeqCeResult sequence_cross_entropy(std::span<const std::vector<double>> step_logits,
                                   std::span<const int> targets);

std::vector<double> relu(std::span<const double> x);

}  // namespace fedlora
