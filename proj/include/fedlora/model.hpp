#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlora/adapters.hpp"
#include "fedlora/data.hpp"
#include "fedlora/layers.hpp"
#include "fedlora/linalg.hpp"

namespace fedlora {

struct ModelConfig {
    int visual_dim = 8;
    int text_dim = 4;
    int visual_tokens = 2;
    int text_tokens = 2;
    int hidden_dim = 64;
    int num_classes = 8;
    uint64_t seed = 0;

    int concat_dim() const { return (visual_tokens + text_tokens) * text_dim; }
};

/// Maps visual embeddings into the text embedding space; frozen after build.
struct ProjectionLayer {
    Matrix P;  // D_t × D_v
};

struct PretrainMeta {
    int epochs = 0;
    int64_t pool_size = 0;
    double holdout_accuracy = 0.0;
    bool frozen = false;
};

/// The pre-trained network. Everything here is immutable during federated
/// fine-tuning; the head's weight matrix is the adapter attachment point.
struct FrozenBase {
    ModelConfig config;
    ProjectionLayer projection;
    std::vector<LinearLayer> extractor;  // ReLU after each layer
    LinearLayer head;                    // W0: C × H
    PretrainMeta meta;
};

FrozenBase build_base(const ModelConfig& cfg, RngStream& rng);

/// Flatten of the row-concatenation [V·Pᵀ ; T], length (N_v+N_t)·D_t.
std::vector<double> project_concat(const Matrix& visual, const Matrix& text,
                                   const ProjectionLayer& proj);

/// Projection + extractor; returns the head's input (length H).
std::vector<double> extract_features(const FrozenBase& base, const Example& ex);

/// Forward through the frozen head, no adapter.
std::vector<double> base_forward(const FrozenBase& base, const Example& ex);

enum class RunMode { Train, Eval };

std::vector<double> forward_adapted(const FrozenBase& base, const LoraAdapter& adapter,
                                    const Example& ex, RunMode mode, RngStream& rng);

/// Same forward with an explicit adapter-path mask; the training loop and the
/// gradient checks share this path.
std::vector<double> forward_adapted_masked(const FrozenBase& base, const LoraAdapter& adapter,
                                           const Example& ex, const DropoutMask& mask);

// Full-network SGD on the pooled pretraining split, then freeze. Rejected if
// the base is already frozen. epochs == 0 leaves parameters bit-identical.
FrozenBase pretrain_base(FrozenBase base, const Dataset& pool, int epochs, double lr,
                         int batch_size = 32);

// Checkpoint I/O, format FVLM-BASE/1.
std::vector<std::byte> serialize_base(const FrozenBase& base);
FrozenBase parse_base(std::span<const std::byte> bytes);
void save_base(const std::string& path, const FrozenBase& base);
FrozenBase load_base(const std::string& path);

/// SHA-256 over the serialized base; the freeze contract's fingerprint.
std::string base_digest(const FrozenBase& base);

}  // namespace fedlora
