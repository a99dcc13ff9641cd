#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedlora/linalg.hpp"

namespace fedlora {

/// What a client shares with the server each round.
///   PLora    — B is aggregated, A stays personal and local.
///   FullLora — both A and B are aggregated (the standard-LoRA baseline).
///   FfaLora  — A is frozen at its initial value, only B trains and aggregates.
enum class StrategyKind : uint8_t { PLora = 0, FullLora = 1, FfaLora = 2 };

std::string_view strategy_name(StrategyKind s);
StrategyKind strategy_from_name(std::string_view name);

/// How the adapter path is scaled: the conventional alpha/rank, or alpha taken
/// as the multiplier directly. Runtime knob, not part of the checkpoint format.
enum class ScaleConvention : uint8_t { AlphaOverRank = 0, AlphaDirect = 1 };

struct LoraAdapter {
    Matrix A;  // r×n
    Matrix B;  // m×r, zero at init so B·A starts as the zero update
    int rank = 0;
    double alpha = 0.0;
    double dropout = 0.0;
    StrategyKind strategy = StrategyKind::PLora;
    ScaleConvention scale_convention = ScaleConvention::AlphaOverRank;

    int out_dim() const { return B.rows; }  // m
    int in_dim() const { return A.cols; }   // n
    double scale() const {
        return scale_convention == ScaleConvention::AlphaOverRank ? alpha / double(rank) : alpha;
    }
};

LoraAdapter init_adapter(int m, int n, int rank, double alpha, double dropout,
                         StrategyKind strategy, RngStream& rng);

/// Client → server message. PLora and FfaLora payloads structurally contain
/// no A coefficients; byte_size is the exact serialized length.
struct UplinkPayload {
    int client_id = 0;
    int round = 0;
    int in_dim = 0;  // n, recorded even when A itself is not shipped
    Matrix B;
    std::optional<Matrix> A;  // engaged only under FullLora
    int64_t sample_count = 0;
    size_t byte_size = 0;
};

// Fixed serialized header sizes (bytes before the coefficient block).
inline constexpr size_t kUplinkHeaderBytes = 40;
inline constexpr size_t kDownlinkHeaderBytes = 29;
inline constexpr size_t kAdapterHeaderBytes = 41;

UplinkPayload extract_uplink(const LoraAdapter& adapter, StrategyKind strategy,
                             int64_t sample_count, int client_id, int round);

std::vector<std::byte> serialize_uplink(const UplinkPayload& payload);
UplinkPayload parse_uplink(std::span<const std::byte> bytes);

/// Server → client broadcast after aggregation.
struct AggregatedUpdate {
    Matrix B;
    std::optional<Matrix> A;
};

std::vector<std::byte> serialize_downlink(const AggregatedUpdate& update, StrategyKind strategy,
                                          int round);

LoraAdapter install_downlink(const LoraAdapter& adapter, const AggregatedUpdate& global,
                             StrategyKind strategy);

/// W0 + s·B·A, materialized. Inspection and tests only, never the training path.
Matrix effective_weights(const Matrix& w0, const LoraAdapter& adapter);

// Checkpoint I/O, format FVLM-ADPT/1. Round-trips bit-identically.
struct BadShape : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::byte> serialize_adapter(const LoraAdapter& adapter);
LoraAdapter parse_adapter(std::span<const std::byte> bytes);
void save_adapter(const std::string& path, const LoraAdapter& adapter);
LoraAdapter load_adapter(const std::string& path);

/// SHA-256 over a matrix's raw coefficients; used by freeze contracts.
std::string matrix_digest(const Matrix& m);

}  // namespace fedlora
