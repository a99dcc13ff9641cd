#include "fedlora/adapters.hpp"

#include <cmath>

#include "fedlora/bytes.hpp"

namespace fedlora {

namespace {

constexpr std::string_view kUplinkMagic = "FVLM-UPLK/1";    // 11 bytes
constexpr std::string_view kDownlinkMagic = "FVLM-DNLK/1";  // 11 bytes
constexpr std::string_view kAdapterMagic = "FVLM-ADPT/1";   // 11 bytes
constexpr uint8_t kAdapterVersion = 1;

// Guard against absurd shapes when parsing untrusted bytes.
constexpr uint32_t kMaxDim = 1u << 20;

void write_coeffs(ByteWriter& w, const Matrix& m) {
    for (double v : m.data) w.f64(v);
}

Matrix read_coeffs(ByteReader& r, int rows, int cols) {
    std::vector<double> data(size_t(rows) * size_t(cols));
    for (double& v : data) v = r.f64();
    return Matrix(rows, cols, std::move(data));
}

void check_strategy_shapes(const Matrix& A, const Matrix& B, int rank) {
    if (A.rows != rank || B.cols != rank) {
        throw std::invalid_argument("adapter: A is " + A.shape_str() + ", B is " + B.shape_str() +
                                    ", inconsistent with rank " + std::to_string(rank));
    }
}

}  // namespace

std::string_view strategy_name(StrategyKind s) {
    switch (s) {
        case StrategyKind::PLora: return "plora";
        case StrategyKind::FullLora: return "full_lora";
        case StrategyKind::FfaLora: return "ffa_lora";
    }
    throw std::invalid_argument("strategy_name: unknown strategy tag");
}

StrategyKind strategy_from_name(std::string_view name) {
    if (name == "plora") return StrategyKind::PLora;
    if (name == "full_lora") return StrategyKind::FullLora;
    if (name == "ffa_lora") return StrategyKind::FfaLora;
    throw std::invalid_argument("unknown strategy \"" + std::string(name) +
                                "\" (expected plora, full_lora, or ffa_lora)");
}

LoraAdapter init_adapter(int m, int n, int rank, double alpha, double dropout,
                         StrategyKind strategy, RngStream& rng) {
    if (rank < 1 || rank >= std::min(m, n)) {
        throw std::invalid_argument("init_adapter: rank " + std::to_string(rank) +
                                    " is not low-rank for " + std::to_string(m) + "x" +
                                    std::to_string(n) + " (need 1 <= r < min(m,n))");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("init_adapter: dropout must be in [0,1), got " +
                                    std::to_string(dropout));
    }
    LoraAdapter a;
    // A ~ N(0, 1/n) keeps ||A·x|| comparable to ||x||; B starts at zero so the
    // adapted model is exactly the frozen base on round 0.
    a.A = gaussian_matrix(rank, n, 1.0 / std::sqrt(double(n)), rng);
    a.B = Matrix(m, rank);
    a.rank = rank;
    a.alpha = alpha;
    a.dropout = dropout;
    a.strategy = strategy;
    return a;
}

UplinkPayload extract_uplink(const LoraAdapter& adapter, StrategyKind strategy,
                             int64_t sample_count, int client_id, int round) {
    if (adapter.strategy != strategy) {
        throw std::invalid_argument("extract_uplink: adapter strategy " +
                                    std::string(strategy_name(adapter.strategy)) +
                                    " does not match requested " +
                                    std::string(strategy_name(strategy)));
    }
    UplinkPayload p;
    p.client_id = client_id;
    p.round = round;
    p.in_dim = adapter.in_dim();
    p.B = adapter.B;
    if (strategy == StrategyKind::FullLora) p.A = adapter.A;
    p.sample_count = sample_count;
    p.byte_size = serialize_uplink(p).size();
    return p;
}

std::vector<std::byte> serialize_uplink(const UplinkPayload& payload) {
    ByteWriter w;
    w.magic(kUplinkMagic);
    w.u8(payload.A.has_value() ? 1 : 0);
    w.u32(uint32_t(payload.client_id));
    w.u32(uint32_t(payload.round));
    w.u32(uint32_t(payload.B.rows));   // m
    w.u32(uint32_t(payload.in_dim));   // n
    w.u32(uint32_t(payload.B.cols));   // r
    w.i64(payload.sample_count);
    write_coeffs(w, payload.B);
    if (payload.A) write_coeffs(w, *payload.A);
    return w.take();
}

UplinkPayload parse_uplink(std::span<const std::byte> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kUplinkMagic, "uplink payload");
    const bool has_a = r.u8() != 0;
    UplinkPayload p;
    p.client_id = int(r.u32());
    p.round = int(r.u32());
    const uint32_t m = r.u32();
    const uint32_t n = r.u32();
    const uint32_t rank = r.u32();
    if (m == 0 || n == 0 || rank == 0 || m > kMaxDim || n > kMaxDim || rank > kMaxDim) {
        throw BadShape("uplink payload: implausible shape m=" + std::to_string(m) +
                       " n=" + std::to_string(n) + " r=" + std::to_string(rank));
    }
    p.in_dim = int(n);
    p.sample_count = r.i64();
    p.B = read_coeffs(r, int(m), int(rank));
    if (has_a) p.A = read_coeffs(r, int(rank), int(n));
    if (r.remaining() != 0) {
        throw TruncatedInput("uplink payload: " + std::to_string(r.remaining()) +
                             " trailing bytes");
    }
    p.byte_size = bytes.size();
    return p;
}

std::vector<std::byte> serialize_downlink(const AggregatedUpdate& update, StrategyKind strategy,
                                          int round) {
    ByteWriter w;
    w.magic(kDownlinkMagic);
    w.u8(uint8_t(strategy));
    w.u32(uint32_t(round));
    w.u32(uint32_t(update.B.rows));
    w.u32(uint32_t(update.A ? update.A->cols : update.B.cols));
    w.u32(uint32_t(update.B.cols));
    w.u8(update.A.has_value() ? 1 : 0);
    write_coeffs(w, update.B);
    if (update.A) write_coeffs(w, *update.A);
    return w.take();
}

LoraAdapter install_downlink(const LoraAdapter& adapter, const AggregatedUpdate& global,
                             StrategyKind strategy) {
    if (adapter.strategy != strategy) {
        throw std::invalid_argument("install_downlink: strategy mismatch");
    }
    if (global.B.rows != adapter.B.rows || global.B.cols != adapter.B.cols) {
        throw std::invalid_argument("install_downlink: aggregated B is " + global.B.shape_str() +
                                    ", adapter expects " + adapter.B.shape_str());
    }
    LoraAdapter out = adapter;
    out.B = global.B;
    if (strategy == StrategyKind::FullLora) {
        if (!global.A) {
            throw std::invalid_argument("install_downlink: full_lora downlink lacks A");
        }
        if (global.A->rows != adapter.A.rows || global.A->cols != adapter.A.cols) {
            throw std::invalid_argument("install_downlink: aggregated A is " +
                                        global.A->shape_str() + ", adapter expects " +
                                        adapter.A.shape_str());
        }
        out.A = *global.A;
    }
    // PLora and FfaLora keep A bit-identical
    return out;
}

Matrix effective_weights(const Matrix& w0, const LoraAdapter& adapter) {
    check_strategy_shapes(adapter.A, adapter.B, adapter.rank);
    if (w0.rows != adapter.out_dim() || w0.cols != adapter.in_dim()) {
        throw std::invalid_argument("effective_weights: W0 is " + w0.shape_str() +
                                    ", adapter produces " + std::to_string(adapter.out_dim()) +
                                    "x" + std::to_string(adapter.in_dim()));
    }
    return add(w0, scale(matmul(adapter.B, adapter.A), adapter.scale()));
}

std::vector<std::byte> serialize_adapter(const LoraAdapter& adapter) {
    check_strategy_shapes(adapter.A, adapter.B, adapter.rank);
    ByteWriter w;
    w.magic(kAdapterMagic);
    w.u8(kAdapterVersion);
    w.u8(uint8_t(adapter.strategy));
    w.u32(uint32_t(adapter.out_dim()));
    w.u32(uint32_t(adapter.in_dim()));
    w.u32(uint32_t(adapter.rank));
    w.f64(adapter.alpha);
    w.f64(adapter.dropout);
    write_coeffs(w, adapter.B);
    write_coeffs(w, adapter.A);
    return w.take();
}

LoraAdapter parse_adapter(std::span<const std::byte> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kAdapterMagic, "adapter checkpoint");
    const uint8_t version = r.u8();
    if (version != kAdapterVersion) {
        throw BadMagic("adapter checkpoint: unsupported version " + std::to_string(version));
    }
    const uint8_t strat = r.u8();
    if (strat > uint8_t(StrategyKind::FfaLora)) {
        throw BadMagic("adapter checkpoint: unknown strategy tag " + std::to_string(strat));
    }
    const uint32_t m = r.u32();
    const uint32_t n = r.u32();
    const uint32_t rank = r.u32();
    if (m == 0 || n == 0 || rank == 0 || m > kMaxDim || n > kMaxDim || rank > kMaxDim ||
        rank >= std::min(m, n)) {
        throw BadShape("adapter checkpoint: implausible shape m=" + std::to_string(m) +
                       " n=" + std::to_string(n) + " r=" + std::to_string(rank));
    }
    LoraAdapter a;
    a.strategy = StrategyKind(strat);
    a.rank = int(rank);
    a.alpha = r.f64();
    a.dropout = r.f64();
    a.B = read_coeffs(r, int(m), int(rank));
    a.A = read_coeffs(r, int(rank), int(n));
    if (r.remaining() != 0) {
        throw TruncatedInput("adapter checkpoint: " + std::to_string(r.remaining()) +
                             " trailing bytes");
    }
    return a;
}

void save_adapter(const std::string& path, const LoraAdapter& adapter) {
    const auto bytes = serialize_adapter(adapter);
    write_file_bytes(path, bytes);
}

LoraAdapter load_adapter(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return parse_adapter(bytes);
}

std::string matrix_digest(const Matrix& m) {
    ByteWriter w;
    w.u32(uint32_t(m.rows));
    w.u32(uint32_t(m.cols));
    write_coeffs(w, m);
    return sha256_hex(w.data());
}

}  // namespace fedlora
