#include <doctest.h>

#include <stdexcept>

#include <cstdio>
#include <filesystem>

#include "fedlora/adapters.hpp"
#include "fedlora/bytes.hpp"
#include "fedlora/layers.hpp"

using namespace fedlora;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* stem) {
    static int counter = 0;
    return (fs::temp_directory_path() / (std::string("fedlora_") + stem + "_" +
                                         std::to_string(++counter) + ".bin"))
        .string();
}

LoraAdapter sample_adapter(uint64_t seed, StrategyKind strategy = StrategyKind::PLora) {
    RngStream rng(seed);
    return init_adapter(16, 32, 4, 8.0, 0.1, strategy, rng);
}

}  // namespace

TEST_SUITE("adapters") {

TEST_CASE("fresh adapters start as the zero update") {
    const LoraAdapter a = sample_adapter(1);
    CHECK(max_abs(a.B) == 0.0);
    CHECK(max_abs(matmul(a.B, a.A)) == 0.0);
}

TEST_CASE("default shapes give effective scale 2") {
    const LoraAdapter a = sample_adapter(2);
    CHECK(a.scale() == 2.0);
}

TEST_CASE("distinct rng paths give distinct personal A matrices") {
    RngStream root(77);
    RngStream c0 = root.child(0);
    RngStream c1 = root.child(1);
    const LoraAdapter a0 = init_adapter(8, 16, 2, 8.0, 0.0, StrategyKind::PLora, c0);
    const LoraAdapter a1 = init_adapter(8, 16, 2, 8.0, 0.0, StrategyKind::PLora, c1);
    CHECK(a0.A != a1.A);
    CHECK(a0.B == a1.B);  // both zero
}

TEST_CASE("invalid rank is rejected") {
    RngStream rng(3);
    CHECK_THROWS_AS(init_adapter(4, 8, 4, 8.0, 0.1, StrategyKind::PLora, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(init_adapter(4, 8, 0, 8.0, 0.1, StrategyKind::PLora, rng),
                    std::invalid_argument);
}

TEST_CASE("payload coefficient counts per strategy") {
    const LoraAdapter p = sample_adapter(4, StrategyKind::PLora);
    const UplinkPayload up = extract_uplink(p, StrategyKind::PLora, 100, 0, 1);
    CHECK(up.B.size() == 64);  // m*r
    CHECK_FALSE(up.A.has_value());

    const LoraAdapter f = sample_adapter(5, StrategyKind::FullLora);
    const UplinkPayload uf = extract_uplink(f, StrategyKind::FullLora, 100, 0, 1);
    CHECK(uf.B.size() + uf.A->size() == 192);  // m*r + r*n

    const LoraAdapter ffa = sample_adapter(6, StrategyKind::FfaLora);
    const UplinkPayload uffa = extract_uplink(ffa, StrategyKind::FfaLora, 100, 0, 1);
    CHECK(uffa.B.size() == up.B.size());
    CHECK_FALSE(uffa.A.has_value());
}

TEST_CASE("declared byte_size equals the serializer's output") {
    for (StrategyKind s : {StrategyKind::PLora, StrategyKind::FullLora, StrategyKind::FfaLora}) {
        const LoraAdapter a = sample_adapter(7, s);
        const UplinkPayload p = extract_uplink(a, s, 42, 3, 2);
        CHECK(p.byte_size == serialize_uplink(p).size());
        const size_t coeffs = s == StrategyKind::FullLora ? (16 * 4 + 4 * 32) : (16 * 4);
        CHECK(p.byte_size == kUplinkHeaderBytes + 8 * coeffs);
    }
}

TEST_CASE("strategy mismatch on extract is rejected") {
    const LoraAdapter a = sample_adapter(8, StrategyKind::PLora);
    CHECK_THROWS_AS(extract_uplink(a, StrategyKind::FullLora, 1, 0, 0), std::invalid_argument);
}

TEST_CASE("uplink payloads round-trip through bytes") {
    const LoraAdapter a = sample_adapter(9, StrategyKind::FullLora);
    LoraAdapter trained = a;
    RngStream rng(10);
    trained.B = gaussian_matrix(16, 4, 0.3, rng);
    const UplinkPayload p = extract_uplink(trained, StrategyKind::FullLora, 5, 2, 7);
    const UplinkPayload q = parse_uplink(serialize_uplink(p));
    CHECK(q.client_id == 2);
    CHECK(q.round == 7);
    CHECK(q.sample_count == 5);
    CHECK(q.B == p.B);
    CHECK(q.A == p.A);
    CHECK(q.in_dim == 32);
}

TEST_CASE("plora downlink keeps A bitwise and replaces B") {
    const LoraAdapter a = sample_adapter(11);
    RngStream rng(12);
    AggregatedUpdate g{gaussian_matrix(16, 4, 1.0, rng), std::nullopt};
    const LoraAdapter after = install_downlink(a, g, StrategyKind::PLora);
    CHECK(after.A == a.A);
    CHECK(after.B == g.B);
}

TEST_CASE("installing a zero B resets the model to the frozen base") {
    RngStream rng(13);
    LinearLayer w0{gaussian_matrix(16, 32, 1.0, rng), {}};
    LoraAdapter a = sample_adapter(14);
    a.B = gaussian_matrix(16, 4, 1.0, rng);  // pretend it trained
    const LoraAdapter reset = install_downlink(a, {Matrix(16, 4), std::nullopt}, StrategyKind::PLora);
    std::vector<double> x(32);
    for (double& v : x) v = rng.next_gaussian();
    CHECK(lora_forward(w0, reset, x, keep_all_mask(32)) == linear_forward(w0, x));
}

TEST_CASE("effective weights after install match the dense oracle") {
    RngStream rng(15);
    const Matrix w0 = gaussian_matrix(16, 32, 1.0, rng);
    LoraAdapter a = sample_adapter(16);
    AggregatedUpdate g{gaussian_matrix(16, 4, 1.0, rng), std::nullopt};
    const LoraAdapter after = install_downlink(a, g, StrategyKind::PLora);
    const Matrix eff = effective_weights(w0, after);
    // dense oracle: W0 + s * Bg * Ap, scalar loops
    const double s = after.scale();
    for (int i = 0; i < 16; ++i) {
        for (int j = 0; j < 32; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += g.B.at(i, k) * a.A.at(k, j);
            CHECK(eff.at(i, j) == doctest::Approx(w0.at(i, j) + s * acc).epsilon(1e-14));
        }
    }
}

TEST_CASE("effective weights of a fresh adapter equal W0 exactly") {
    RngStream rng(17);
    const Matrix w0 = gaussian_matrix(16, 32, 1.0, rng);
    CHECK(effective_weights(w0, sample_adapter(18)) == w0);
}

TEST_CASE("forward through effective weights equals lora_forward in eval mode") {
    RngStream rng(19);
    LinearLayer w0{gaussian_matrix(16, 32, 1.0, rng), {}};
    LoraAdapter a = sample_adapter(20);
    a.B = gaussian_matrix(16, 4, 0.5, rng);
    const Matrix eff = effective_weights(w0.weight, a);
    std::vector<double> x(32);
    for (double& v : x) v = rng.next_gaussian();
    const auto via_adapter = lora_forward(w0, a, x, keep_all_mask(32));
    const auto via_eff = matvec(eff, x);
    for (size_t i = 0; i < via_adapter.size(); ++i) {
        CHECK(std::abs(via_adapter[i] - via_eff[i]) < 1e-12);
    }
}

TEST_CASE("doubling alpha doubles the delta exactly") {
    RngStream rng(21);
    LoraAdapter a = sample_adapter(22);
    a.B = gaussian_matrix(16, 4, 0.5, rng);
    LoraAdapter a2 = a;
    a2.alpha = 2.0 * a.alpha;
    // against a zero W0 the materialized weights are the delta itself, so the
    // doubling is bit-exact
    const Matrix zero(16, 32);
    CHECK(effective_weights(zero, a2) == scale(effective_weights(zero, a), 2.0));
    // against a general W0 the identity holds to rounding
    const Matrix w0 = gaussian_matrix(16, 32, 1.0, rng);
    const Matrix d1 = sub(effective_weights(w0, a), w0);
    const Matrix d2 = sub(effective_weights(w0, a2), w0);
    for (size_t i = 0; i < d1.data.size(); ++i) {
        CHECK(d2.data[i] == doctest::Approx(2.0 * d1.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("adapter files round-trip bit-identically") {
    RngStream rng(23);
    LoraAdapter a = sample_adapter(24, StrategyKind::FfaLora);
    a.B = gaussian_matrix(16, 4, 0.7, rng);
    const std::string path = temp_path("roundtrip");
    save_adapter(path, a);
    const LoraAdapter b = load_adapter(path);
    CHECK(b.A == a.A);
    CHECK(b.B == a.B);
    CHECK(b.rank == a.rank);
    CHECK(b.alpha == a.alpha);
    CHECK(b.dropout == a.dropout);
    CHECK(b.strategy == a.strategy);
    fs::remove(path);
}

TEST_CASE("adapter file size equals header plus coefficients") {
    const LoraAdapter a = sample_adapter(25);
    const auto bytes = serialize_adapter(a);
    CHECK(bytes.size() == kAdapterHeaderBytes + 8 * (4 * 32 + 16 * 4));
}

TEST_CASE("truncated adapter files are reported as truncation, not garbage") {
    const LoraAdapter a = sample_adapter(26);
    auto bytes = serialize_adapter(a);
    bytes.resize(bytes.size() - 13);
    CHECK_THROWS_AS(parse_adapter(bytes), TruncatedInput);
}

TEST_CASE("bad magic is reported distinctly") {
    auto bytes = serialize_adapter(sample_adapter(27));
    bytes[0] = std::byte{'X'};
    CHECK_THROWS_AS(parse_adapter(bytes), BadMagic);
}

TEST_CASE("implausible shapes are reported distinctly") {
    auto bytes = serialize_adapter(sample_adapter(28));
    // corrupt the rank field (offset: 11 magic + 1 version + 1 strategy + 4 m + 4 n)
    bytes[21] = std::byte{0xff};
    bytes[22] = std::byte{0xff};
    bytes[23] = std::byte{0xff};
    bytes[24] = std::byte{0x7f};
    CHECK_THROWS_AS(parse_adapter(bytes), BadShape);
}

TEST_CASE("payload purity: structural scan finds no A in plora or ffa payloads") {
    for (StrategyKind s : {StrategyKind::PLora, StrategyKind::FfaLora}) {
        const LoraAdapter a = sample_adapter(29, s);
        const auto bytes = serialize_uplink(extract_uplink(a, s, 10, 0, 1));
        const UplinkPayload scanned = parse_uplink(bytes);
        CHECK_FALSE(scanned.A.has_value());
        CHECK(bytes.size() == kUplinkHeaderBytes + 8 * size_t(scanned.B.rows) * size_t(scanned.B.cols));
    }
}

TEST_CASE("ffa freeze: A digest is stable under extract/install cycles") {
    LoraAdapter a = sample_adapter(30, StrategyKind::FfaLora);
    const std::string digest0 = matrix_digest(a.A);
    RngStream rng(31);
    for (int round = 1; round <= 5; ++round) {
        a.B = gaussian_matrix(16, 4, 0.1, rng);  // stand-in for local training
        const UplinkPayload p = extract_uplink(a, StrategyKind::FfaLora, 10, 0, round);
        a = install_downlink(a, {p.B, std::nullopt}, StrategyKind::FfaLora);
        CHECK(matrix_digest(a.A) == digest0);
    }
}

}  // TEST_SUITE
