#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedlora {

// Reader ran past the end of its input.
struct TruncatedInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Magic string at the head of a container did not match.
struct BadMagic : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Little-endian byte sink shared by every on-disk format and wire payload.
class ByteWriter {
public:
    void u8(uint8_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void i64(int64_t v);
    void f64(double v);
    void raw(const void* p, size_t n);
    void magic(std::string_view tag);

    [[nodiscard]] const std::vector<std::byte>& data() const { return buf_; }
    [[nodiscard]] std::vector<std::byte> take() { return std::move(buf_); }
    [[nodiscard]] size_t size() const { return buf_.size(); }

private:
    std::vector<std::byte> buf_;
};

/// Little-endian byte source; throws TruncatedInput on short reads.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::byte> data) : data_(data) {}

    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    int64_t i64();
    double f64();
    void expect_magic(std::string_view tag, std::string_view what);

    [[nodiscard]] size_t remaining() const { return data_.size() - pos_; }

private:
    void need(size_t n) const;

    std::span<const std::byte> data_;
    size_t pos_ = 0;
};

std::array<uint8_t, 32> sha256(std::span<const std::byte> data);
std::string sha256_hex(std::span<const std::byte> data);

std::vector<std::byte> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::byte> data);

}  // namespace fedlora
