#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedlora {

/// Dense row-major 2-D array of doubles. The universal numeric carrier;
/// immutable by convention once handed to another module.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(int r, int c);                              // zeros
    Matrix(int r, int c, std::vector<double> values);  // validates length and finiteness

    static Matrix identity(int n);

    double& at(int i, int j) { return data[size_t(i) * cols + j]; }
    double at(int i, int j) const { return data[size_t(i) * cols + j]; }
    size_t size() const { return data.size(); }
    std::string shape_str() const;

    bool operator==(const Matrix&) const = default;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Matrix outer(std::span<const double> u, std::span<const double> v);

std::vector<double> matvec(const Matrix& m, std::span<const double> x);    // m·x
std::vector<double> matvec_t(const Matrix& m, std::span<const double> x);  // mᵀ·x

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);

// Deterministic counter-based stream: the value sequence is a pure function
// of (master_seed, path), independent of platform and call schedule. Distinct
// paths give statistically independent streams, so concurrent clients can
// each own a stream without coordination.
class RngStream {
public:
    explicit RngStream(uint64_t master_seed);
    RngStream(uint64_t master_seed, std::span<const int64_t> path);

    /// Derive the sub-stream at `tag`; the parent is left untouched.
    RngStream child(int64_t tag) const;

    /// Derived key identifying this stream; stable across platforms.
    uint64_t key() const { return key_; }

    uint64_t next_u64();
    double next_double();    // uniform [0, 1)
    double next_gaussian();  // standard normal, Box-Muller
    uint64_t next_below(uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Matrix gaussian_matrix(int rows, int cols, double stddev, RngStream& rng);

/// Random orthogonal matrix (Gram-Schmidt on a Gaussian draw).
Matrix random_orthogonal(int n, RngStream& rng);

}  // namespace fedlora
