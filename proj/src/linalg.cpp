#include "fedlora/linalg.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fedlora {

namespace {

void check_dims(int rows, int cols) {
    if (rows <= 0 || cols <= 0) {
        throw std::invalid_argument("matrix dimensions must be positive, got " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    }
}

void check_finite(const Matrix& m, const char* op) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            throw std::domain_error(std::string(op) + ": non-finite entry in " + m.shape_str() +
                                    " result");
        }
    }
}

}  // namespace

Matrix::Matrix(int r, int c) : rows(r), cols(c) {
    check_dims(r, c);
    data.assign(size_t(r) * size_t(c), 0.0);
}

Matrix::Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    check_dims(r, c);
    if (data.size() != size_t(r) * size_t(c)) {
        throw std::invalid_argument("matrix data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str());
    }
    check_finite(*this, "Matrix");
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: dimension mismatch " + a.shape_str() + " * " +
                                    b.shape_str());
    }
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    check_finite(out, "matmul");
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    check_finite(out, "add");
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument("sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    check_finite(out, "sub");
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (double& v : out.data) v *= s;
    check_finite(out, "scale");
    return out;
}

Matrix outer(std::span<const double> u, std::span<const double> v) {
    Matrix out(int(u.size()), int(v.size()));
    for (size_t i = 0; i < u.size(); ++i)
        for (size_t j = 0; j < v.size(); ++j) out.at(int(i), int(j)) = u[i] * v[j];
    check_finite(out, "outer");
    return out;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (size_t(m.cols) != x.size()) {
        throw std::invalid_argument("matvec: matrix " + m.shape_str() + " vs vector length " +
                                    std::to_string(x.size()));
    }
    std::vector<double> y(size_t(m.rows), 0.0);
    for (int i = 0; i < m.rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m.cols; ++j) acc += m.at(i, j) * x[j];
        y[size_t(i)] = acc;
    }
    return y;
}

std::vector<double> matvec_t(const Matrix& m, std::span<const double> x) {
    if (size_t(m.rows) != x.size()) {
        throw std::invalid_argument("matvec_t: matrix " + m.shape_str() + " vs vector length " +
                                    std::to_string(x.size()));
    }
    std::vector<double> y(size_t(m.cols), 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double xi = x[size_t(i)];
        if (xi == 0.0) continue;
        for (int j = 0; j < m.cols; ++j) y[size_t(j)] += m.at(i, j) * xi;
    }
    return y;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data) acc += v * v;
    return std::sqrt(acc);
}

double max_abs(const Matrix& m) {
    double mx = 0.0;
    for (double v : m.data) mx = std::max(mx, std::abs(v));
    return mx;
}

namespace {

constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer; full-period bijective mix.
uint64_t mix64(uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t derive_key(uint64_t key, uint64_t tag) {
    // hash-combine so that [a,b] and [b,a] land in different streams
    return mix64(key ^ (mix64(tag) + kGamma + (key << 6) + (key >> 2)));
}

}  // namespace

RngStream::RngStream(uint64_t master_seed) : key_(mix64(master_seed)) {}

RngStream::RngStream(uint64_t master_seed, std::span<const int64_t> path) : RngStream(master_seed) {
    for (int64_t tag : path) key_ = derive_key(key_, uint64_t(tag));
}

RngStream RngStream::child(int64_t tag) const {
    RngStream s(*this);
    s.key_ = derive_key(key_, uint64_t(tag));
    s.counter_ = 0;
    s.has_spare_ = false;
    return s;
}

uint64_t RngStream::next_u64() { return mix64(key_ + (counter_++) * kGamma); }

double RngStream::next_double() {
    return double(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] keeps the log finite
    const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_double();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    has_spare_ = true;
    return mag * std::cos(ang);
}

uint64_t RngStream::next_below(uint64_t n) {
    // multiply-shift map of a full 64-bit draw onto [0, n); bias < 2^-64
    return uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Matrix gaussian_matrix(int rows, int cols, double stddev, RngStream& rng) {
    if (stddev < 0.0) {
        throw std::invalid_argument("gaussian_matrix: stddev must be >= 0, got " +
                                    std::to_string(stddev));
    }
    Matrix m(rows, cols);
    if (stddev == 0.0) return m;
    for (double& v : m.data) v = stddev * rng.next_gaussian();
    return m;
}

Matrix random_orthogonal(int n, RngStream& rng) {
    Matrix q = gaussian_matrix(n, n, 1.0, rng);
    // modified Gram-Schmidt over rows
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < i; ++k) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += q.at(i, j) * q.at(k, j);
            for (int j = 0; j < n; ++j) q.at(i, j) -= dot * q.at(k, j);
        }
        double norm = 0.0;
        for (int j = 0; j < n; ++j) norm += q.at(i, j) * q.at(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // essentially impossible for a Gaussian draw; re-draw the row
            for (int j = 0; j < n; ++j) q.at(i, j) = rng.next_gaussian();
            --i;
            continue;
        }
        for (int j = 0; j < n; ++j) q.at(i, j) /= norm;
    }
    return q;
}

}  // namespace fedlora
