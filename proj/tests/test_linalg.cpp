#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include "fedlora/linalg.hpp"

using namespace fedlora;

namespace {

// Independent triple-loop reference; intentionally no shortcuts shared with
// the implementation.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

Matrix random_matrix(int rows, int cols, RngStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.next_gaussian();
    return m;
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("matmul identity") {
    const Matrix a(2, 2, {1, 2, 3, 4});
    const Matrix r = matmul(a, Matrix::identity(2));
    CHECK(r == a);
}

TEST_CASE("matmul 1x1") {
    const Matrix r = matmul(Matrix(1, 1, {2}), Matrix(1, 1, {3}));
    CHECK(r.at(0, 0) == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
    RngStream rng(7);
    const Matrix a = random_matrix(3, 4, rng);
    const Matrix b = random_matrix(4, 2, rng);
    const Matrix got = matmul(a, b);
    const Matrix want = matmul_oracle(a, b);
    REQUIRE(got.rows == 3);
    REQUIRE(got.cols == 2);
    for (size_t i = 0; i < got.data.size(); ++i) {
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-15));
    }
}

TEST_CASE("matmul rejects mismatched shapes, reporting both") {
    const Matrix a(2, 3);
    const Matrix b(4, 2);
    try {
        matmul(a, b);
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x2") != std::string::npos);
    }
}

TEST_CASE("gaussian_matrix std=0 gives zeros") {
    RngStream rng(1);
    const Matrix m = gaussian_matrix(3, 5, 0.0, rng);
    for (double v : m.data) CHECK(v == 0.0);
}

TEST_CASE("gaussian_matrix rejects negative std") {
    RngStream rng(1);
    CHECK_THROWS_AS(gaussian_matrix(2, 2, -0.5, rng), std::invalid_argument);
}

TEST_CASE("gaussian_matrix is bit-identical for the same seed and path") {
    RngStream a = RngStream(99).child(4).child(2);
    RngStream b = RngStream(99).child(4).child(2);
    const Matrix ma = gaussian_matrix(8, 8, 1.3, a);
    const Matrix mb = gaussian_matrix(8, 8, 1.3, b);
    CHECK(ma == mb);
}

TEST_CASE("gaussian_matrix sample moments at 10^6 draws") {
    RngStream rng(123);
    const Matrix m = gaussian_matrix(1000, 1000, 1.0, rng);
    double mean = 0.0;
    for (double v : m.data) mean += v;
    mean /= double(m.data.size());
    double var = 0.0;
    for (double v : m.data) var += (v - mean) * (v - mean);
    var /= double(m.data.size());
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("matmul associativity within 1e-9 relative") {
    RngStream rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        RngStream t = rng.child(trial);
        const Matrix a = random_matrix(3, 5, t);
        const Matrix b = random_matrix(5, 4, t);
        const Matrix c = random_matrix(4, 2, t);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        for (size_t i = 0; i < left.data.size(); ++i) {
            const double denom = std::max({1.0, std::abs(left.data[i]), std::abs(right.data[i])});
            CHECK(std::abs(left.data[i] - right.data[i]) / denom < 1e-9);
        }
    }
}

TEST_CASE("power-of-two scalars commute with matmul exactly") {
    RngStream rng(17);
    const Matrix m = random_matrix(4, 3, rng);
    const Matrix n = random_matrix(3, 4, rng);
    for (double alpha : {0.25, 0.5, 2.0, 8.0, 1024.0}) {
        const Matrix left = matmul(scale(m, alpha), n);
        const Matrix right = scale(matmul(m, n), alpha);
        CHECK(left == right);
    }
}

TEST_CASE("distinct path suffixes decorrelate") {
    RngStream a = RngStream(555).child(1);
    RngStream b = RngStream(555).child(2);
    const Matrix ma = gaussian_matrix(1000, 1000, 1.0, a);
    const Matrix mb = gaussian_matrix(1000, 1000, 1.0, b);
    double sum_a = 0.0, sum_b = 0.0;
    for (size_t i = 0; i < ma.data.size(); ++i) {
        sum_a += ma.data[i];
        sum_b += mb.data[i];
    }
    const double mean_a = sum_a / double(ma.data.size());
    const double mean_b = sum_b / double(mb.data.size());
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (size_t i = 0; i < ma.data.size(); ++i) {
        const double da = ma.data[i] - mean_a;
        const double db = mb.data[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    const double pearson = cov / std::sqrt(var_a * var_b);
    CHECK(std::abs(pearson) < 0.05);
}

TEST_CASE("next_below stays in range and covers values") {
    RngStream rng(3);
    std::vector<int> seen(10, 0);
    for (int i = 0; i < 10000; ++i) {
        const uint64_t v = rng.next_below(10);
        REQUIRE(v < 10);
        ++seen[size_t(v)];
    }
    for (int c : seen) CHECK(c > 800);
}

TEST_CASE("matrix data length is validated") {
    CHECK_THROWS_AS(Matrix(2, 3, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("non-finite inputs are rejected") {
    CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::nan("")}), std::domain_error);
}

TEST_CASE("random_orthogonal produces orthonormal rows") {
    RngStream rng(8);
    const Matrix q = random_orthogonal(6, rng);
    const Matrix qqt = matmul(q, transpose(q));
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            CHECK(qqt.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
        }
    }
}

}  // TEST_SUITE
