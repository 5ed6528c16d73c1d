#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "graftbench/error.hpp"
#include "graftbench/matrix.hpp"
#include "graftbench/rng.hpp"
#include "graftbench/svd.hpp"

using namespace graftbench;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m(r, c);
    Rng rng(seed);
    for (std::size_t i = 0; i < r * c; ++i) m.data()[i] = rng.normal();
    return m;
}

double reconstruction_error(const Matrix& a, const Svd& s) {
    // ||A - U diag(sigma) V^T||_F relative to ||A||_F.
    Matrix us = s.u;
    for (std::size_t i = 0; i < us.rows(); ++i) {
        for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s.sigma[j];
    }
    const Matrix rec = matmul_nt(us, s.v);
    double err = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = rec(i, j) - a(i, j);
            err += d * d;
        }
    }
    const double denom = std::max(a.frobenius_norm(), 1e-300);
    return std::sqrt(err) / denom;
}

double orthonormality_error(const Matrix& m) {
    // ||M^T M - I||_max over columns with nonzero norm.
    double worst = 0.0;
    for (std::size_t a = 0; a < m.cols(); ++a) {
        double na = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) na += m(i, a) * m(i, a);
        if (na == 0.0) continue;  // zero singular value direction
        for (std::size_t b = a; b < m.cols(); ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) {
                dot += m(i, a) * m(i, b);
            }
            const double want = a == b ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(dot - want));
        }
    }
    return worst;
}

void check_svd(const Matrix& a) {
    const Svd s = svd_jacobi(a);
    const std::size_t r = std::min(a.rows(), a.cols());
    REQUIRE(s.u.rows() == a.rows());
    REQUIRE(s.u.cols() == r);
    REQUIRE(s.sigma.size() == r);
    REQUIRE(s.v.rows() == a.cols());
    REQUIRE(s.v.cols() == r);

    CHECK(std::is_sorted(s.sigma.rbegin(), s.sigma.rend()));
    for (double sv : s.sigma) CHECK(sv >= 0.0);
    CHECK(reconstruction_error(a, s) < 1e-10);
    CHECK(orthonormality_error(s.u) < 1e-10);
    CHECK(orthonormality_error(s.v) < 1e-10);

    // Singular values must match the reference decomposition.
    Eigen::MatrixXd e(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) e(i, j) = a(i, j);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> ref(e);
    const auto& rsv = ref.singularValues();
    for (std::size_t i = 0; i < r; ++i) {
        CHECK(s.sigma[i] ==
              doctest::Approx(rsv(static_cast<Eigen::Index>(i)))
                  .epsilon(1e-9)
                  .scale(std::max(1.0, rsv(0))));
    }
}

}  // namespace

TEST_SUITE("svd") {

TEST_CASE("known 2x2 decomposition") {
    // A = [[3, 0], [4, 5]]: singular values sqrt(45) and sqrt(5).
    Matrix a(2, 2);
    a(0, 0) = 3;
    a(0, 1) = 0;
    a(1, 0) = 4;
    a(1, 1) = 5;
    const Svd s = svd_jacobi(a);
    CHECK(s.sigma[0] == doctest::Approx(std::sqrt(45.0)).epsilon(1e-12));
    CHECK(s.sigma[1] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
}

TEST_CASE("random tall, wide and square inputs") {
    check_svd(random_matrix(12, 5, 101));
    check_svd(random_matrix(5, 12, 102));
    check_svd(random_matrix(9, 9, 103));
    check_svd(random_matrix(1, 7, 104));
    check_svd(random_matrix(7, 1, 105));
}

TEST_CASE("rank deficient input") {
    Matrix a = random_matrix(8, 3, 106);
    Matrix b(8, 6);
    // Columns 3..5 duplicate columns 0..2, so rank is at most 3.
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            b(i, j) = a(i, j);
            b(i, j + 3) = a(i, j);
        }
    }
    const Svd s = svd_jacobi(b);
    CHECK(reconstruction_error(b, s) < 1e-10);
    for (std::size_t i = 3; i < 6; ++i) CHECK(s.sigma[i] < 1e-10);
}

TEST_CASE("sign convention is deterministic and canonical") {
    const Matrix a = random_matrix(10, 6, 107);
    const Svd s1 = svd_jacobi(a);
    const Svd s2 = svd_jacobi(a);
    for (std::size_t i = 0; i < s1.v.rows(); ++i) {
        for (std::size_t j = 0; j < s1.v.cols(); ++j) {
            CHECK(s1.v(i, j) == s2.v(i, j));
        }
    }
    // Largest-magnitude entry of each right singular vector is positive.
    for (std::size_t j = 0; j < s1.v.cols(); ++j) {
        double best = 0.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < s1.v.rows(); ++i) {
            if (std::abs(s1.v(i, j)) > best) {
                best = std::abs(s1.v(i, j));
                best_i = i;
            }
        }
        if (best > 0.0) CHECK(s1.v(best_i, j) > 0.0);
    }
}

TEST_CASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(svd_jacobi(Matrix(0, 0)), ArgumentError);
    Matrix nan(2, 2);
    nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(svd_jacobi(nan), NumericError);
}

}  // TEST_SUITE
