#include <doctest.h>

#include <Eigen/Dense>

#include "graftbench/error.hpp"
#include "graftbench/matrix.hpp"
#include "graftbench/rng.hpp"

using namespace graftbench;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m(r, c);
    Rng rng(seed);
    for (std::size_t i = 0; i < r * c; ++i) m.data()[i] = rng.normal();
    return m;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    }
    return e;
}

double max_abs_diff(const Matrix& m, const Eigen::MatrixXd& e) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            worst = std::max(worst, std::abs(m(i, j) - e(i, j)));
        }
    }
    return worst;
}

}  // namespace

TEST_SUITE("matrix") {

TEST_CASE("matmul agrees with a reference implementation") {
    const Matrix a = random_matrix(7, 5, 1);
    const Matrix b = random_matrix(5, 9, 2);
    CHECK(max_abs_diff(matmul(a, b), to_eigen(a) * to_eigen(b)) < 1e-12);
}

TEST_CASE("matmul_nt and matmul_tn agree with the reference") {
    const Matrix a = random_matrix(6, 4, 3);
    const Matrix b = random_matrix(8, 4, 4);
    CHECK(max_abs_diff(matmul_nt(a, b),
                       to_eigen(a) * to_eigen(b).transpose()) < 1e-12);
    const Matrix c = random_matrix(4, 6, 5);
    const Matrix d = random_matrix(4, 3, 6);
    CHECK(max_abs_diff(matmul_tn(c, d),
                       to_eigen(c).transpose() * to_eigen(d)) < 1e-12);
}

TEST_CASE("shape mismatches are rejected") {
    const Matrix a(2, 3), b(4, 5);
    CHECK_THROWS_AS(matmul(a, b), ArgumentError);
    CHECK_THROWS_AS(matmul_nt(a, b), ArgumentError);
    CHECK_THROWS_AS(matmul_tn(a, b), ArgumentError);
}

TEST_CASE("transpose and norms") {
    const Matrix a = random_matrix(3, 4, 7);
    const Matrix t = a.transposed();
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(t(j, i) == a(i, j));
    }
    CHECK(a.frobenius_norm() ==
          doctest::Approx(to_eigen(a).norm()).epsilon(1e-12));
    CHECK(a.all_finite());
    Matrix bad(1, 1);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(bad.all_finite());
}

}  // TEST_SUITE
