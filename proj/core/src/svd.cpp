#include "graftbench/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graftbench/error.hpp"

namespace graftbench {
namespace {

// One-sided Jacobi on a tall matrix (rows >= cols): orthogonalize column
// pairs of W while accumulating the rotations in V. On exit the columns of
// W are sigma_j * u_j.
void jacobi_sweeps(Matrix& w, Matrix& v) {
    const std::size_t m = w.rows();
    const std::size_t n = w.cols();
    const double tol = 1e-14;
    const int max_sweeps = 60;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) /
                    (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if (!rotated) return;
    }
    throw NumericError("svd_jacobi: sweep limit exceeded");
}

Svd svd_tall(const Matrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix w = a;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
    jacobi_sweeps(w, v);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return sigma[x] > sigma[y];
    });

    Svd out;
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);
    out.sigma.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.sigma[j] = sigma[src];
        if (sigma[src] > 0.0) {
            const double inv = 1.0 / sigma[src];
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = w(i, src) * inv;
        }
        for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
    }
    return out;
}

void canonical_signs(Svd& s) {
    const std::size_t r = s.sigma.size();
    for (std::size_t j = 0; j < r; ++j) {
        double best = 0.0;
        double val = 0.0;
        for (std::size_t i = 0; i < s.v.rows(); ++i) {
            const double a = std::abs(s.v(i, j));
            if (a > best) {
                best = a;
                val = s.v(i, j);
            }
        }
        if (val < 0.0) {
            for (std::size_t i = 0; i < s.v.rows(); ++i) s.v(i, j) = -s.v(i, j);
            for (std::size_t i = 0; i < s.u.rows(); ++i) s.u(i, j) = -s.u(i, j);
        }
    }
}

}  // namespace

Svd svd_jacobi(const Matrix& a) {
    if (a.rows() == 0 || a.cols() == 0)
        throw ArgumentError("svd_jacobi: empty matrix");
    if (!a.all_finite()) throw NumericError("svd_jacobi: non-finite input");

    Svd s;
    if (a.rows() >= a.cols()) {
        s = svd_tall(a);
    } else {
        Svd t = svd_tall(a.transposed());
        s.u = std::move(t.v);
        s.v = std::move(t.u);
        s.sigma = std::move(t.sigma);
    }
    canonical_signs(s);
    return s;
}

}  // namespace graftbench
