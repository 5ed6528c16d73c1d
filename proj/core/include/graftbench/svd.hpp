#pragma once

#include <vector>

#include "graftbench/matrix.hpp"

namespace graftbench {

/// Thin singular value decomposition A = U * diag(sigma) * V^T with
/// r = min(rows, cols) triplets, singular values descending.
///
/// Sign convention: each right singular vector is scaled so that its
/// largest-magnitude entry is positive (first such entry on ties), which
/// makes the decomposition reproducible across platforms.
struct Svd {
    Matrix u;                   // rows x r
    std::vector<double> sigma;  // r, descending
    Matrix v;                   // cols x r
};

/// One-sided Jacobi SVD. Accurate to near machine precision for the
/// desk-scale matrices this toolkit handles. Throws NumericError if the
/// sweep limit is exceeded (does not happen for finite inputs).
Svd svd_jacobi(const Matrix& a);

}  // namespace graftbench
