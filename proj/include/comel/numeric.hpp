#pragma once

#include "comel/matrix.hpp"

namespace comel {

// Row-wise softmax, stabilized by per-row max subtraction. Rejects
// non-finite input.
Matrix softmax_rows(const Matrix& m);

// Cosine similarity of two equal-length vectors (any rows x cols layout
// with matching total length). Returns 0 when either norm is below
// 1e-12 so degenerate prototypes keep downstream losses finite.
double cosine_sim(const Matrix& u, const Matrix& v);

struct SvdResult {
    Matrix u;           // rows x k, orthonormal columns
    std::vector<double> s;  // k values, nonincreasing, nonnegative
    Matrix v;           // cols x k, orthonormal columns
};

// Thin SVD (k = min(rows, cols)) via one-sided Jacobi rotations.
// Reconstruction U diag(s) V^T matches the input to ~1e-14 relative and
// factor columns are orthonormal to the same order.
SvdResult svd(const Matrix& w);

}  // namespace comel
