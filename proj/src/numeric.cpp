#include "comel/numeric.hpp"

#include <algorithm>
#include <numeric>

namespace comel {

Matrix softmax_rows(const Matrix& m) {
    require_finite(m, "softmax_rows");
    Matrix out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        const double* x = m.row_ptr(i);
        double* y = out.row_ptr(i);
        double mx = x[0];
        for (int j = 1; j < m.cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < m.cols; ++j) y[j] /= sum;
    }
    return out;
}

double cosine_sim(const Matrix& u, const Matrix& v) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        uu += u.data[i] * u.data[i];
        vv += v.data[i] * v.data[i];
        uv += u.data[i] * v.data[i];
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu < 1e-12 || nv < 1e-12) return 0.0;
    return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

namespace {

// One-sided Jacobi on a tall matrix (rows >= cols): rotate column pairs
// until all are mutually orthogonal, accumulating rotations into V.
void jacobi_tall(Matrix& b, Matrix& v) {
    const int n = b.cols;
    const int m = b.rows;
    const double eps = 1e-15;
    for (int sweep = 0; sweep < 64; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double* bi = b.row_ptr(i);
                    app += bi[p] * bi[p];
                    aqq += bi[q] * bi[q];
                    apq += bi[p] * bi[q];
                }
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    double* bi = b.row_ptr(i);
                    const double bp = bi[p], bq = bi[q];
                    bi[p] = c * bp - s * bq;
                    bi[q] = s * bp + c * bq;
                }
                for (int i = 0; i < n; ++i) {
                    double* vi = v.row_ptr(i);
                    const double vp = vi[p], vq = vi[q];
                    vi[p] = c * vp - s * vq;
                    vi[q] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
}

// Fill zero-norm columns of u with unit vectors orthogonal to the rest.
void complete_basis(Matrix& u, const std::vector<int>& holes) {
    const int m = u.rows;
    const int n = u.cols;
    for (int hole : holes) {
        int best_axis = -1;
        double best_norm = -1.0;
        Matrix best_col(m, 1);
        for (int axis = 0; axis < m; ++axis) {
            Matrix cand(m, 1);
            cand.at(axis, 0) = 1.0;
            for (int j = 0; j < n; ++j) {
                if (j == hole) continue;
                double proj = 0.0;
                for (int i = 0; i < m; ++i) proj += u.at(i, j) * cand.at(i, 0);
                for (int i = 0; i < m; ++i) cand.at(i, 0) -= proj * u.at(i, j);
            }
            double norm = frobenius_norm(cand);
            if (norm > best_norm) {
                best_norm = norm;
                best_axis = axis;
                best_col = cand;
            }
            if (norm > 0.9) break;  // good enough, keeps it deterministic
        }
        (void)best_axis;
        for (int i = 0; i < m; ++i) u.at(i, hole) = best_col.at(i, 0) / best_norm;
    }
}

SvdResult svd_tall(const Matrix& w) {
    Matrix b = w;
    Matrix v = Matrix::identity(w.cols);
    jacobi_tall(b, v);

    const int n = w.cols;
    std::vector<double> s(n);
    for (int j = 0; j < n; ++j) {
        double norm = 0.0;
        for (int i = 0; i < w.rows; ++i) norm += b.at(i, j) * b.at(i, j);
        s[j] = std::sqrt(norm);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int c) { return s[a] > s[c]; });

    SvdResult r;
    r.u = Matrix(w.rows, n);
    r.v = Matrix(w.cols, n);
    r.s.resize(n);
    double smax = s[order[0]];
    std::vector<int> holes;
    for (int j = 0; j < n; ++j) {
        const int src = order[j];
        r.s[j] = s[src];
        if (s[src] > smax * 1e-300 && s[src] > 0.0) {
            for (int i = 0; i < w.rows; ++i) r.u.at(i, j) = b.at(i, src) / s[src];
        } else {
            r.s[j] = 0.0;
            holes.push_back(j);
        }
        for (int i = 0; i < w.cols; ++i) r.v.at(i, j) = v.at(i, src);
    }
    if (!holes.empty()) complete_basis(r.u, holes);
    return r;
}

}  // namespace

SvdResult svd(const Matrix& w) {
    require_finite(w, "svd");
    if (w.rows == 0 || w.cols == 0) throw std::invalid_argument("svd: empty matrix");
    if (w.rows >= w.cols) return svd_tall(w);
    SvdResult t = svd_tall(transpose(w));
    return SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
}

}  // namespace comel
