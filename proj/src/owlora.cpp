#include "comel/owlora.hpp"

#include <algorithm>

#include "comel/numeric.hpp"

namespace comel {

void OwloraConfig::validate() const {
    if (epsilon <= 0.0 || epsilon > 1.0) throw std::invalid_argument("OwloraConfig: epsilon in (0, 1] required");
    if (rank < 1) throw std::invalid_argument("OwloraConfig: rank must be >= 1");
    if (lambda3 < 0.0) throw std::invalid_argument("OwloraConfig: lambda3 must be >= 0");
}

namespace {

Matrix weighted_outer(const TaskFactors& f) {
    Matrix us = f.u;
    for (int i = 0; i < us.rows; ++i)
        for (int j = 0; j < us.cols; ++j) us.at(i, j) *= f.s.data[j];
    return matmul_nt(us, f.v);
}

Matrix concat_cols(const std::vector<const Matrix*>& parts, int rows) {
    int cols = 0;
    for (const Matrix* p : parts) cols += p->cols;
    Matrix out(rows, cols);
    int at = 0;
    for (const Matrix* p : parts) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p->cols; ++j) out.at(i, at + j) = p->at(i, j);
        at += p->cols;
    }
    return out;
}

}  // namespace

void AdapterStack::rebuild_cache() {
    frozen_sum = Matrix(d_in, d_out);
    std::vector<const Matrix*> us, vs;
    for (const TaskFactors& f : frozen) {
        frozen_sum = add(frozen_sum, weighted_outer(f));
        us.push_back(&f.u);
        vs.push_back(&f.v);
    }
    basis_u = concat_cols(us, d_in);
    basis_v = concat_cols(vs, d_out);
}

int truncation_rank(const std::vector<double>& singular_values, double epsilon) {
    double total = 0.0;
    for (double s : singular_values) total += s * s;
    if (total <= 0.0) return 1;
    double running = 0.0;
    for (size_t i = 0; i < singular_values.size(); ++i) {
        running += singular_values[i] * singular_values[i];
        if (running / total >= epsilon) return static_cast<int>(i) + 1;
    }
    return static_cast<int>(singular_values.size());
}

AdapterStack truncate_first_task(const std::string& layer, const Matrix& w1, double epsilon) {
    require_finite(w1, "truncate_first_task");
    SvdResult decomp = svd(w1);
    const int dtilde = truncation_rank(decomp.s, epsilon);

    TaskFactors first;
    first.task_index = 1;
    first.u = Matrix(w1.rows, dtilde);
    first.v = Matrix(w1.cols, dtilde);
    first.s = Matrix(1, dtilde);
    for (int j = 0; j < dtilde; ++j) {
        first.s.data[j] = decomp.s[j];
        for (int i = 0; i < w1.rows; ++i) first.u.at(i, j) = decomp.u.at(i, j);
        for (int i = 0; i < w1.cols; ++i) first.v.at(i, j) = decomp.v.at(i, j);
    }

    AdapterStack stack;
    stack.layer = layer;
    stack.d_in = w1.rows;
    stack.d_out = w1.cols;
    stack.dtilde = dtilde;
    stack.frozen.push_back(std::move(first));
    stack.rebuild_cache();
    return stack;
}

namespace {

// Orthonormal columns inside the complement of basis: sample Gaussian,
// project the frozen span out, then modified Gram-Schmidt.
Matrix sample_complement(int dim, int rank, const Matrix& basis, Rng& rng, const std::string& layer) {
    if (dim - basis.cols < rank)
        throw std::runtime_error("init_adapter: rank exhaustion on layer " + layer + " (complement " +
                                 std::to_string(dim - basis.cols) + " < rank " + std::to_string(rank) + ")");
    for (int attempt = 0; attempt < 8; ++attempt) {
        Matrix q = rng.gaussian_matrix(dim, rank, 1.0);
        q = project_gradient(q, basis);
        bool ok = true;
        for (int j = 0; j < rank && ok; ++j) {
            for (int pass = 0; pass < 2; ++pass) {
                for (int k = 0; k < j; ++k) {
                    double proj = 0.0;
                    for (int i = 0; i < dim; ++i) proj += q.at(i, k) * q.at(i, j);
                    for (int i = 0; i < dim; ++i) q.at(i, j) -= proj * q.at(i, k);
                }
            }
            double norm = 0.0;
            for (int i = 0; i < dim; ++i) norm += q.at(i, j) * q.at(i, j);
            norm = std::sqrt(norm);
            if (norm < 1e-6) {
                ok = false;
                break;
            }
            for (int i = 0; i < dim; ++i) q.at(i, j) /= norm;
        }
        if (ok) return q;
    }
    throw std::runtime_error("init_adapter: could not draw an orthonormal complement basis for " + layer);
}

}  // namespace

void init_adapter(AdapterStack& stack, int task_index, int rank, Rng& rng) {
    if (stack.has_active) throw std::logic_error("init_adapter: previous factors not frozen yet");
    stack.active.task_index = task_index;
    stack.active.u = sample_complement(stack.d_in, rank, stack.basis_u, rng, stack.layer);
    stack.active.v = sample_complement(stack.d_out, rank, stack.basis_v, rng, stack.layer);
    stack.active.s = Matrix(1, rank);
    stack.has_active = true;
}

void freeze_active(AdapterStack& stack) {
    if (!stack.has_active) return;
    stack.frozen.push_back(std::move(stack.active));
    stack.active = TaskFactors{};
    stack.has_active = false;
    stack.rebuild_cache();
}

Matrix effective_weight(const AdapterStack& stack) {
    Matrix w = stack.frozen_sum;
    if (stack.has_active) w = add(w, weighted_outer(stack.active));
    return w;
}

int effective_weight_node(ad::Tape& t, const AdapterStack& stack, int u, int s, int v) {
    return t.add(t.constant(stack.frozen_sum), t.matmul_nt(t.scale_cols(u, s), v));
}

double intra_ortho_loss(const Matrix& u, const Matrix& v) {
    Matrix eu = sub(matmul_tn(u, u), Matrix::identity(u.cols));
    Matrix ev = sub(matmul_tn(v, v), Matrix::identity(v.cols));
    return dot_all(eu, eu) + dot_all(ev, ev);
}

int intra_ortho_loss_node(ad::Tape& t, int u, int v) {
    int eu = t.sub(t.matmul_tn(u, u), t.constant(Matrix::identity(t.value(u).cols)));
    int ev = t.sub(t.matmul_tn(v, v), t.constant(Matrix::identity(t.value(v).cols)));
    return t.add(t.sum_all(t.mul(eu, eu)), t.sum_all(t.mul(ev, ev)));
}

Matrix project_gradient(const Matrix& g, const Matrix& basis) {
    if (basis.cols == 0) return g;
    if (basis.rows != g.rows) throw std::invalid_argument("project_gradient: basis/gradient row mismatch");
    return sub(g, matmul(basis, matmul_tn(basis, g)));
}

void reproject_params(AdapterStack& stack) {
    if (!stack.has_active) return;
    stack.active.u = project_gradient(stack.active.u, stack.basis_u);
    stack.active.v = project_gradient(stack.active.v, stack.basis_v);
}

double max_frozen_overlap(const AdapterStack& stack) {
    if (!stack.has_active) return 0.0;
    double worst = 0.0;
    for (const TaskFactors& f : stack.frozen) {
        worst = std::max(worst, frobenius_norm(matmul_tn(f.u, stack.active.u)));
        worst = std::max(worst, frobenius_norm(matmul_tn(f.v, stack.active.v)));
    }
    return worst;
}

}  // namespace comel
