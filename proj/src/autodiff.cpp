#include "comel/autodiff.hpp"

#include <algorithm>

#include "comel/numeric.hpp"

namespace comel::ad {

namespace {
const Matrix kEmpty;

double vec_norm(const Matrix& m, size_t off, size_t len) {
    double s = 0.0;
    for (size_t i = 0; i < len; ++i) s += m.data[off + i] * m.data[off + i];
    return std::sqrt(s);
}
}  // namespace

int Tape::push(Op op, Matrix value, int a, int b, double c0, double c1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c0 = c0;
    n.c1 = c1;
    n.value = std::move(value);
    n.needs_grad = (a >= 0 && nodes_[a].needs_grad) || (b >= 0 && nodes_[b].needs_grad);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::param(Matrix v) {
    int id = push(Op::Leaf, std::move(v), -1, -1);
    nodes_[id].needs_grad = true;
    return id;
}

int Tape::constant(Matrix v) { return push(Op::Leaf, std::move(v), -1, -1); }

int Tape::matmul(int a, int b) { return push(Op::MatMul, comel::matmul(nodes_[a].value, nodes_[b].value), a, b); }
int Tape::matmul_nt(int a, int b) { return push(Op::MatMulNT, comel::matmul_nt(nodes_[a].value, nodes_[b].value), a, b); }
int Tape::matmul_tn(int a, int b) { return push(Op::MatMulTN, comel::matmul_tn(nodes_[a].value, nodes_[b].value), a, b); }
int Tape::transpose(int a) { return push(Op::Transpose, comel::transpose(nodes_[a].value), a, -1); }
int Tape::add(int a, int b) { return push(Op::Add, comel::add(nodes_[a].value, nodes_[b].value), a, b); }
int Tape::sub(int a, int b) { return push(Op::Sub, comel::sub(nodes_[a].value, nodes_[b].value), a, b); }
int Tape::mul(int a, int b) { return push(Op::Mul, comel::hadamard(nodes_[a].value, nodes_[b].value), a, b); }

int Tape::affine(int a, double k, double c) {
    const Matrix& x = nodes_[a].value;
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = k * x.data[i] + c;
    return push(Op::Affine, std::move(y), a, -1, k, c);
}

int Tape::add_rowvec(int a, int v) {
    const Matrix& x = nodes_[a].value;
    const Matrix& r = nodes_[v].value;
    if (r.rows != 1 || r.cols != x.cols) throw std::invalid_argument("add_rowvec: shape mismatch");
    Matrix y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(i, j) = x.at(i, j) + r.data[j];
    return push(Op::AddRowVec, std::move(y), a, v);
}

int Tape::sub_rowvec(int a, int v) {
    const Matrix& x = nodes_[a].value;
    const Matrix& r = nodes_[v].value;
    if (r.rows != 1 || r.cols != x.cols) throw std::invalid_argument("sub_rowvec: shape mismatch");
    Matrix y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(i, j) = x.at(i, j) - r.data[j];
    return push(Op::SubRowVec, std::move(y), a, v);
}

int Tape::bcast_sub(int a, int s) {
    const Matrix& x = nodes_[a].value;
    if (nodes_[s].value.size() != 1) throw std::invalid_argument("bcast_sub: scalar expected");
    const double c = nodes_[s].value.data[0];
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] - c;
    return push(Op::BcastSub, std::move(y), a, s);
}

int Tape::bcast_div(int a, int s) {
    const Matrix& x = nodes_[a].value;
    if (nodes_[s].value.size() != 1) throw std::invalid_argument("bcast_div: scalar expected");
    const double c = nodes_[s].value.data[0];
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] / c;
    return push(Op::BcastDiv, std::move(y), a, s);
}

int Tape::scale_cols(int a, int s) {
    const Matrix& x = nodes_[a].value;
    const Matrix& r = nodes_[s].value;
    if (r.rows != 1 || r.cols != x.cols) throw std::invalid_argument("scale_cols: shape mismatch");
    Matrix y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(i, j) = x.at(i, j) * r.data[j];
    return push(Op::ScaleCols, std::move(y), a, s);
}

int Tape::softmax_rows(int a) { return push(Op::SoftmaxRows, comel::softmax_rows(nodes_[a].value), a, -1); }

int Tape::tanh_(int a) {
    const Matrix& x = nodes_[a].value;
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = std::tanh(x.data[i]);
    return push(Op::Tanh, std::move(y), a, -1);
}

int Tape::sigmoid(int a) {
    const Matrix& x = nodes_[a].value;
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
    return push(Op::Sigmoid, std::move(y), a, -1);
}

int Tape::log_(int a) {
    const Matrix& x = nodes_[a].value;
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = std::log(x.data[i]);
    return push(Op::Log, std::move(y), a, -1);
}

int Tape::clamp(int a, double lo, double hi) {
    const Matrix& x = nodes_[a].value;
    Matrix y(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) y.data[i] = std::clamp(x.data[i], lo, hi);
    return push(Op::Clamp, std::move(y), a, -1, lo, hi);
}

int Tape::sum_all(int a) {
    double s = 0.0;
    for (double v : nodes_[a].value.data) s += v;
    Matrix y(1, 1);
    y.data[0] = s;
    return push(Op::SumAll, std::move(y), a, -1);
}

int Tape::mean_all(int a) {
    double s = 0.0;
    for (double v : nodes_[a].value.data) s += v;
    Matrix y(1, 1);
    y.data[0] = s / static_cast<double>(nodes_[a].value.size());
    return push(Op::MeanAll, std::move(y), a, -1);
}

int Tape::min_all(int a) {
    const auto& d = nodes_[a].value.data;
    Matrix y(1, 1);
    y.data[0] = *std::min_element(d.begin(), d.end());
    return push(Op::MinAll, std::move(y), a, -1);
}

int Tape::max_all(int a) {
    const auto& d = nodes_[a].value.data;
    Matrix y(1, 1);
    y.data[0] = *std::max_element(d.begin(), d.end());
    return push(Op::MaxAll, std::move(y), a, -1);
}

int Tape::cosine_vec(int a, int b) {
    Matrix y(1, 1);
    y.data[0] = comel::cosine_sim(nodes_[a].value, nodes_[b].value);
    return push(Op::CosineVec, std::move(y), a, b);
}

int Tape::cosine_rows(int a, int r) {
    const Matrix& x = nodes_[a].value;
    const Matrix& rv = nodes_[r].value;
    if (rv.size() != static_cast<size_t>(x.cols)) throw std::invalid_argument("cosine_rows: dim mismatch");
    Matrix y(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) {
        double uu = 0.0, uv = 0.0, vv = 0.0;
        const double* xi = x.row_ptr(i);
        for (int j = 0; j < x.cols; ++j) {
            uu += xi[j] * xi[j];
            uv += xi[j] * rv.data[j];
            vv += rv.data[j] * rv.data[j];
        }
        const double nu = std::sqrt(uu), nv = std::sqrt(vv);
        y.at(i, 0) = (nu < 1e-12 || nv < 1e-12) ? 0.0 : uv / (nu * nv);
    }
    return push(Op::CosineRows, std::move(y), a, r);
}

Matrix& Tape::grad_buf(Node& n) {
    if (!n.grad_live) {
        n.grad = Matrix(n.value.rows, n.value.cols);
        n.grad_live = true;
    }
    return n.grad;
}

const Matrix& Tape::grad(int id) {
    Node& n = nodes_[id];
    if (!n.grad_live) return grad_buf(n);  // zero-filled
    return n.grad;
}

void Tape::backward(int root) {
    if (nodes_[root].value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    grad_buf(nodes_[root]).data[0] = 1.0;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.grad_live || !n.needs_grad || n.op == Op::Leaf) continue;
        backprop_node(id);
    }
}

void Tape::backprop_node(int id) {
    Node& n = nodes_[id];
    const Matrix& g = n.grad;
    auto needs = [&](int i) { return i >= 0 && nodes_[i].needs_grad; };
    auto accum = [&](int i, const Matrix& delta) {
        Matrix& acc = grad_buf(nodes_[i]);
        for (size_t k = 0; k < acc.size(); ++k) acc.data[k] += delta.data[k];
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul:
            if (needs(n.a)) accum(n.a, comel::matmul_nt(g, nodes_[n.b].value));
            if (needs(n.b)) accum(n.b, comel::matmul_tn(nodes_[n.a].value, g));
            break;
        case Op::MatMulNT:
            if (needs(n.a)) accum(n.a, comel::matmul(g, nodes_[n.b].value));
            if (needs(n.b)) accum(n.b, comel::matmul_tn(g, nodes_[n.a].value));
            break;
        case Op::MatMulTN:
            if (needs(n.a)) accum(n.a, comel::matmul_nt(nodes_[n.b].value, g));
            if (needs(n.b)) accum(n.b, comel::matmul(nodes_[n.a].value, g));
            break;
        case Op::Transpose:
            if (needs(n.a)) accum(n.a, comel::transpose(g));
            break;
        case Op::Add:
            if (needs(n.a)) accum(n.a, g);
            if (needs(n.b)) accum(n.b, g);
            break;
        case Op::Sub:
            if (needs(n.a)) accum(n.a, g);
            if (needs(n.b)) accum(n.b, comel::scale(g, -1.0));
            break;
        case Op::Mul:
            if (needs(n.a)) accum(n.a, comel::hadamard(g, nodes_[n.b].value));
            if (needs(n.b)) accum(n.b, comel::hadamard(g, nodes_[n.a].value));
            break;
        case Op::Affine:
            if (needs(n.a)) accum(n.a, comel::scale(g, n.c0));
            break;
        case Op::AddRowVec:
            if (needs(n.a)) accum(n.a, g);
            if (needs(n.b)) accum(n.b, comel::col_sums(g));
            break;
        case Op::SubRowVec:
            if (needs(n.a)) accum(n.a, g);
            if (needs(n.b)) accum(n.b, comel::scale(comel::col_sums(g), -1.0));
            break;
        case Op::BcastSub: {
            if (needs(n.a)) accum(n.a, g);
            if (needs(n.b)) {
                Matrix d(1, 1);
                for (double v : g.data) d.data[0] -= v;
                accum(n.b, d);
            }
            break;
        }
        case Op::BcastDiv: {
            const double s = nodes_[n.b].value.data[0];
            if (needs(n.a)) accum(n.a, comel::scale(g, 1.0 / s));
            if (needs(n.b)) {
                Matrix d(1, 1);
                for (size_t k = 0; k < g.size(); ++k) d.data[0] -= g.data[k] * n.value.data[k];
                d.data[0] /= s;
                accum(n.b, d);
            }
            break;
        }
        case Op::ScaleCols: {
            const Matrix& u = nodes_[n.a].value;
            const Matrix& s = nodes_[n.b].value;
            if (needs(n.a)) {
                Matrix d(u.rows, u.cols);
                for (int i = 0; i < u.rows; ++i)
                    for (int j = 0; j < u.cols; ++j) d.at(i, j) = g.at(i, j) * s.data[j];
                accum(n.a, d);
            }
            if (needs(n.b)) {
                Matrix d(1, u.cols);
                for (int i = 0; i < u.rows; ++i)
                    for (int j = 0; j < u.cols; ++j) d.data[j] += g.at(i, j) * u.at(i, j);
                accum(n.b, d);
            }
            break;
        }
        case Op::SoftmaxRows: {
            if (!needs(n.a)) break;
            const Matrix& p = n.value;
            Matrix d(p.rows, p.cols);
            for (int i = 0; i < p.rows; ++i) {
                const double* pi = p.row_ptr(i);
                const double* gi = g.row_ptr(i);
                double dot = 0.0;
                for (int j = 0; j < p.cols; ++j) dot += gi[j] * pi[j];
                double* di = d.row_ptr(i);
                for (int j = 0; j < p.cols; ++j) di[j] = pi[j] * (gi[j] - dot);
            }
            accum(n.a, d);
            break;
        }
        case Op::Tanh: {
            if (!needs(n.a)) break;
            Matrix d(n.value.rows, n.value.cols);
            for (size_t k = 0; k < d.size(); ++k) d.data[k] = g.data[k] * (1.0 - n.value.data[k] * n.value.data[k]);
            accum(n.a, d);
            break;
        }
        case Op::Sigmoid: {
            if (!needs(n.a)) break;
            Matrix d(n.value.rows, n.value.cols);
            for (size_t k = 0; k < d.size(); ++k) d.data[k] = g.data[k] * n.value.data[k] * (1.0 - n.value.data[k]);
            accum(n.a, d);
            break;
        }
        case Op::Log: {
            if (!needs(n.a)) break;
            const Matrix& x = nodes_[n.a].value;
            Matrix d(x.rows, x.cols);
            for (size_t k = 0; k < d.size(); ++k) d.data[k] = g.data[k] / x.data[k];
            accum(n.a, d);
            break;
        }
        case Op::Clamp: {
            if (!needs(n.a)) break;
            const Matrix& x = nodes_[n.a].value;
            Matrix d(x.rows, x.cols);
            for (size_t k = 0; k < d.size(); ++k)
                d.data[k] = (x.data[k] > n.c0 && x.data[k] < n.c1) ? g.data[k] : 0.0;
            accum(n.a, d);
            break;
        }
        case Op::SumAll: {
            if (!needs(n.a)) break;
            const Matrix& x = nodes_[n.a].value;
            accum(n.a, Matrix::filled(x.rows, x.cols, g.data[0]));
            break;
        }
        case Op::MeanAll: {
            if (!needs(n.a)) break;
            const Matrix& x = nodes_[n.a].value;
            accum(n.a, Matrix::filled(x.rows, x.cols, g.data[0] / static_cast<double>(x.size())));
            break;
        }
        case Op::MinAll:
        case Op::MaxAll: {
            if (!needs(n.a)) break;
            const Matrix& x = nodes_[n.a].value;
            size_t idx = 0;
            if (n.op == Op::MinAll)
                idx = std::min_element(x.data.begin(), x.data.end()) - x.data.begin();
            else
                idx = std::max_element(x.data.begin(), x.data.end()) - x.data.begin();
            Matrix d(x.rows, x.cols);
            d.data[idx] = g.data[0];
            accum(n.a, d);
            break;
        }
        case Op::CosineVec: {
            const Matrix& u = nodes_[n.a].value;
            const Matrix& v = nodes_[n.b].value;
            const double nu = vec_norm(u, 0, u.size());
            const double nv = vec_norm(v, 0, v.size());
            if (nu < 1e-12 || nv < 1e-12) break;
            const double cosv = n.value.data[0];
            const double g0 = g.data[0];
            if (needs(n.a)) {
                Matrix d(u.rows, u.cols);
                for (size_t k = 0; k < u.size(); ++k)
                    d.data[k] = g0 * (v.data[k] / (nu * nv) - cosv * u.data[k] / (nu * nu));
                accum(n.a, d);
            }
            if (needs(n.b)) {
                Matrix d(v.rows, v.cols);
                for (size_t k = 0; k < v.size(); ++k)
                    d.data[k] = g0 * (u.data[k] / (nu * nv) - cosv * v.data[k] / (nv * nv));
                accum(n.b, d);
            }
            break;
        }
        case Op::CosineRows: {
            const Matrix& x = nodes_[n.a].value;
            const Matrix& r = nodes_[n.b].value;
            const double nr = vec_norm(r, 0, r.size());
            Matrix dx(x.rows, x.cols);
            Matrix dr(r.rows, r.cols);
            for (int i = 0; i < x.rows; ++i) {
                const double gi = g.at(i, 0);
                if (gi == 0.0) continue;
                const double* xi = x.row_ptr(i);
                const double nx = vec_norm(x, static_cast<size_t>(i) * x.cols, x.cols);
                if (nx < 1e-12 || nr < 1e-12) continue;
                const double cosv = n.value.at(i, 0);
                double* di = dx.row_ptr(i);
                for (int j = 0; j < x.cols; ++j) {
                    di[j] = gi * (r.data[j] / (nx * nr) - cosv * xi[j] / (nx * nx));
                    dr.data[j] += gi * (xi[j] / (nx * nr) - cosv * r.data[j] / (nr * nr));
                }
            }
            if (needs(n.a)) accum(n.a, dx);
            if (needs(n.b)) accum(n.b, dr);
            break;
        }
    }
}

void Tape::reset() { nodes_.clear(); }

}  // namespace comel::ad
