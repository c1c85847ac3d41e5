#include "comel/gdat.hpp"

#include <algorithm>
#include <map>

#include "comel/numeric.hpp"

namespace comel {

void GdatConfig::validate() const {
    if (eta < 0.0) throw std::invalid_argument("GdatConfig: eta must be >= 0");
    if (grouping_factor < 1) throw std::invalid_argument("GdatConfig: grouping_factor must be >= 1");
    if (num_blocks < 0) throw std::invalid_argument("GdatConfig: num_blocks must be >= 0");
    if (model_dim < 1) throw std::invalid_argument("GdatConfig: model_dim must be >= 1");
}

Grouping make_grouping(const std::vector<GridPos>& positions, int grouping_factor) {
    if (grouping_factor < 1) throw std::invalid_argument("make_grouping: grouping_factor must be >= 1");
    const int M = static_cast<int>(positions.size());
    std::map<std::pair<int, int>, std::vector<int>> windows;
    for (int i = 0; i < M; ++i) {
        if (positions[i].row < 0 || positions[i].col < 0)
            throw std::invalid_argument("make_grouping: positions must be on the grid");
        windows[{positions[i].row / grouping_factor, positions[i].col / grouping_factor}].push_back(i);
    }
    Grouping g;
    g.num_groups = static_cast<int>(windows.size());
    g.pool = Matrix(g.num_groups, M);
    g.assignment.assign(M, -1);
    int gi = 0;
    for (const auto& [key, members] : windows) {
        const double w = 1.0 / static_cast<double>(members.size());
        for (int i : members) {
            g.pool.at(gi, i) = w;
            g.assignment[i] = gi;
        }
        ++gi;
    }
    return g;
}

std::pair<Matrix, std::vector<int>> group_pool(const Matrix& x, const std::vector<GridPos>& positions,
                                               int grouping_factor) {
    if (static_cast<int>(positions.size()) != x.rows)
        throw std::invalid_argument("group_pool: one position per instance required");
    Grouping g = make_grouping(positions, grouping_factor);
    return {matmul(g.pool, x), g.assignment};
}

Matrix attn(const Matrix& q, const Matrix& k, const Matrix& v, int scale_dim) {
    if (q.cols != k.cols || k.rows != v.rows) throw std::invalid_argument("attn: dimension mismatch");
    if (scale_dim < 1) throw std::invalid_argument("attn: scale_dim must be >= 1");
    Matrix scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(scale_dim)));
    return matmul(softmax_rows(scores), v);
}

int attn_node(ad::Tape& t, int q, int k, int v, int scale_dim, std::vector<int>* attention_rows) {
    if (t.value(q).cols != t.value(k).cols || t.value(k).rows != t.value(v).rows)
        throw std::invalid_argument("attn_node: dimension mismatch");
    int scores = t.affine(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(scale_dim)), 0.0);
    int p = t.softmax_rows(scores);
    if (attention_rows) attention_rows->push_back(p);
    return t.matmul(p, v);
}

int double_attn_node(ad::Tape& t, int x, int xa, const BlockParamNodes& p, double eta, int scale_dim,
                     std::vector<int>* attention_rows) {
    int q = t.add_rowvec(t.matmul(x, p.wq), p.bq);
    int k = t.matmul(x, p.wk);
    int v = t.add_rowvec(t.matmul(x, p.wv), p.bv);
    int qa = t.add_rowvec(t.matmul(xa, p.wq), p.bq);
    int ka = t.matmul(xa, p.wk);
    int inner = attn_node(t, qa, k, v, scale_dim, attention_rows);
    int outer = attn_node(t, q, ka, inner, scale_dim, attention_rows);
    return eta == 0.0 ? outer : t.add(outer, t.affine(v, eta, 0.0));
}

int gdat_forward_node(ad::Tape& t, int x, const Grouping& grouping, const GdatConfig& config,
                      const std::vector<BlockParamNodes>& blocks,
                      std::vector<int>* attention_rows) {
    config.validate();
    if (static_cast<int>(blocks.size()) != config.num_blocks)
        throw std::invalid_argument("gdat_forward_node: one parameter set per block required");
    int pool = t.constant(grouping.pool);
    int h = x;
    for (const BlockParamNodes& p : blocks) {
        int xa = t.matmul(pool, h);
        int refined = double_attn_node(t, h, xa, p, config.eta, config.effective_scale_dim(), attention_rows);
        h = t.add(h, t.add_rowvec(t.matmul(refined, p.wo), p.bo));
    }
    return h;
}

Matrix double_attn(const Matrix& x, const Matrix& xa, const Matrix& wq, const Matrix& wk,
                   const Matrix& wv, const Matrix& bq, const Matrix& bv, double eta, int scale_dim) {
    ad::Tape t;
    BlockParamNodes p{t.constant(wq), t.constant(wk), t.constant(wv), -1,
                      t.constant(bq), t.constant(bv), -1};
    int out = double_attn_node(t, t.constant(x), t.constant(xa), p, eta, scale_dim);
    return t.value(out);
}

}  // namespace comel
