#pragma once

#include "comel/autodiff.hpp"
#include "comel/matrix.hpp"
#include "comel/synth.hpp"

namespace comel {

struct GdatConfig {
    int model_dim = 32;        // D1, projection width of Q/K/V
    int num_blocks = 2;
    int grouping_factor = 16;  // F, side of the pooling window in grid cells
    double eta = 0.1;
    int scale_dim = 0;  // 0 means model_dim

    int effective_scale_dim() const { return scale_dim > 0 ? scale_dim : model_dim; }
    void validate() const;
};

// Region grouping of a bag's grid: the grid is tiled by F x F windows
// and each nonempty window becomes one group. Ragged boundary windows
// stay as smaller groups.
struct Grouping {
    Matrix pool;                 // m x M averaging matrix, rows sum to 1
    std::vector<int> assignment; // instance -> group
    int num_groups = 0;
};

Grouping make_grouping(const std::vector<GridPos>& positions, int grouping_factor);

// Average-pooled group tokens: X_A = pool * X (m x D).
std::pair<Matrix, std::vector<int>> group_pool(const Matrix& x, const std::vector<GridPos>& positions,
                                               int grouping_factor);

// Standard softmax attention, out_i = sum_j softmax_j(Q_i.K_j/sqrt(scale_dim)) V_j.
Matrix attn(const Matrix& q, const Matrix& k, const Matrix& v, int scale_dim);

// Per-block parameters. The key projection carries no bias: a constant
// added to every key shifts each score row uniformly, which row-softmax
// cancels, so such a bias would be a dead parameter.
struct BlockParamNodes {
    int wq, wk, wv, wo;  // projections
    int bq, bv, bo;      // biases
};

// Tape builders. attention_rows, when supplied, collects the softmax
// node of every attention built (for the row-sum invariant checks).
int attn_node(ad::Tape& t, int q, int k, int v, int scale_dim, std::vector<int>* attention_rows = nullptr);

// Double attention through the group tokens plus the value diversity
// term: Attn(Q, K_A, Attn(Q_A, K, V)) + eta*V. Output is M x D1; no
// M x M matrix is ever formed (both score matrices are m x M / M x m).
int double_attn_node(ad::Tape& t, int x, int xa, const BlockParamNodes& p, double eta, int scale_dim,
                     std::vector<int>* attention_rows = nullptr);

// Stacked blocks: each block pools its input, applies double attention,
// projects back to D through W_O and adds a residual connection.
int gdat_forward_node(ad::Tape& t, int x, const Grouping& grouping, const GdatConfig& config,
                      const std::vector<BlockParamNodes>& blocks,
                      std::vector<int>* attention_rows = nullptr);

// Value-only convenience used by unit tests.
Matrix double_attn(const Matrix& x, const Matrix& xa, const Matrix& wq, const Matrix& wk,
                   const Matrix& wv, const Matrix& bq, const Matrix& bv, double eta, int scale_dim);

}  // namespace comel
