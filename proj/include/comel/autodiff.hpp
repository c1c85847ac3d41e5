#pragma once

#include "comel/matrix.hpp"

namespace comel::ad {

// Define-by-run reverse-mode tape over a closed op set. Values are
// computed eagerly at node creation; backward() fills gradients for
// every node reachable from a trainable leaf. Node ids index into the
// tape and stay valid until reset().
class Tape {
  public:
    int param(Matrix v);     // trainable leaf
    int constant(Matrix v);  // gradient-free leaf

    int matmul(int a, int b);     // A * B
    int matmul_nt(int a, int b);  // A * B^T
    int matmul_tn(int a, int b);  // A^T * B
    int transpose(int a);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);                      // elementwise
    int affine(int a, double k, double c);      // k*A + c, elementwise
    int add_rowvec(int a, int v);               // A + ones*v, v is 1 x cols
    int sub_rowvec(int a, int v);               // A - ones*v
    int bcast_sub(int a, int s);                // A - s, s is 1x1
    int bcast_div(int a, int s);                // A / s, s is 1x1
    int scale_cols(int a, int s);               // column j scaled by s_j, s is 1 x cols
    int softmax_rows(int a);
    int tanh_(int a);
    int sigmoid(int a);
    int log_(int a);
    int clamp(int a, double lo, double hi);
    int sum_all(int a);   // 1x1
    int mean_all(int a);  // 1x1
    int min_all(int a);   // 1x1, subgradient routed to first arg-min entry
    int max_all(int a);   // 1x1, subgradient routed to first arg-max entry
    // Cosine similarity of two vectors (same total length); 1x1 output.
    // Value and gradient are 0 when either norm is below 1e-12.
    int cosine_vec(int a, int b);
    // Row m of the output is the cosine similarity of row m of A with
    // the vector r (1 x cols). Output is rows x 1.
    int cosine_rows(int a, int r);

    const Matrix& value(int id) const { return nodes_[id].value; }
    // Valid after backward(); zero matrix for nodes that got no gradient.
    const Matrix& grad(int id);

    // Seeds d(root)/d(root) = 1 and accumulates into every reachable
    // trainable leaf. root must be 1x1.
    void backward(int root);

    void reset();
    size_t size() const { return nodes_.size(); }

  private:
    enum class Op {
        Leaf, MatMul, MatMulNT, MatMulTN, Transpose, Add, Sub, Mul, Affine,
        AddRowVec, SubRowVec, BcastSub, BcastDiv, ScaleCols, SoftmaxRows,
        Tanh, Sigmoid, Log, Clamp, SumAll, MeanAll, MinAll, MaxAll,
        CosineVec, CosineRows,
    };
    struct Node {
        Op op;
        int a = -1, b = -1;
        double c0 = 0.0, c1 = 0.0;
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        bool grad_live = false;
    };

    int push(Op op, Matrix value, int a, int b, double c0 = 0.0, double c1 = 0.0);
    Matrix& grad_buf(Node& n);
    void backprop_node(int id);

    std::vector<Node> nodes_;
};

}  // namespace comel::ad
