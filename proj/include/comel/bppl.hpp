#pragma once

#include <vector>

#include "comel/autodiff.hpp"
#include "comel/matrix.hpp"
#include "comel/mil.hpp"

namespace comel {

struct BpplConfig {
    double temperature = 0.5;  // T
    double tau = 0.35;
    double lambda1 = 0.5;
    double lambda2 = 1.0;
    double clamp_delta = 1e-6;  // probability clamp before the BCE logs
    std::vector<int> positive_classes;

    bool is_positive(int label) const;
    void validate() const;
};

// Running estimate of E[1(Yhat = Y)] on the training stream; drives the
// adaptive confidence threshold.
struct AccEstimator {
    double momentum = 0.99;
    double estimate = 0.0;

    void update(bool correct) { estimate = momentum * estimate + (momentum == 1.0 ? 0.0 : (1.0 - momentum)) * (correct ? 1.0 : 0.0); }
};

// tau1 = 0.5 + tau * E[1(Yhat = Y)]
double adaptive_threshold(const AccEstimator& acc, double tau);

// alpha_m = (a_m - min_i a_i) / max_i a_i. All-zero output when the
// attention mass degenerates (max below 1e-12).
Matrix normalize_attention(const Matrix& attention);

struct PrototypePair {
    Matrix x_bag;     // 1 x D, attention-weighted prototype
    Matrix x_tilde;   // 1 x D, reversed-attention prototype
    Matrix x_bar;     // midpoint
    Matrix r;         // x_bag - x_bar
    Matrix r_tilde;   // x_tilde - x_bar = -r
    Matrix reversed;  // a~, 1 x M on the simplex
};

PrototypePair compute_prototypes(const Matrix& h, const Matrix& attention, const Matrix& alpha);

// L_sep: cosine similarity of the two prototypes.
double sep_loss(const PrototypePair& pair);

struct PseudoLabels {
    Matrix probs;                    // M x 2, column 0 is the positive class
    std::vector<int> labels;         // argmax per instance (1 = positive)
    std::vector<double> confidence;  // max probability per instance
};

// p_m = softmax([sim(x_m - x_bar, r)/T, sim(x_m - x_bar, r~)/T]).
PseudoLabels pseudo_label_probs(const Matrix& h, const PrototypePair& pair, double temperature);

enum class GateMode { Auto, ForceOpen };

// Tape-side instance loss for one bag. Gates are hard (no gradient):
// the bag-correctness and confidence indicators pick which instances
// contribute BCE terms against alpha.
struct InstanceLossGraph {
    int alpha = -1;      // 1 x M
    int reversed = -1;   // 1 x M
    int x_tilde = -1;    // 1 x D
    int l_sep = -1;      // scalar
    int l_m_sum = -1;    // scalar, sum of gated L_m
    int l_inst = -1;     // scalar
    bool bag_gate = false;      // 1(Y in Y_pos)
    bool correct_gate = false;  // 1(Yhat = Y)
    std::vector<int> pseudo_labels;
    std::vector<bool> instance_gates;  // confidence and correctness combined
};

InstanceLossGraph instance_loss_node(ad::Tape& t, const BagGraph& g, int label, int predicted,
                                     const BpplConfig& config, double tau1,
                                     GateMode mode = GateMode::Auto);

// L_WSI = L_bag + L_inst on the tape.
struct WsiLossGraph {
    int l_bag = -1;
    int l_wsi = -1;
    InstanceLossGraph inst;
};
WsiLossGraph wsi_loss_node(ad::Tape& t, const BagGraph& g, int label, const BpplConfig& config,
                           double tau1, GateMode mode = GateMode::Auto);

// Value-level instance loss (drives the spec's arithmetic oracles).
double instance_loss(const Bag& bag, const BagOutput& out, const Matrix& refined_features,
                     const BpplConfig& config, const AccEstimator& acc);
double wsi_loss(const Bag& bag, const BagOutput& out, const Matrix& refined_features,
                const BpplConfig& config, const AccEstimator& acc);

}  // namespace comel
