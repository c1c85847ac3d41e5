#pragma once

#include <map>
#include <string>
#include <vector>

#include "comel/autodiff.hpp"
#include "comel/gdat.hpp"
#include "comel/gradcheck.hpp"
#include "comel/synth.hpp"

namespace comel {

// All trainable tensors of the pipeline, addressed by stable dotted
// names (gdat.block0.wq, agg.p1, cls.w, ...).
using ModelParams = ParamMap;

struct MilConfig {
    int feature_dim = 32;  // D, dimension of the frozen input features
    int num_classes = 2;
    GdatConfig gdat;

    int agg_hidden() const { return std::max(1, feature_dim / 2); }  // D_h
    void validate() const;
};

// Names of the linear layers OWLoRA adapts: every GDAT projection plus
// both aggregator projections. The classifier and all bias/scorer
// vectors are excluded.
std::vector<std::string> adapted_layer_names(const MilConfig& config);
std::vector<std::string> all_param_names(const MilConfig& config);

// Weights drawn at gaussian(0, init_scale); biases, scorer and
// classifier start at zero. Deterministic per (seed, tensor name).
ModelParams init_model_params(const MilConfig& config, std::uint64_t seed, double init_scale);

struct BagOutput {
    Matrix bag_logits;  // 1 x C
    int predicted = 0;  // argmax class, lowest index wins ties
    Matrix attention;   // A, 1 x M on the simplex
    Matrix bag_feature; // z, 1 x D
};

// Tape handles for one bag's forward pass.
struct BagGraph {
    int features = -1;   // H, M x D refined instances
    int attention = -1;  // A, 1 x M
    int bag_feature = -1;
    int logits = -1;
    std::vector<int> attention_rows;  // softmax nodes of both gdat attentions
};

// Composes gdat_forward -> gated-attention aggregation -> classifier.
// param_nodes must contain a tape node per name in all_param_names.
BagGraph build_forward(ad::Tape& t, const Bag& bag, const MilConfig& config,
                       const std::map<std::string, int>& param_nodes);

// Cross-entropy on the tape; label is a constant.
int bag_loss_node(ad::Tape& t, int logits, int label);

// Value-level entry points.
BagOutput forward(const Bag& bag, const MilConfig& config, const ModelParams& params);
std::pair<Matrix, Matrix> aggregate(const Matrix& h, const Matrix& p1, const Matrix& p2,
                                    const Matrix& w);  // (z, A)
Matrix classify(const Matrix& z, const Matrix& cls_w, const Matrix& cls_b);
double bag_loss(const Matrix& logits, int label);
int argmax_class(const Matrix& logits);
// Argmax over an allowed subset of classes (masked bag accuracy).
int argmax_class_masked(const Matrix& logits, const std::vector<int>& allowed);

}  // namespace comel
