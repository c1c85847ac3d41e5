#include "comel/mil.hpp"

#include "comel/numeric.hpp"
#include "comel/rng.hpp"

namespace comel {

void MilConfig::validate() const {
    if (feature_dim < 2) throw std::invalid_argument("MilConfig: feature_dim must be >= 2");
    if (num_classes < 2) throw std::invalid_argument("MilConfig: num_classes must be >= 2");
    gdat.validate();
}

std::vector<std::string> adapted_layer_names(const MilConfig& config) {
    std::vector<std::string> names;
    for (int b = 0; b < config.gdat.num_blocks; ++b) {
        const std::string prefix = "gdat.block" + std::to_string(b) + ".";
        for (const char* w : {"wq", "wk", "wv", "wo"}) names.push_back(prefix + w);
    }
    names.push_back("agg.p1");
    names.push_back("agg.p2");
    return names;
}

std::vector<std::string> all_param_names(const MilConfig& config) {
    std::vector<std::string> names;
    for (int b = 0; b < config.gdat.num_blocks; ++b) {
        const std::string prefix = "gdat.block" + std::to_string(b) + ".";
        for (const char* w : {"wq", "wk", "wv", "wo", "bq", "bv", "bo"}) names.push_back(prefix + w);
    }
    for (const char* w : {"agg.p1", "agg.p2", "agg.w", "cls.w", "cls.b"}) names.push_back(w);
    return names;
}

ModelParams init_model_params(const MilConfig& config, std::uint64_t seed, double init_scale) {
    config.validate();
    const int D = config.feature_dim;
    const int D1 = config.gdat.model_dim;
    const int Dh = config.agg_hidden();

    auto gaussian = [&](const std::string& name, int r, int c) {
        Rng rng(derive_seed(seed, name));
        return rng.gaussian_matrix(r, c, init_scale);
    };

    ModelParams params;
    for (int b = 0; b < config.gdat.num_blocks; ++b) {
        const std::string prefix = "gdat.block" + std::to_string(b) + ".";
        params[prefix + "wq"] = gaussian(prefix + "wq", D, D1);
        params[prefix + "wk"] = gaussian(prefix + "wk", D, D1);
        params[prefix + "wv"] = gaussian(prefix + "wv", D, D1);
        params[prefix + "wo"] = gaussian(prefix + "wo", D1, D);
        params[prefix + "bq"] = Matrix(1, D1);
        params[prefix + "bv"] = Matrix(1, D1);
        params[prefix + "bo"] = Matrix(1, D);
    }
    params["agg.p1"] = gaussian("agg.p1", D, Dh);
    params["agg.p2"] = gaussian("agg.p2", D, Dh);
    params["agg.w"] = gaussian("agg.w", 1, Dh);
    params["cls.w"] = Matrix(config.num_classes, D);
    params["cls.b"] = Matrix(1, config.num_classes);
    return params;
}

BagGraph build_forward(ad::Tape& t, const Bag& bag, const MilConfig& config,
                       const std::map<std::string, int>& param_nodes) {
    require_shape(bag.instances, bag.instances.rows, config.feature_dim, "bag instances");
    require_finite(bag.instances, "bag instances");
    auto node = [&](const std::string& name) {
        auto it = param_nodes.find(name);
        if (it == param_nodes.end()) throw std::invalid_argument("build_forward: missing tensor " + name);
        return it->second;
    };

    BagGraph g;
    int x = t.constant(bag.instances);

    int h = x;
    if (config.gdat.num_blocks > 0) {
        std::vector<BlockParamNodes> blocks;
        for (int b = 0; b < config.gdat.num_blocks; ++b) {
            const std::string prefix = "gdat.block" + std::to_string(b) + ".";
            blocks.push_back({node(prefix + "wq"), node(prefix + "wk"), node(prefix + "wv"),
                              node(prefix + "wo"), node(prefix + "bq"), node(prefix + "bv"),
                              node(prefix + "bo")});
        }
        Grouping grouping = make_grouping(bag.positions, config.gdat.grouping_factor);
        h = gdat_forward_node(t, x, grouping, config.gdat, blocks, &g.attention_rows);
    }
    g.features = h;

    // Gated attention: s_m = w^T (tanh(P1 h_m) (*) sigm(P2 h_m)).
    int gated = t.mul(t.tanh_(t.matmul(h, node("agg.p1"))), t.sigmoid(t.matmul(h, node("agg.p2"))));
    int scores = t.transpose(t.matmul_nt(gated, node("agg.w")));  // 1 x M
    g.attention = t.softmax_rows(scores);
    g.bag_feature = t.matmul(g.attention, h);  // 1 x D

    g.logits = t.add(t.matmul_nt(g.bag_feature, node("cls.w")), node("cls.b"));
    if (!t.value(g.logits).all_finite())
        throw std::runtime_error("build_forward: non-finite logits");
    return g;
}

int bag_loss_node(ad::Tape& t, int logits, int label) {
    const Matrix& lv = t.value(logits);
    if (label < 0 || label >= lv.cols) throw std::invalid_argument("bag_loss: invalid class id");
    Matrix onehot(1, lv.cols);
    onehot.data[label] = 1.0;
    int p = t.softmax_rows(logits);
    int logp = t.log_(t.clamp(p, 1e-300, 2.0));
    return t.affine(t.sum_all(t.mul(logp, t.constant(onehot))), -1.0, 0.0);
}

BagOutput forward(const Bag& bag, const MilConfig& config, const ModelParams& params) {
    ad::Tape t;
    std::map<std::string, int> nodes;
    for (const auto& [name, tensor] : params) nodes[name] = t.constant(tensor);
    BagGraph g = build_forward(t, bag, config, nodes);
    BagOutput out;
    out.bag_logits = t.value(g.logits);
    out.predicted = argmax_class(out.bag_logits);
    out.attention = t.value(g.attention);
    out.bag_feature = t.value(g.bag_feature);
    return out;
}

std::pair<Matrix, Matrix> aggregate(const Matrix& h, const Matrix& p1, const Matrix& p2,
                                    const Matrix& w) {
    require_finite(h, "aggregate");
    ad::Tape t;
    int hn = t.constant(h);
    int gated = t.mul(t.tanh_(t.matmul(hn, t.constant(p1))), t.sigmoid(t.matmul(hn, t.constant(p2))));
    int a = t.softmax_rows(t.transpose(t.matmul_nt(gated, t.constant(w))));
    int z = t.matmul(a, hn);
    return {t.value(z), t.value(a)};
}

Matrix classify(const Matrix& z, const Matrix& cls_w, const Matrix& cls_b) {
    return add(matmul_nt(z, cls_w), cls_b);
}

double bag_loss(const Matrix& logits, int label) {
    ad::Tape t;
    return t.value(bag_loss_node(t, t.constant(logits), label)).data[0];
}

int argmax_class(const Matrix& logits) {
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
        if (logits.data[j] > logits.data[best]) best = j;
    return best;
}

int argmax_class_masked(const Matrix& logits, const std::vector<int>& allowed) {
    if (allowed.empty()) throw std::invalid_argument("argmax_class_masked: empty class set");
    int best = allowed.front();
    for (int j : allowed)
        if (logits.data[j] > logits.data[best]) best = j;
    return best;
}

}  // namespace comel
