#include "comel/bppl.hpp"

#include <algorithm>

#include "comel/numeric.hpp"

namespace comel {

bool BpplConfig::is_positive(int label) const {
    return std::find(positive_classes.begin(), positive_classes.end(), label) != positive_classes.end();
}

void BpplConfig::validate() const {
    if (temperature <= 0.0) throw std::invalid_argument("BpplConfig: temperature must be > 0");
    if (tau < 0.0 || tau > 0.5) throw std::invalid_argument("BpplConfig: tau must be in [0, 0.5]");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("BpplConfig: lambdas must be >= 0");
    if (clamp_delta <= 0.0 || clamp_delta >= 0.5) throw std::invalid_argument("BpplConfig: bad clamp_delta");
}

double adaptive_threshold(const AccEstimator& acc, double tau) {
    return 0.5 + tau * std::clamp(acc.estimate, 0.0, 1.0);
}

Matrix normalize_attention(const Matrix& attention) {
    for (double a : attention.data)
        if (a < 0.0) throw std::invalid_argument("normalize_attention: attention must be nonnegative");
    const double amax = *std::max_element(attention.data.begin(), attention.data.end());
    Matrix alpha(attention.rows, attention.cols);
    if (amax < 1e-12) return alpha;
    const double amin = *std::min_element(attention.data.begin(), attention.data.end());
    for (size_t i = 0; i < attention.size(); ++i) alpha.data[i] = (attention.data[i] - amin) / amax;
    return alpha;
}

PrototypePair compute_prototypes(const Matrix& h, const Matrix& attention, const Matrix& alpha) {
    if (attention.size() != static_cast<size_t>(h.rows) || alpha.size() != attention.size())
        throw std::invalid_argument("compute_prototypes: one weight per instance required");
    PrototypePair pair;
    pair.reversed = Matrix(1, h.rows);
    double denom = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) denom += 1.0 - alpha.data[i];
    if (denom <= 1e-12) {
        pair.reversed = Matrix::filled(1, h.rows, 1.0 / h.rows);
    } else {
        for (int i = 0; i < h.rows; ++i) pair.reversed.data[i] = (1.0 - alpha.data[i]) / denom;
    }
    Matrix a_row(1, h.rows);
    std::copy(attention.data.begin(), attention.data.end(), a_row.data.begin());
    pair.x_bag = matmul(a_row, h);
    pair.x_tilde = matmul(pair.reversed, h);
    pair.x_bar = scale(add(pair.x_bag, pair.x_tilde), 0.5);
    pair.r = sub(pair.x_bag, pair.x_bar);
    pair.r_tilde = sub(pair.x_tilde, pair.x_bar);
    return pair;
}

double sep_loss(const PrototypePair& pair) { return cosine_sim(pair.x_bag, pair.x_tilde); }

PseudoLabels pseudo_label_probs(const Matrix& h, const PrototypePair& pair, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("pseudo_label_probs: temperature must be > 0");
    PseudoLabels out;
    out.probs = Matrix(h.rows, 2);
    out.labels.resize(h.rows);
    out.confidence.resize(h.rows);
    for (int m = 0; m < h.rows; ++m) {
        Matrix xm(1, h.cols);
        for (int j = 0; j < h.cols; ++j) xm.data[j] = h.at(m, j) - pair.x_bar.data[j];
        const double s_pos = cosine_sim(xm, pair.r);
        const double s_neg = cosine_sim(xm, pair.r_tilde);
        Matrix logits(1, 2, {s_pos / temperature, s_neg / temperature});
        Matrix p = softmax_rows(logits);
        out.probs.at(m, 0) = p.data[0];
        out.probs.at(m, 1) = p.data[1];
        out.labels[m] = p.data[0] >= p.data[1] ? 1 : 0;
        out.confidence[m] = std::max(p.data[0], p.data[1]);
    }
    return out;
}

InstanceLossGraph instance_loss_node(ad::Tape& t, const BagGraph& g, int label, int predicted,
                                     const BpplConfig& config, double tau1, GateMode mode) {
    config.validate();
    InstanceLossGraph r;
    r.bag_gate = config.is_positive(label);
    r.correct_gate = (predicted == label) || mode == GateMode::ForceOpen;
    if (!r.bag_gate) {
        r.l_inst = t.constant(Matrix(1, 1));
        return r;
    }

    const int M = t.value(g.attention).cols;
    r.alpha = t.bcast_div(t.bcast_sub(g.attention, t.min_all(g.attention)), t.max_all(g.attention));
    int one_minus = t.affine(r.alpha, -1.0, 1.0);
    r.reversed = t.bcast_div(one_minus, t.sum_all(one_minus));
    r.x_tilde = t.matmul(r.reversed, g.features);

    // x_bag is the aggregator's bag feature; prototypes live in the
    // refined feature space.
    int x_bag = g.bag_feature;
    r.l_sep = t.cosine_vec(x_bag, r.x_tilde);
    int x_bar = t.affine(t.add(x_bag, r.x_tilde), 0.5, 0.0);
    int rvec = t.sub(x_bag, x_bar);
    int centered = t.sub_rowvec(g.features, x_bar);
    int sims = t.cosine_rows(centered, rvec);  // M x 1

    // Pseudo-labels and confidences are filters, not gradient paths:
    // p_m = softmax([s/T, -s/T]) evaluated on the forward values.
    const Matrix& s = t.value(sims);
    r.pseudo_labels.resize(M);
    r.instance_gates.resize(M);
    Matrix w_pos(1, M), w_neg(1, M);
    for (int m = 0; m < M; ++m) {
        const double e = std::exp(2.0 * std::abs(s.at(m, 0)) / config.temperature);
        const double confidence = e / (e + 1.0);
        r.pseudo_labels[m] = s.at(m, 0) >= 0.0 ? 1 : 0;
        const bool open = r.correct_gate && (mode == GateMode::ForceOpen || confidence > tau1);
        r.instance_gates[m] = open;
        if (open) (r.pseudo_labels[m] ? w_pos : w_neg).data[m] = 1.0;
    }

    int alpha_c = t.clamp(r.alpha, config.clamp_delta, 1.0 - config.clamp_delta);
    int log_a = t.log_(alpha_c);
    int log_1ma = t.log_(t.affine(alpha_c, -1.0, 1.0));
    int bce = t.add(t.mul(t.constant(w_pos), log_a), t.mul(t.constant(w_neg), log_1ma));
    r.l_m_sum = t.affine(t.sum_all(bce), -1.0, 0.0);

    r.l_inst = t.add(t.affine(r.l_m_sum, config.lambda1 / static_cast<double>(M), 0.0),
                     t.affine(r.l_sep, config.lambda2, 0.0));
    return r;
}

WsiLossGraph wsi_loss_node(ad::Tape& t, const BagGraph& g, int label, const BpplConfig& config,
                           double tau1, GateMode mode) {
    WsiLossGraph w;
    w.l_bag = bag_loss_node(t, g.logits, label);
    const int predicted = argmax_class(t.value(g.logits));
    w.inst = instance_loss_node(t, g, label, predicted, config, tau1, mode);
    w.l_wsi = t.add(w.l_bag, w.inst.l_inst);
    return w;
}

namespace {

double instance_loss_from_graph(const Bag& bag, const BagOutput& out, const Matrix& refined,
                                const BpplConfig& config, const AccEstimator& acc) {
    ad::Tape t;
    BagGraph g;
    g.features = t.constant(refined);
    g.attention = t.constant(out.attention);
    g.bag_feature = t.matmul(g.attention, g.features);
    g.logits = t.constant(out.bag_logits);
    InstanceLossGraph r = instance_loss_node(t, g, bag.bag_label, out.predicted, config,
                                             adaptive_threshold(acc, config.tau));
    return t.value(r.l_inst).data[0];
}

}  // namespace

double instance_loss(const Bag& bag, const BagOutput& out, const Matrix& refined,
                     const BpplConfig& config, const AccEstimator& acc) {
    return instance_loss_from_graph(bag, out, refined, config, acc);
}

double wsi_loss(const Bag& bag, const BagOutput& out, const Matrix& refined,
                const BpplConfig& config, const AccEstimator& acc) {
    return bag_loss(out.bag_logits, bag.bag_label) + instance_loss(bag, out, refined, config, acc);
}

}  // namespace comel
