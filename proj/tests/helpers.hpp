#pragma once

// Shared test utilities. The evaluators here are deliberately written
// as plain loops, independent of the tape, so they can serve as oracles
// for the library implementations.

#include <cmath>
#include <vector>

#include "comel/bppl.hpp"
#include "comel/gradcheck.hpp"
#include "comel/mil.hpp"
#include "comel/numeric.hpp"
#include "comel/synth.hpp"

namespace comel::testing {

// Literal evaluation of Attn(Q, K_A, Attn(Q_A, K, V)) + eta*V with
// nested loops and explicit softmax normalization.
inline Matrix double_attn_reference(const Matrix& x, const Matrix& xa, const Matrix& wq,
                                    const Matrix& wk, const Matrix& wv, const Matrix& bq,
                                    const Matrix& bv, double eta, int scale_dim) {
    auto project = [](const Matrix& in, const Matrix& w, const Matrix& b) {
        Matrix out(in.rows, w.cols);
        for (int i = 0; i < in.rows; ++i)
            for (int j = 0; j < w.cols; ++j) {
                double s = b.data[j];
                for (int k = 0; k < in.cols; ++k) s += in.at(i, k) * w.at(k, j);
                out.at(i, j) = s;
            }
        return out;
    };
    auto attend = [scale_dim](const Matrix& q, const Matrix& k, const Matrix& v) {
        Matrix out(q.rows, v.cols);
        const double inv = 1.0 / std::sqrt(static_cast<double>(scale_dim));
        for (int i = 0; i < q.rows; ++i) {
            std::vector<double> w(k.rows);
            double mx = -1e300;
            for (int j = 0; j < k.rows; ++j) {
                double s = 0.0;
                for (int d = 0; d < q.cols; ++d) s += q.at(i, d) * k.at(j, d);
                w[j] = s * inv;
                mx = std::max(mx, w[j]);
            }
            double norm = 0.0;
            for (int j = 0; j < k.rows; ++j) {
                w[j] = std::exp(w[j] - mx);
                norm += w[j];
            }
            for (int j = 0; j < k.rows; ++j)
                for (int d = 0; d < v.cols; ++d) out.at(i, d) += (w[j] / norm) * v.at(j, d);
        }
        return out;
    };
    Matrix zero_b(1, wk.cols);
    Matrix q = project(x, wq, bq);
    Matrix k = project(x, wk, zero_b);
    Matrix v = project(x, wv, bv);
    Matrix qa = project(xa, wq, bq);
    Matrix ka = project(xa, wk, zero_b);
    Matrix out = attend(q, ka, attend(qa, k, v));
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += eta * v.data[i];
    return out;
}

enum class LossPart { Bag, Instance, LmSum, Sep, Wsi };

// Wraps one bag's training loss as a grad_check-compatible function.
inline LossFn make_loss_fn(const Bag& bag, const MilConfig& config, const BpplConfig& bppl,
                           double tau1, GateMode mode, LossPart part) {
    return [=](const ParamMap& params, bool want_grad) {
        ad::Tape t;
        std::map<std::string, int> nodes;
        for (const auto& [name, tensor] : params) nodes[name] = t.param(tensor);
        BagGraph g = build_forward(t, bag, config, nodes);
        int root = -1;
        switch (part) {
            case LossPart::Bag:
                root = bag_loss_node(t, g.logits, bag.bag_label);
                break;
            case LossPart::Wsi:
                root = wsi_loss_node(t, g, bag.bag_label, bppl, tau1, mode).l_wsi;
                break;
            default: {
                const int predicted = argmax_class(t.value(g.logits));
                InstanceLossGraph inst = instance_loss_node(t, g, bag.bag_label, predicted, bppl, tau1, mode);
                root = part == LossPart::Instance ? inst.l_inst
                       : part == LossPart::LmSum  ? inst.l_m_sum
                                                  : inst.l_sep;
                break;
            }
        }
        LossEval ev;
        ev.value = t.value(root).data[0];
        if (want_grad) {
            t.backward(root);
            for (const auto& [name, node] : nodes) ev.grads[name] = t.grad(node);
        }
        return ev;
    };
}

// Ridge-regression instance probe: fit on train-bag instances, report
// accuracy on test-bag instances at threshold 0.5.
inline double linear_probe_accuracy(const std::vector<Bag>& train, const std::vector<Bag>& test) {
    const int d = train.front().instances.cols + 1;
    Matrix ata(d, d);
    Matrix atb(d, 1);
    auto visit = [&](const Bag& bag, auto&& fn) {
        for (int m = 0; m < bag.instances.rows; ++m) {
            std::vector<double> x(d, 1.0);
            for (int j = 0; j < d - 1; ++j) x[j] = bag.instances.at(m, j);
            fn(x, bag.instance_labels[m]);
        }
    };
    for (const Bag& bag : train)
        visit(bag, [&](const std::vector<double>& x, int y) {
            for (int i = 0; i < d; ++i) {
                atb.at(i, 0) += x[i] * y;
                for (int j = 0; j < d; ++j) ata.at(i, j) += x[i] * x[j];
            }
        });
    for (int i = 0; i < d; ++i) ata.at(i, i) += 1e-3;

    SvdResult decomp = svd(ata);
    Matrix w(d, 1);
    for (int k = 0; k < d; ++k) {
        if (decomp.s[k] < 1e-10) continue;
        double utb = 0.0;
        for (int i = 0; i < d; ++i) utb += decomp.u.at(i, k) * atb.at(i, 0);
        for (int i = 0; i < d; ++i) w.at(i, 0) += decomp.v.at(i, k) * utb / decomp.s[k];
    }

    int correct = 0, total = 0;
    for (const Bag& bag : test)
        visit(bag, [&](const std::vector<double>& x, int y) {
            double score = 0.0;
            for (int i = 0; i < d; ++i) score += w.at(i, 0) * x[i];
            correct += ((score >= 0.5) == (y == 1)) ? 1 : 0;
            ++total;
        });
    return static_cast<double>(correct) / total;
}

}  // namespace comel::testing
