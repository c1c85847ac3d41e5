#include "comel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace comel {

void MetricsMatrix::start_stage() {
    rows.emplace_back();
    num_tasks = static_cast<int>(rows.size());
}

bool MetricsMatrix::complete() const {
    for (size_t n = 0; n < rows.size(); ++n)
        if (rows[n].size() != n + 1) return false;
    return !rows.empty();
}

Summary finalize_metrics(const MetricsMatrix& m) {
    if (!m.complete()) throw std::invalid_argument("finalize_metrics: incomplete matrix");
    const int N = m.num_tasks;
    Summary s;
    for (int l = 1; l <= N; ++l) {
        const EvalOutcome& last = m.at(N, l);
        s.acc_bag += last.bag_acc / N;
        s.acc_inst += last.inst_acc / N;
        s.acc_inst_pos += last.inst_acc_pos / N;
        s.iou += last.iou / N;
        s.dice += last.dice / N;
        s.macc_bag += last.masked_bag_acc / N;
    }
    if (N > 1) {
        double fbag = 0.0, finst = 0.0;
        for (int l = 1; l <= N - 1; ++l) {
            double best_bag = -1.0, best_inst = -1.0;
            for (int n = l; n <= N - 1; ++n) {
                best_bag = std::max(best_bag, m.at(n, l).bag_acc);
                best_inst = std::max(best_inst, m.at(n, l).inst_acc);
            }
            fbag += (best_bag - m.at(N, l).bag_acc) / (N - 1);
            finst += (best_inst - m.at(N, l).inst_acc) / (N - 1);
        }
        s.forget_bag = fbag;
        s.forget_inst = finst;
    }
    return s;
}

EvalOutcome recompute_outcome(const std::vector<BagRecord>& records, int stage, int task) {
    long bag_ok = 0, bag_n = 0, masked_ok = 0;
    long inst_ok = 0, inst_n = 0, pos_ok = 0, pos_n = 0;
    double iou_sum = 0.0, dice_sum = 0.0;
    long pos_bags = 0;
    for (const BagRecord& r : records) {
        if (r.stage != stage || r.task != task) continue;
        ++bag_n;
        bag_ok += r.predicted == r.label ? 1 : 0;
        masked_ok += r.predicted_masked == r.label ? 1 : 0;
        long inter = 0, pred_sz = 0, true_sz = 0;
        for (size_t m = 0; m < r.inst_pred.size(); ++m) {
            const bool p = r.inst_pred[m] != 0, t = r.inst_true[m] != 0;
            inst_ok += p == t ? 1 : 0;
            ++inst_n;
            if (r.positive_bag) {
                pos_ok += p == t ? 1 : 0;
                ++pos_n;
            }
            inter += (p && t) ? 1 : 0;
            pred_sz += p ? 1 : 0;
            true_sz += t ? 1 : 0;
        }
        if (r.positive_bag) {
            ++pos_bags;
            const long uni = pred_sz + true_sz - inter;
            iou_sum += uni > 0 ? static_cast<double>(inter) / uni : 1.0;
            dice_sum += (pred_sz + true_sz) > 0 ? 2.0 * inter / (pred_sz + true_sz) : 1.0;
        }
    }
    if (bag_n == 0) throw std::invalid_argument("recompute_outcome: no records for stage " +
                                                std::to_string(stage) + " task " + std::to_string(task));
    EvalOutcome e;
    e.bag_acc = static_cast<double>(bag_ok) / bag_n;
    e.masked_bag_acc = static_cast<double>(masked_ok) / bag_n;
    e.inst_acc = inst_n ? static_cast<double>(inst_ok) / inst_n : 0.0;
    e.inst_acc_pos = pos_n ? static_cast<double>(pos_ok) / pos_n : 0.0;
    e.iou = pos_bags ? iou_sum / pos_bags : 0.0;
    e.dice = pos_bags ? dice_sum / pos_bags : 0.0;
    return e;
}

namespace {

void expect_close(double a, double b, const std::string& what) {
    if (std::abs(a - b) > 1e-12)
        throw std::runtime_error("verify_metrics: " + what + " mismatch (" + std::to_string(a) + " vs " +
                                 std::to_string(b) + ")");
}

}  // namespace

void verify_metrics(const std::vector<BagRecord>& records, const MetricsMatrix& matrix,
                    const Summary& summary) {
    // Which (stage, task) cells do the records cover?
    for (int n = 1; n <= matrix.num_tasks; ++n)
        for (int l = 1; l <= n; ++l) {
            bool covered = false;
            for (const BagRecord& r : records)
                if (r.stage == n && r.task == l) {
                    covered = true;
                    break;
                }
            if (!covered) continue;
            EvalOutcome e = recompute_outcome(records, n, l);
            const EvalOutcome& got = matrix.at(n, l);
            expect_close(e.bag_acc, got.bag_acc, "bag_acc");
            expect_close(e.inst_acc, got.inst_acc, "inst_acc");
            expect_close(e.inst_acc_pos, got.inst_acc_pos, "inst_acc_pos");
            expect_close(e.iou, got.iou, "iou");
            expect_close(e.dice, got.dice, "dice");
            expect_close(e.masked_bag_acc, got.masked_bag_acc, "masked_bag_acc");
        }

    // Summary by the literal formulas, written independently of
    // finalize_metrics.
    const int N = matrix.num_tasks;
    double acc_bag = 0, acc_inst = 0, macc = 0, iou = 0, dice = 0, acc_inst_pos = 0;
    for (int l = 1; l <= N; ++l) {
        acc_bag += matrix.at(N, l).bag_acc;
        acc_inst += matrix.at(N, l).inst_acc;
        acc_inst_pos += matrix.at(N, l).inst_acc_pos;
        macc += matrix.at(N, l).masked_bag_acc;
        iou += matrix.at(N, l).iou;
        dice += matrix.at(N, l).dice;
    }
    expect_close(acc_bag / N, summary.acc_bag, "summary acc_bag");
    expect_close(acc_inst / N, summary.acc_inst, "summary acc_inst");
    expect_close(acc_inst_pos / N, summary.acc_inst_pos, "summary acc_inst_pos");
    expect_close(macc / N, summary.macc_bag, "summary macc_bag");
    expect_close(iou / N, summary.iou, "summary iou");
    expect_close(dice / N, summary.dice, "summary dice");
    if (N == 1) {
        if (summary.forget_bag || summary.forget_inst)
            throw std::runtime_error("verify_metrics: forgetting must be absent for a single task");
    } else {
        double fbag = 0, finst = 0;
        for (int l = 1; l < N; ++l) {
            double bb = 0.0, bi = 0.0;
            for (int n = l; n < N; ++n) {
                bb = std::max(bb, matrix.at(n, l).bag_acc);
                bi = std::max(bi, matrix.at(n, l).inst_acc);
            }
            fbag += bb - matrix.at(N, l).bag_acc;
            finst += bi - matrix.at(N, l).inst_acc;
        }
        expect_close(fbag / (N - 1), summary.forget_bag.value(), "summary forget_bag");
        expect_close(finst / (N - 1), summary.forget_inst.value(), "summary forget_inst");
    }
}

}  // namespace comel
