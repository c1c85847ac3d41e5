#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace comel {

struct EvalOutcome {
    double bag_acc = 0.0;
    double inst_acc = 0.0;      // micro over all instances of all test bags
    double inst_acc_pos = 0.0;  // micro over instances of positive bags
    double iou = 0.0;           // macro over positive bags
    double dice = 0.0;
    double masked_bag_acc = 0.0;  // argmax restricted to the task's classes
};

// Lower-triangular R[n][l]: task-l scores after training stage n.
struct MetricsMatrix {
    int num_tasks = 0;
    std::vector<std::vector<EvalOutcome>> rows;  // rows[n-1] has n entries

    void start_stage();  // appends an empty row
    void push_entry(const EvalOutcome& e) { rows.back().push_back(e); }
    const EvalOutcome& at(int stage, int task) const { return rows[stage - 1][task - 1]; }
    bool complete() const;
};

struct Summary {
    double acc_bag = 0.0;
    double acc_inst = 0.0;
    double acc_inst_pos = 0.0;
    double iou = 0.0;
    double dice = 0.0;
    double macc_bag = 0.0;
    std::optional<double> forget_bag;
    std::optional<double> forget_inst;
};

// ACC_* = mean of the last row; Forget_* = mean over l < N of
// (max over n in [l, N-1] of R[n][l]) - R[N][l]; absent when N = 1.
Summary finalize_metrics(const MetricsMatrix& m);

// Raw per-bag predictions kept for the independent recomputation.
struct BagRecord {
    int stage = 0;  // n
    int task = 0;   // l
    int label = 0;
    int predicted = 0;
    int predicted_masked = 0;
    bool positive_bag = false;
    std::vector<std::uint8_t> inst_pred;
    std::vector<std::uint8_t> inst_true;
};

// Brute-force recomputation of one (stage, task) cell from raw records.
EvalOutcome recompute_outcome(const std::vector<BagRecord>& records, int stage, int task);

// Recomputes every cell covered by the records plus the summary by the
// literal formulas and throws if anything deviates beyond 1e-12.
void verify_metrics(const std::vector<BagRecord>& records, const MetricsMatrix& matrix,
                    const Summary& summary);

}  // namespace comel
