#pragma once

#include <functional>
#include <optional>

#include "comel/config.hpp"
#include "comel/metrics.hpp"
#include "comel/trainer.hpp"

namespace comel {

struct RunResult {
    MetricsMatrix matrix;
    Summary summary;
    std::vector<BagRecord> records;
    std::vector<EpochLog> training_log;
};

// Resume/checkpoint hooks for the task loop. after_task fires once per
// trained task with the model state and everything accumulated so far.
struct RunHooks {
    std::function<void(const MilModel&, const MetricsMatrix&, const std::vector<EpochLog>&)> after_task;
    int start_task = 1;  // first task to train (resume support)
    std::optional<MilModel> resume_model;
    MetricsMatrix resume_matrix;
    std::vector<EpochLog> resume_log;
};

// Evaluation of one task's test split under a frozen snapshot. Bag
// predictions argmax over the classes seen so far; the masked
// prediction is restricted to the task's own classes; instance
// predictions threshold normalized attention at 0.5.
std::pair<EvalOutcome, std::vector<BagRecord>> evaluate_task(
    const ModelParams& snapshot, const MilConfig& config, const std::vector<Bag>& test,
    const std::vector<int>& classes_seen, const std::vector<int>& task_classes,
    const std::vector<int>& positive_classes, int stage, int task);

// The full task-sequential loop: train task n, evaluate every l <= n,
// finalize S1-S6 and cross-check each cell against the brute-force
// recomputation. Deterministic per (config, seed).
RunResult run_sequence(const RunConfig& config, std::uint64_t seed, const RunHooks* hooks = nullptr);
RunResult run_sequence_on(const Sequence& data, const RunConfig& config, std::uint64_t seed,
                          const RunHooks* hooks = nullptr);

// The dataset a run with this (config, seed) trains on.
Sequence build_run_data(const RunConfig& config, std::uint64_t seed);

}  // namespace comel
