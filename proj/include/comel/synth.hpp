#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "comel/matrix.hpp"
#include "comel/rng.hpp"

namespace comel {

// Detection: every task is binary tumor/normal over drifted features.
// Subtyping: each task introduces two new bag classes and every bag is
// positive.
enum class Regime { Detection, Subtyping };

struct SynthConfig {
    Regime regime = Regime::Detection;
    int feature_dim = 32;  // D
    int grid_side = 16;    // bag is grid_side x grid_side instances
    int blob_radius = 7;   // max positive blob radius, in cells
    double positive_scale = 3.0;
    double positive_std = 0.5;
    double negative_scale = 0.8;
    double negative_std = 0.5;
    double drift_distance = 2.0;  // required min separation between task means
    // Fraction of positive-mean energy on a direction shared by every
    // task; the rest is task-specific drift. Mirrors how tumor evidence
    // transfers across organs while each organ still looks different.
    double positive_shared_frac = 0.3;
};

struct GridPos {
    int row = 0;
    int col = 0;
};

struct NegativeComponent {
    Matrix mean;  // 1 x D
    double std = 1.0;
};

struct TaskSpec {
    int task_index = 1;
    Regime regime = Regime::Detection;
    int feature_dim = 0;
    int grid_side = 0;
    int positive_blob_radius = 0;
    double positive_std = 1.0;
    std::vector<NegativeComponent> negative_mixture;
    std::vector<int> bag_label_space;    // classes this task's bags can carry
    std::vector<int> positive_classes;   // subset of the label space
    std::vector<Matrix> positive_means;  // parallel to positive_classes, 1 x D
    std::uint64_t seed = 0;

    int num_instances() const { return grid_side * grid_side; }
    const Matrix& mean_for_class(int label) const;
};

struct Bag {
    Matrix instances;  // M x D
    std::vector<GridPos> positions;
    int bag_label = 0;
    // Ground truth for evaluation only; never visible to training losses.
    std::vector<int> instance_labels;
};

struct TaskData {
    TaskSpec spec;
    std::vector<Bag> train;
    std::vector<Bag> test;
};

struct Sequence {
    SynthConfig config;
    std::uint64_t base_seed = 0;
    int bags_per_task = 0;
    std::vector<TaskData> tasks;
    int num_classes = 0;
    std::vector<std::vector<int>> task_classes;  // classes owned per task
    std::vector<int> positive_classes;           // union over tasks
};

// Deterministic for fixed (task_index, base_seed, config). Class mean
// directions across all tasks are built from one seeded orthonormal
// frame, so distinct tasks are separated by at least
// config.drift_distance and positives stay separable from the negative
// mixture. Rejects feature_dim < 4 and grid_side < 4.
TaskSpec make_task_spec(int task_index, std::uint64_t base_seed, const SynthConfig& config);

// Negative label: all instances from the negative mixture. Positive
// label: a contiguous blob (random center, radius <= blob_radius, size
// capped at M/2) of positive-class instances, the rest negative.
Bag sample_bag(const TaskSpec& spec, int label, Rng& rng);

// Full task stream with 80/20 train/test splits, balanced within one
// bag per label. Rejects bags_per_task < 10.
Sequence build_sequence(int num_tasks, int bags_per_task, std::uint64_t base_seed,
                        const SynthConfig& config);

// All bags of all tasks as one dataset (the joint-training upper bound).
Sequence merge_as_single_task(const Sequence& seq);

// Dataset directory: JSON manifest plus per-bag CMLM matrices.
void save_sequence(const Sequence& seq, const std::string& dir);
Sequence load_sequence(const std::string& dir);

}  // namespace comel
