#pragma once

#include <map>
#include <string>
#include <vector>

#include "comel/bppl.hpp"
#include "comel/mil.hpp"
#include "comel/owlora.hpp"
#include "comel/synth.hpp"

namespace comel {

struct TrainConfig {
    int epochs_per_task = 100;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    bool cosine_schedule = true;  // cosine annealing, restarted per task
    std::string optimizer = "adam";  // "adam" or "sgd" (plain descent)
    bool use_gdat = true;
    bool use_bppl = true;
    bool use_owlora = true;
    bool projection_on = true;
    double init_scale = 1e-3;

    void validate() const;
};

// Adam (or plain SGD) with per-tensor state. Weight decay is added to
// the raw gradient before the update, matching the usual Adam+L2 setup.
class Optimizer {
  public:
    explicit Optimizer(std::string kind) : kind_(std::move(kind)) {}

    void step(const std::string& key, Matrix& theta, const Matrix& grad, double lr, double weight_decay);
    void reset() { adam_.clear(); }

  private:
    struct AdamState {
        Matrix m, v;
        int t = 0;
    };
    std::string kind_;
    std::map<std::string, AdamState> adam_;
};

// The pipeline's mutable training state: plain tensors plus, once
// OWLoRA takes over after task 1, one AdapterStack per adapted layer.
struct MilModel {
    MilConfig config;
    ModelParams params;
    std::map<std::string, AdapterStack> stacks;
    bool owlora_active = false;
    int trained_tasks = 0;

    // Composed effective weights for every named tensor; evaluation and
    // checkpointing work on this immutable view.
    ModelParams snapshot() const;
};

MilModel init_model(const MilConfig& config, std::uint64_t seed, double init_scale);

struct EpochLog {
    int task = 0;
    int epoch = 0;
    double mean_bag_loss = 0.0;
    double pl_precision = 0.0;  // gated positive pseudo-labels vs truth
    double pl_recall = 0.0;
    long gated_instances = 0;
};

struct TaskContext {
    int task_number = 1;                 // position in the sequence, 1-based
    std::vector<int> classes_seen;       // classes of tasks <= current
    std::vector<int> trainable_classes;  // classifier rows that may move
    std::uint64_t seed = 0;
};

// One task of the continual loop. Task 1 (or every task without
// OWLoRA) trains the dense tensors; the task-1 exit truncates every
// adapted layer into its stack. Later tasks train only the new
// low-rank factors and the classifier, with gradient projection and
// reprojection keeping the factors inside the frozen complement.
std::vector<EpochLog> train_task(MilModel& model, const TaskData& task, const TaskContext& ctx,
                                 const TrainConfig& tcfg, const BpplConfig& bppl,
                                 const OwloraConfig& owlora);

}  // namespace comel
