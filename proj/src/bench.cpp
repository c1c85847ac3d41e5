#include "comel/bench.hpp"

#include <algorithm>

#include "comel/bppl.hpp"

namespace comel {

std::pair<EvalOutcome, std::vector<BagRecord>> evaluate_task(
    const ModelParams& snapshot, const MilConfig& config, const std::vector<Bag>& test,
    const std::vector<int>& classes_seen, const std::vector<int>& task_classes,
    const std::vector<int>& positive_classes, int stage, int task) {
    if (test.empty()) throw std::invalid_argument("evaluate_task: empty dataset");

    std::vector<BagRecord> records;
    long bag_ok = 0, masked_ok = 0, inst_ok = 0, inst_n = 0, pos_ok = 0, pos_n = 0;
    double iou_sum = 0.0, dice_sum = 0.0;
    long pos_bags = 0;

    for (const Bag& bag : test) {
        BagOutput out = forward(bag, config, snapshot);
        BagRecord rec;
        rec.stage = stage;
        rec.task = task;
        rec.label = bag.bag_label;
        rec.predicted = argmax_class_masked(out.bag_logits, classes_seen);
        rec.predicted_masked = argmax_class_masked(out.bag_logits, task_classes);
        rec.positive_bag = std::find(positive_classes.begin(), positive_classes.end(), bag.bag_label) !=
                           positive_classes.end();

        Matrix alpha = normalize_attention(out.attention);
        const int M = bag.instances.rows;
        rec.inst_pred.resize(M);
        rec.inst_true.resize(M);
        long inter = 0, pred_sz = 0, true_sz = 0;
        for (int m = 0; m < M; ++m) {
            const bool pred = alpha.data[m] >= 0.5;
            const bool truth = bag.instance_labels[m] == 1;
            rec.inst_pred[m] = pred ? 1 : 0;
            rec.inst_true[m] = truth ? 1 : 0;
            inst_ok += pred == truth ? 1 : 0;
            ++inst_n;
            if (rec.positive_bag) {
                pos_ok += pred == truth ? 1 : 0;
                ++pos_n;
            }
            inter += (pred && truth) ? 1 : 0;
            pred_sz += pred ? 1 : 0;
            true_sz += truth ? 1 : 0;
        }
        bag_ok += rec.predicted == rec.label ? 1 : 0;
        masked_ok += rec.predicted_masked == rec.label ? 1 : 0;
        if (rec.positive_bag) {
            ++pos_bags;
            const long uni = pred_sz + true_sz - inter;
            iou_sum += uni > 0 ? static_cast<double>(inter) / uni : 1.0;
            dice_sum += (pred_sz + true_sz) > 0 ? 2.0 * inter / (pred_sz + true_sz) : 1.0;
        }
        records.push_back(std::move(rec));
    }

    EvalOutcome e;
    const double nb = static_cast<double>(test.size());
    e.bag_acc = bag_ok / nb;
    e.masked_bag_acc = masked_ok / nb;
    e.inst_acc = inst_n ? static_cast<double>(inst_ok) / inst_n : 0.0;
    e.inst_acc_pos = pos_n ? static_cast<double>(pos_ok) / pos_n : 0.0;
    e.iou = pos_bags ? iou_sum / pos_bags : 0.0;
    e.dice = pos_bags ? dice_sum / pos_bags : 0.0;
    return {e, std::move(records)};
}

Sequence build_run_data(const RunConfig& config, std::uint64_t seed) {
    Sequence data = build_sequence(config.num_tasks, config.bags_per_task,
                                   derive_seed(seed, "data"), config.synth);
    if (config.joint) data = merge_as_single_task(data);
    return data;
}

RunResult run_sequence(const RunConfig& config, std::uint64_t seed, const RunHooks* hooks) {
    return run_sequence_on(build_run_data(config, seed), config, seed, hooks);
}

RunResult run_sequence_on(const Sequence& data, const RunConfig& config, std::uint64_t seed,
                          const RunHooks* hooks) {
    config.validate();
    const MilConfig mil = config.mil_config(data);
    BpplConfig bppl = config.bppl;
    bppl.positive_classes = data.positive_classes;

    MilModel model;
    RunResult result;
    int start_task = 1;
    if (hooks && hooks->resume_model) {
        model = *hooks->resume_model;
        start_task = hooks->start_task;
        result.matrix = hooks->resume_matrix;
        result.training_log = hooks->resume_log;
        if (result.matrix.num_tasks != start_task - 1)
            throw std::invalid_argument("run_sequence: resume matrix does not match the start task");
    } else {
        model = init_model(mil, derive_seed(seed, "model"), config.train.init_scale);
    }

    std::vector<int> classes_seen;
    auto add_classes = [&](const std::vector<int>& classes) {
        for (int c : classes)
            if (std::find(classes_seen.begin(), classes_seen.end(), c) == classes_seen.end())
                classes_seen.push_back(c);
        std::sort(classes_seen.begin(), classes_seen.end());
    };

    const int N = static_cast<int>(data.tasks.size());
    for (int n = 1; n <= N; ++n) {
        add_classes(data.task_classes[n - 1]);
        if (n < start_task) continue;

        TaskContext ctx;
        ctx.task_number = n;
        ctx.classes_seen = classes_seen;
        ctx.trainable_classes =
            data.config.regime == Regime::Subtyping ? data.task_classes[n - 1] : classes_seen;
        ctx.seed = derive_seed(seed, "train", static_cast<std::uint64_t>(n));

        std::vector<EpochLog> logs =
            train_task(model, data.tasks[n - 1], ctx, config.train, bppl, config.owlora);
        result.training_log.insert(result.training_log.end(), logs.begin(), logs.end());

        const ModelParams snapshot = model.snapshot();
        result.matrix.start_stage();
        for (int l = 1; l <= n; ++l) {
            auto [outcome, records] =
                evaluate_task(snapshot, mil, data.tasks[l - 1].test, classes_seen,
                              data.task_classes[l - 1], data.positive_classes, n, l);
            result.matrix.push_entry(outcome);
            result.records.insert(result.records.end(), records.begin(), records.end());
        }
        if (hooks && hooks->after_task) hooks->after_task(model, result.matrix, result.training_log);
    }

    result.summary = finalize_metrics(result.matrix);
    verify_metrics(result.records, result.matrix, result.summary);
    return result;
}

}  // namespace comel
