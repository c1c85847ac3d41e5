#include "comel/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "comel/numeric.hpp"

namespace comel {

void TrainConfig::validate() const {
    if (epochs_per_task < 1) throw std::invalid_argument("TrainConfig: epochs_per_task must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (optimizer != "adam" && optimizer != "sgd")
        throw std::invalid_argument("TrainConfig: optimizer must be adam or sgd");
    if (init_scale <= 0.0) throw std::invalid_argument("TrainConfig: init_scale must be > 0");
}

void Optimizer::step(const std::string& key, Matrix& theta, const Matrix& grad, double lr,
                     double weight_decay) {
    if (!theta.same_shape(grad)) throw std::invalid_argument("Optimizer: gradient shape mismatch");
    if (kind_ == "sgd") {
        for (size_t i = 0; i < theta.size(); ++i)
            theta.data[i] -= lr * (grad.data[i] + weight_decay * theta.data[i]);
        return;
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    AdamState& st = adam_[key];
    if (st.t == 0) {
        st.m = Matrix(theta.rows, theta.cols);
        st.v = Matrix(theta.rows, theta.cols);
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, st.t);
    const double bc2 = 1.0 - std::pow(beta2, st.t);
    for (size_t i = 0; i < theta.size(); ++i) {
        const double g = grad.data[i] + weight_decay * theta.data[i];
        st.m.data[i] = beta1 * st.m.data[i] + (1.0 - beta1) * g;
        st.v.data[i] = beta2 * st.v.data[i] + (1.0 - beta2) * g * g;
        theta.data[i] -= lr * (st.m.data[i] / bc1) / (std::sqrt(st.v.data[i] / bc2) + eps);
    }
}

ModelParams MilModel::snapshot() const {
    ModelParams out = params;
    for (const auto& [name, stack] : stacks) out[name] = effective_weight(stack);
    return out;
}

MilModel init_model(const MilConfig& config, std::uint64_t seed, double init_scale) {
    MilModel model;
    model.config = config;
    model.params = init_model_params(config, seed, init_scale);
    return model;
}

namespace {

// Column selector onto the seen classes; CE then runs over exactly the
// classes that exist so far, and unseen classifier rows get no pull.
Matrix class_selector(int num_classes, const std::vector<int>& seen) {
    Matrix sel(num_classes, static_cast<int>(seen.size()));
    for (size_t j = 0; j < seen.size(); ++j) sel.at(seen[j], static_cast<int>(j)) = 1.0;
    return sel;
}

int index_in(const std::vector<int>& classes, int label) {
    for (size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == label) return static_cast<int>(i);
    throw std::invalid_argument("train_task: bag label " + std::to_string(label) + " outside seen classes");
}

void zero_frozen_class_rows(Matrix& grad, const std::vector<int>& trainable_classes, bool is_bias) {
    std::vector<char> keep(is_bias ? grad.cols : grad.rows, 0);
    for (int c : trainable_classes)
        if (c >= 0 && c < static_cast<int>(keep.size())) keep[c] = 1;
    if (is_bias) {
        for (int j = 0; j < grad.cols; ++j)
            if (!keep[j]) grad.at(0, j) = 0.0;
    } else {
        for (int i = 0; i < grad.rows; ++i)
            if (!keep[i])
                for (int j = 0; j < grad.cols; ++j) grad.at(i, j) = 0.0;
    }
}

struct StackNodes {
    int u = -1, s = -1, v = -1;
};

}  // namespace

std::vector<EpochLog> train_task(MilModel& model, const TaskData& task, const TaskContext& ctx,
                                 const TrainConfig& tcfg, const BpplConfig& bppl,
                                 const OwloraConfig& owlora) {
    tcfg.validate();
    if (tcfg.use_bppl) bppl.validate();
    if (task.train.empty()) throw std::invalid_argument("train_task: empty training set");

    const int n = ctx.task_number;
    const bool adapters_now = tcfg.use_owlora && n >= 2;
    const std::vector<std::string> adapted = adapted_layer_names(model.config);

    if (adapters_now) {
        if (!model.owlora_active)
            throw std::logic_error("train_task: task-1 truncation has not happened yet");
        owlora.validate();
        for (const std::string& layer : adapted) {
            AdapterStack& stack = model.stacks.at(layer);
            Rng rng(derive_seed(ctx.seed, "adapter." + layer, static_cast<std::uint64_t>(n)));
            init_adapter(stack, n, owlora.rank, rng);
        }
    }

    // Plain tensors that move this task. Dense phase: everything.
    // Adapter phase: only the classifier head keeps training.
    std::vector<std::string> plain_trainables;
    for (const std::string& name : all_param_names(model.config)) {
        if (model.owlora_active && model.stacks.count(name)) continue;
        if (adapters_now && name != "cls.w" && name != "cls.b") continue;
        plain_trainables.push_back(name);
    }

    const bool subtyping_rows = ctx.trainable_classes.size() <
                                static_cast<size_t>(model.config.num_classes);
    const Matrix selector = class_selector(model.config.num_classes, ctx.classes_seen);
    const bool need_selector = static_cast<int>(ctx.classes_seen.size()) < model.config.num_classes;

    Optimizer opt(tcfg.optimizer);
    AccEstimator acc;
    std::vector<EpochLog> logs;

    std::vector<int> order(task.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < tcfg.epochs_per_task; ++epoch) {
        const double lr = tcfg.cosine_schedule
                              ? 0.5 * tcfg.learning_rate *
                                    (1.0 + std::cos(M_PI * epoch / static_cast<double>(tcfg.epochs_per_task)))
                              : tcfg.learning_rate;
        Rng shuffle_rng(derive_seed(ctx.seed, "shuffle", static_cast<std::uint64_t>(n),
                                    static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        // last-good state in case the loss goes non-finite mid-epoch
        const ModelParams params_backup = model.params;
        const std::map<std::string, AdapterStack> stacks_backup = model.stacks;

        EpochLog log;
        log.task = n;
        log.epoch = epoch;
        long tp = 0, fp = 0, truth_pos = 0;

        for (int bag_index : order) {
            const Bag& bag = task.train[static_cast<size_t>(bag_index)];

            ad::Tape tape;
            std::map<std::string, int> nodes;
            std::map<std::string, int> plain_nodes;
            std::map<std::string, StackNodes> stack_nodes;
            for (const std::string& name : all_param_names(model.config)) {
                if (model.owlora_active && model.stacks.count(name)) {
                    AdapterStack& stack = model.stacks.at(name);
                    if (adapters_now) {
                        StackNodes sn{tape.param(stack.active.u), tape.param(stack.active.s),
                                      tape.param(stack.active.v)};
                        stack_nodes[name] = sn;
                        nodes[name] = effective_weight_node(tape, stack, sn.u, sn.s, sn.v);
                    } else {
                        nodes[name] = tape.constant(effective_weight(stack));
                    }
                    continue;
                }
                const bool trainable = std::find(plain_trainables.begin(), plain_trainables.end(), name) !=
                                       plain_trainables.end();
                const Matrix& tensor = model.params.at(name);
                int id = trainable ? tape.param(tensor) : tape.constant(tensor);
                nodes[name] = id;
                if (trainable) plain_nodes[name] = id;
            }

            BagGraph g = build_forward(tape, bag, model.config, nodes);
            int logits_seen = need_selector ? tape.matmul(g.logits, tape.constant(selector)) : g.logits;
            int loss = bag_loss_node(tape, logits_seen, need_selector ? index_in(ctx.classes_seen, bag.bag_label)
                                                                      : bag.bag_label);
            const double bag_loss_value = tape.value(loss).data[0];

            const int predicted =
                ctx.classes_seen[static_cast<size_t>(argmax_class(tape.value(logits_seen)))];

            InstanceLossGraph inst;
            if (tcfg.use_bppl) {
                inst = instance_loss_node(tape, g, bag.bag_label, predicted, bppl,
                                          adaptive_threshold(acc, bppl.tau));
                loss = tape.add(loss, inst.l_inst);
            }
            if (adapters_now && owlora.lambda3 != 0.0) {
                for (const auto& [name, sn] : stack_nodes) {
                    int lin = intra_ortho_loss_node(tape, sn.u, sn.v);
                    loss = tape.add(loss, tape.affine(lin, owlora.lambda3, 0.0));
                }
            }

            const double loss_value = tape.value(loss).data[0];
            if (!std::isfinite(loss_value)) {
                model.params = params_backup;
                model.stacks = stacks_backup;
                throw std::runtime_error("train_task: non-finite loss at task " + std::to_string(n) +
                                         " epoch " + std::to_string(epoch) +
                                         "; restored the last epoch-start state");
            }

            tape.backward(loss);

            for (const auto& [name, node] : plain_nodes) {
                Matrix grad = tape.grad(node);
                if (subtyping_rows && (name == "cls.w" || name == "cls.b"))
                    zero_frozen_class_rows(grad, ctx.trainable_classes, name == "cls.b");
                opt.step(name, model.params.at(name), grad, lr, tcfg.weight_decay);
            }
            for (const auto& [name, sn] : stack_nodes) {
                AdapterStack& stack = model.stacks.at(name);
                Matrix gu = tape.grad(sn.u);
                Matrix gv = tape.grad(sn.v);
                if (tcfg.projection_on) {
                    gu = project_gradient(gu, stack.basis_u);
                    gv = project_gradient(gv, stack.basis_v);
                }
                opt.step(name + "#u", stack.active.u, gu, lr, tcfg.weight_decay);
                opt.step(name + "#s", stack.active.s, tape.grad(sn.s), lr, tcfg.weight_decay);
                opt.step(name + "#v", stack.active.v, gv, lr, tcfg.weight_decay);
                if (tcfg.projection_on) reproject_params(stack);
            }

            acc.update(predicted == bag.bag_label);
            log.mean_bag_loss += bag_loss_value / static_cast<double>(task.train.size());

            if (tcfg.use_bppl && inst.bag_gate) {
                for (size_t m = 0; m < inst.instance_gates.size(); ++m) {
                    if (inst.instance_gates[m] && inst.pseudo_labels[m] == 1)
                        (bag.instance_labels[m] == 1 ? tp : fp)++;
                }
                for (int y : bag.instance_labels) truth_pos += y;
            }
        }

        log.gated_instances = tp + fp;
        log.pl_precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        log.pl_recall = truth_pos > 0 ? static_cast<double>(tp) / truth_pos : 0.0;
        logs.push_back(log);
    }

    if (tcfg.use_owlora && n == 1) {
        for (const std::string& layer : adapted) {
            model.stacks[layer] = truncate_first_task(layer, model.params.at(layer), owlora.epsilon);
            model.params.erase(layer);
        }
        model.owlora_active = true;
    }
    if (adapters_now)
        for (const std::string& layer : adapted) freeze_active(model.stacks.at(layer));

    model.trained_tasks = n;
    return logs;
}

}  // namespace comel
