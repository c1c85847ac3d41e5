#include "comel/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace comel {

namespace {

json outcome_to_json(const EvalOutcome& e) {
    return {{"bag_acc", e.bag_acc},         {"inst_acc", e.inst_acc}, {"inst_acc_pos", e.inst_acc_pos},
            {"iou", e.iou},                 {"dice", e.dice},         {"masked_bag_acc", e.masked_bag_acc}};
}

EvalOutcome outcome_from_json(const json& j) {
    EvalOutcome e;
    e.bag_acc = j.at("bag_acc").get<double>();
    e.inst_acc = j.at("inst_acc").get<double>();
    e.inst_acc_pos = j.at("inst_acc_pos").get<double>();
    e.iou = j.at("iou").get<double>();
    e.dice = j.at("dice").get<double>();
    e.masked_bag_acc = j.at("masked_bag_acc").get<double>();
    return e;
}

std::string factor_stem(const std::string& layer, int task) {
    return layer + "@t" + std::to_string(task);
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    fs::create_directories(fs::path(dir) / "tensors");
    json manifest;
    manifest["version"] = 1;
    manifest["task_index"] = ckpt.task_index;
    manifest["config_digest"] = ckpt.config_digest;
    manifest["owlora_active"] = ckpt.model.owlora_active;
    manifest["trained_tasks"] = ckpt.model.trained_tasks;

    const MilConfig& mc = ckpt.model.config;
    manifest["mil"] = {{"feature_dim", mc.feature_dim},       {"num_classes", mc.num_classes},
                       {"model_dim", mc.gdat.model_dim},      {"blocks", mc.gdat.num_blocks},
                       {"grouping_factor", mc.gdat.grouping_factor}, {"eta", mc.gdat.eta},
                       {"scale_dim", mc.gdat.scale_dim}};

    json tensors = json::array();
    for (const auto& [name, tensor] : ckpt.model.params) {
        tensors.push_back(name);
        write_cmlm(dir + "/tensors/" + name + ".cmlm", tensor);
    }
    manifest["tensors"] = tensors;

    json stacks = json::array();
    for (const auto& [layer, stack] : ckpt.model.stacks) {
        if (stack.has_active)
            throw std::logic_error("save_checkpoint: stacks must be frozen at task boundaries");
        json js;
        js["layer"] = layer;
        js["d_in"] = stack.d_in;
        js["d_out"] = stack.d_out;
        js["dtilde"] = stack.dtilde;
        json tasks = json::array();
        for (const TaskFactors& f : stack.frozen) {
            tasks.push_back(f.task_index);
            const std::string stem = dir + "/tensors/" + factor_stem(layer, f.task_index);
            write_cmlm(stem + ".u.cmlm", f.u);
            write_cmlm(stem + ".s.cmlm", f.s);
            write_cmlm(stem + ".v.cmlm", f.v);
        }
        js["tasks"] = tasks;
        stacks.push_back(js);
    }
    manifest["stacks"] = stacks;

    json matrix = json::array();
    for (const auto& row : ckpt.matrix.rows) {
        json jr = json::array();
        for (const EvalOutcome& e : row) jr.push_back(outcome_to_json(e));
        matrix.push_back(jr);
    }
    manifest["matrix"] = matrix;

    json log = json::array();
    for (const EpochLog& e : ckpt.training_log)
        log.push_back({{"task", e.task},
                       {"epoch", e.epoch},
                       {"mean_bag_loss", e.mean_bag_loss},
                       {"pl_precision", e.pl_precision},
                       {"pl_recall", e.pl_recall},
                       {"gated", e.gated_instances}});
    manifest["training_log"] = log;

    std::ofstream out(dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
    json manifest = json::parse(in);

    Checkpoint ckpt;
    ckpt.task_index = manifest.at("task_index").get<int>();
    ckpt.config_digest = manifest.at("config_digest").get<std::string>();
    ckpt.model.owlora_active = manifest.at("owlora_active").get<bool>();
    ckpt.model.trained_tasks = manifest.at("trained_tasks").get<int>();

    const json& mil = manifest.at("mil");
    ckpt.model.config.feature_dim = mil.at("feature_dim").get<int>();
    ckpt.model.config.num_classes = mil.at("num_classes").get<int>();
    ckpt.model.config.gdat.model_dim = mil.at("model_dim").get<int>();
    ckpt.model.config.gdat.num_blocks = mil.at("blocks").get<int>();
    ckpt.model.config.gdat.grouping_factor = mil.at("grouping_factor").get<int>();
    ckpt.model.config.gdat.eta = mil.at("eta").get<double>();
    ckpt.model.config.gdat.scale_dim = mil.at("scale_dim").get<int>();

    for (const json& name : manifest.at("tensors"))
        ckpt.model.params[name.get<std::string>()] =
            read_cmlm(dir + "/tensors/" + name.get<std::string>() + ".cmlm");

    for (const json& js : manifest.at("stacks")) {
        AdapterStack stack;
        stack.layer = js.at("layer").get<std::string>();
        stack.d_in = js.at("d_in").get<int>();
        stack.d_out = js.at("d_out").get<int>();
        stack.dtilde = js.at("dtilde").get<int>();
        for (const json& jt : js.at("tasks")) {
            TaskFactors f;
            f.task_index = jt.get<int>();
            const std::string stem = dir + "/tensors/" + factor_stem(stack.layer, f.task_index);
            f.u = read_cmlm(stem + ".u.cmlm");
            f.s = read_cmlm(stem + ".s.cmlm");
            f.v = read_cmlm(stem + ".v.cmlm");
            stack.frozen.push_back(std::move(f));
        }
        stack.rebuild_cache();
        ckpt.model.stacks[stack.layer] = std::move(stack);
    }

    for (const json& jr : manifest.at("matrix")) {
        ckpt.matrix.start_stage();
        for (const json& je : jr) ckpt.matrix.push_entry(outcome_from_json(je));
    }

    for (const json& je : manifest.at("training_log")) {
        EpochLog e;
        e.task = je.at("task").get<int>();
        e.epoch = je.at("epoch").get<int>();
        e.mean_bag_loss = je.at("mean_bag_loss").get<double>();
        e.pl_precision = je.at("pl_precision").get<double>();
        e.pl_recall = je.at("pl_recall").get<double>();
        e.gated_instances = je.at("gated").get<long>();
        ckpt.training_log.push_back(e);
    }
    return ckpt;
}

}  // namespace comel
