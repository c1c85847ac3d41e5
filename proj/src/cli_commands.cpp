#include "comel/cli_commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "comel/checkpoint.hpp"
#include "comel/sha1.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace comel {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

RunConfig load_config(const std::string& path) {
    if (path.empty()) return default_config();
    return parse_config_file(path);
}

}  // namespace

void cmd_generate(const GenerateOptions& opt) {
    if (opt.out_dir.empty()) throw std::invalid_argument("generate: --out is required");
    RunConfig config = load_config(opt.config_path);
    std::uint64_t seed = opt.seed;
    if (opt.regen) {
        std::ifstream in(opt.out_dir + "/manifest.json");
        if (!in) throw std::invalid_argument("generate --regen: no manifest in " + opt.out_dir);
        json manifest = json::parse(in);
        seed = manifest.at("base_seed").get<std::uint64_t>();
    } else if (fs::exists(opt.out_dir) && !fs::is_empty(opt.out_dir) && !opt.force) {
        throw std::invalid_argument("generate: " + opt.out_dir + " is not empty (use --force)");
    }
    fs::remove_all(opt.out_dir);
    Sequence data = build_sequence(config.num_tasks, config.bags_per_task,
                                   derive_seed(seed, "data"), config.synth);
    if (config.joint) data = merge_as_single_task(data);
    save_sequence(data, opt.out_dir);
}

std::string metrics_csv_string(const RunResult& result) {
    std::ostringstream csv;
    csv << "stage,task,metric,value\n";
    for (int n = 1; n <= result.matrix.num_tasks; ++n)
        for (int l = 1; l <= n; ++l) {
            const EvalOutcome& e = result.matrix.at(n, l);
            csv << n << "," << l << ",bag_acc," << fmt(e.bag_acc) << "\n";
            csv << n << "," << l << ",inst_acc," << fmt(e.inst_acc) << "\n";
            csv << n << "," << l << ",inst_acc_pos," << fmt(e.inst_acc_pos) << "\n";
            csv << n << "," << l << ",iou," << fmt(e.iou) << "\n";
            csv << n << "," << l << ",dice," << fmt(e.dice) << "\n";
            csv << n << "," << l << ",masked_bag_acc," << fmt(e.masked_bag_acc) << "\n";
        }
    // per-epoch pseudo-label quality; the task column carries the epoch
    for (const EpochLog& e : result.training_log) {
        csv << e.task << "," << e.epoch << ",pl_precision," << fmt(e.pl_precision) << "\n";
        csv << e.task << "," << e.epoch << ",pl_recall," << fmt(e.pl_recall) << "\n";
        csv << e.task << "," << e.epoch << ",mean_bag_loss," << fmt(e.mean_bag_loss) << "\n";
    }
    return csv.str();
}

namespace {

json summary_to_json(const Summary& s) {
    json j = {{"acc_bag", s.acc_bag}, {"acc_inst", s.acc_inst}, {"acc_inst_pos", s.acc_inst_pos},
              {"iou", s.iou},         {"dice", s.dice},         {"macc_bag", s.macc_bag}};
    if (s.forget_bag) j["forget_bag"] = *s.forget_bag;
    if (s.forget_inst) j["forget_inst"] = *s.forget_inst;
    return j;
}

}  // namespace

void write_run_outputs(const std::string& out_dir, const RunConfig& config, std::uint64_t seed,
                       const RunResult& result) {
    fs::create_directories(out_dir);
    const std::string canonical = canonical_config_string(config);

    std::ofstream csv(out_dir + "/metrics.csv");
    csv << metrics_csv_string(result);
    if (!csv) throw std::runtime_error("write_run_outputs: cannot write metrics.csv");
    csv.close();

    json manifest;
    manifest["label"] = config.label;
    manifest["seed"] = seed;
    manifest["config"] = canonical;
    manifest["content_hash"] = sha1_hex(canonical + "\nseed=" + std::to_string(seed));
    std::ofstream mf(out_dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";

    std::ofstream sf(out_dir + "/summary.json");
    sf << summary_to_json(result.summary).dump(2) << "\n";
}

RunResult cmd_train(const TrainOptions& opt) {
    if (opt.out_dir.empty()) throw std::invalid_argument("train: --out is required");
    RunConfig config = load_config(opt.config_path);
    for (const std::string& which : opt.ablate) apply_ablation(config, which);
    config.validate();
    const std::string digest = sha1_hex(canonical_config_string(config));

    Sequence data;
    if (!opt.dataset_dir.empty()) {
        if (!fs::exists(opt.dataset_dir + "/manifest.json"))
            throw std::invalid_argument("train: missing dataset dir " + opt.dataset_dir);
        data = load_sequence(opt.dataset_dir);
    } else {
        data = build_run_data(config, opt.seed);
    }

    RunHooks hooks;
    const std::string ckpt_root = opt.out_dir + "/checkpoints";
    if (opt.resume) {
        int best = 0;
        if (fs::exists(ckpt_root))
            for (const auto& entry : fs::directory_iterator(ckpt_root)) {
                const std::string name = entry.path().filename().string();
                if (name.rfind("task_", 0) == 0) best = std::max(best, std::stoi(name.substr(5)));
            }
        if (best > 0) {
            Checkpoint ckpt = load_checkpoint(ckpt_root + "/task_" + std::to_string(best));
            if (ckpt.config_digest != digest)
                throw std::invalid_argument("train --resume: checkpoint was written by a different config");
            hooks.resume_model = std::move(ckpt.model);
            hooks.start_task = ckpt.task_index + 1;
            hooks.resume_matrix = std::move(ckpt.matrix);
            hooks.resume_log = std::move(ckpt.training_log);
        }
    }
    hooks.after_task = [&](const MilModel& model, const MetricsMatrix& matrix,
                           const std::vector<EpochLog>& log) {
        Checkpoint ckpt;
        ckpt.task_index = model.trained_tasks;
        ckpt.config_digest = digest;
        ckpt.model = model;
        ckpt.matrix = matrix;
        ckpt.training_log = log;
        save_checkpoint(ckpt_root + "/task_" + std::to_string(model.trained_tasks), ckpt);
    };

    RunResult result = run_sequence_on(data, config, opt.seed, &hooks);
    write_run_outputs(opt.out_dir, config, opt.seed, result);
    return result;
}

namespace {

struct Aggregate {
    std::vector<double> values;
    double mean() const {
        double s = 0.0;
        for (double v : values) s += v;
        return values.empty() ? 0.0 : s / values.size();
    }
    double stddev() const {
        if (values.size() < 2) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (double v : values) s += (v - m) * (v - m);
        return std::sqrt(s / (values.size() - 1));
    }
};

}  // namespace

std::string cmd_report(const ReportOptions& opt) {
    if (opt.run_dirs.empty()) throw std::invalid_argument("report: at least one run directory required");

    static const std::vector<std::string> metrics = {"acc_inst", "forget_inst", "iou",
                                                     "dice",     "acc_bag",     "forget_bag",
                                                     "macc_bag"};
    std::vector<std::string> labels;  // insertion order
    std::map<std::string, std::map<std::string, Aggregate>> table;
    for (const std::string& dir : opt.run_dirs) {
        std::ifstream mf(dir + "/manifest.json");
        std::ifstream sf(dir + "/summary.json");
        if (!mf || !sf) throw std::invalid_argument("report: " + dir + " is not a run directory");
        json manifest = json::parse(mf);
        json summary = json::parse(sf);
        const std::string label = manifest.at("label").get<std::string>();
        if (table.find(label) == table.end()) labels.push_back(label);
        for (const std::string& m : metrics)
            if (summary.contains(m)) table[label][m].values.push_back(summary.at(m).get<double>());
    }

    std::ostringstream text, csv;
    csv << "method";
    for (const std::string& m : metrics) csv << "," << m << "_mean," << m << "_std";
    csv << "\n";
    text << "method";
    for (const std::string& m : metrics) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %17s", m.c_str());
        text << buf;
    }
    text << "\n";
    size_t expected = 0;
    for (const std::string& label : labels) {
        csv << label;
        text << label;
        if (expected == 0) expected = table[label].size();
        if (table[label].size() != expected)
            throw std::invalid_argument("report: mismatched metric schemas across runs");
        for (const std::string& m : metrics) {
            const Aggregate& agg = table[label][m];
            csv << "," << fmt(agg.mean()) << "," << fmt(agg.stddev());
            char buf[40];
            if (agg.values.empty())
                std::snprintf(buf, sizeof(buf), " %17s", "-");
            else
                std::snprintf(buf, sizeof(buf), "   %7.2f ± %5.2f", 100.0 * agg.mean(),
                              100.0 * agg.stddev());
            text << buf;
        }
        csv << "\n";
        text << "\n";
    }
    if (!opt.out_csv.empty()) {
        std::ofstream out(opt.out_csv);
        out << csv.str();
        if (!out) throw std::runtime_error("report: cannot write " + opt.out_csv);
    }
    return text.str();
}

std::string file_sha1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("file_sha1: cannot open " + path);
    Sha1 hash;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) hash.update(buf, static_cast<size_t>(in.gcount()));
    return hash.hex_digest();
}

}  // namespace comel
