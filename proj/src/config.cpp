#include "comel/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace comel {

MilConfig RunConfig::mil_config(const Sequence& seq) const {
    MilConfig mil;
    mil.feature_dim = synth.feature_dim;
    mil.num_classes = std::max(2, seq.num_classes);
    mil.gdat = gdat;
    if (mil.gdat.model_dim <= 0) mil.gdat.model_dim = synth.feature_dim;
    if (!train.use_gdat) mil.gdat.num_blocks = 0;
    return mil;
}

void RunConfig::validate() const {
    if (num_tasks < 1) throw std::invalid_argument("config: data.num_tasks must be >= 1");
    if (bags_per_task < 10) throw std::invalid_argument("config: data.bags_per_task must be >= 10");
    train.validate();
    owlora.validate();
    BpplConfig probe = bppl;
    probe.positive_classes = {1};
    probe.validate();
    GdatConfig g = gdat;
    if (g.model_dim <= 0) g.model_dim = synth.feature_dim;
    g.validate();
}

RunConfig default_config() { return RunConfig{}; }

namespace {

struct KeyBinding {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("config: bad number '" + s + "'");
    return v;
}

int parse_int(const std::string& s) {
    size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("config: bad integer '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config: bad boolean '" + s + "'");
}

const std::vector<std::pair<std::string, KeyBinding>>& bindings() {
    auto dbl = [](auto getter, auto setter) {
        return KeyBinding{[getter](const RunConfig& c) { return fmt_double(getter(c)); },
                          [setter](RunConfig& c, const std::string& v) { setter(c, parse_double(v)); }};
    };
    auto num = [](auto getter, auto setter) {
        return KeyBinding{[getter](const RunConfig& c) { return std::to_string(getter(c)); },
                          [setter](RunConfig& c, const std::string& v) { setter(c, parse_int(v)); }};
    };
    auto flag = [](auto getter, auto setter) {
        return KeyBinding{[getter](const RunConfig& c) { return getter(c) ? std::string("true") : std::string("false"); },
                          [setter](RunConfig& c, const std::string& v) { setter(c, parse_bool(v)); }};
    };
    static const std::vector<std::pair<std::string, KeyBinding>> table = {
        {"run.label",
         {[](const RunConfig& c) { return c.label; },
          [](RunConfig& c, const std::string& v) { c.label = v; }}},
        {"data.regime",
         {[](const RunConfig& c) { return c.synth.regime == Regime::Detection ? "detection" : "subtyping"; },
          [](RunConfig& c, const std::string& v) {
              if (v == "detection")
                  c.synth.regime = Regime::Detection;
              else if (v == "subtyping")
                  c.synth.regime = Regime::Subtyping;
              else
                  throw std::invalid_argument("config: data.regime must be detection or subtyping");
          }}},
        {"data.num_tasks", num([](const RunConfig& c) { return c.num_tasks; },
                               [](RunConfig& c, int v) { c.num_tasks = v; })},
        {"data.bags_per_task", num([](const RunConfig& c) { return c.bags_per_task; },
                                   [](RunConfig& c, int v) { c.bags_per_task = v; })},
        {"data.joint", flag([](const RunConfig& c) { return c.joint; },
                            [](RunConfig& c, bool v) { c.joint = v; })},
        {"data.feature_dim", num([](const RunConfig& c) { return c.synth.feature_dim; },
                                 [](RunConfig& c, int v) { c.synth.feature_dim = v; })},
        {"data.grid_side", num([](const RunConfig& c) { return c.synth.grid_side; },
                               [](RunConfig& c, int v) { c.synth.grid_side = v; })},
        {"data.blob_radius", num([](const RunConfig& c) { return c.synth.blob_radius; },
                                 [](RunConfig& c, int v) { c.synth.blob_radius = v; })},
        {"data.positive_scale", dbl([](const RunConfig& c) { return c.synth.positive_scale; },
                                    [](RunConfig& c, double v) { c.synth.positive_scale = v; })},
        {"data.positive_std", dbl([](const RunConfig& c) { return c.synth.positive_std; },
                                  [](RunConfig& c, double v) { c.synth.positive_std = v; })},
        {"data.negative_scale", dbl([](const RunConfig& c) { return c.synth.negative_scale; },
                                    [](RunConfig& c, double v) { c.synth.negative_scale = v; })},
        {"data.negative_std", dbl([](const RunConfig& c) { return c.synth.negative_std; },
                                  [](RunConfig& c, double v) { c.synth.negative_std = v; })},
        {"data.drift_distance", dbl([](const RunConfig& c) { return c.synth.drift_distance; },
                                    [](RunConfig& c, double v) { c.synth.drift_distance = v; })},
        {"data.positive_shared_frac", dbl([](const RunConfig& c) { return c.synth.positive_shared_frac; },
                                          [](RunConfig& c, double v) { c.synth.positive_shared_frac = v; })},
        {"gdat.model_dim", num([](const RunConfig& c) { return c.gdat.model_dim; },
                               [](RunConfig& c, int v) { c.gdat.model_dim = v; })},
        {"gdat.blocks", num([](const RunConfig& c) { return c.gdat.num_blocks; },
                            [](RunConfig& c, int v) { c.gdat.num_blocks = v; })},
        {"gdat.grouping_factor", num([](const RunConfig& c) { return c.gdat.grouping_factor; },
                                     [](RunConfig& c, int v) { c.gdat.grouping_factor = v; })},
        {"gdat.eta", dbl([](const RunConfig& c) { return c.gdat.eta; },
                         [](RunConfig& c, double v) { c.gdat.eta = v; })},
        {"bppl.temperature", dbl([](const RunConfig& c) { return c.bppl.temperature; },
                                 [](RunConfig& c, double v) { c.bppl.temperature = v; })},
        {"bppl.tau", dbl([](const RunConfig& c) { return c.bppl.tau; },
                         [](RunConfig& c, double v) { c.bppl.tau = v; })},
        {"bppl.lambda1", dbl([](const RunConfig& c) { return c.bppl.lambda1; },
                             [](RunConfig& c, double v) { c.bppl.lambda1 = v; })},
        {"bppl.lambda2", dbl([](const RunConfig& c) { return c.bppl.lambda2; },
                             [](RunConfig& c, double v) { c.bppl.lambda2 = v; })},
        {"bppl.clamp_delta", dbl([](const RunConfig& c) { return c.bppl.clamp_delta; },
                                 [](RunConfig& c, double v) { c.bppl.clamp_delta = v; })},
        {"owlora.epsilon", dbl([](const RunConfig& c) { return c.owlora.epsilon; },
                               [](RunConfig& c, double v) { c.owlora.epsilon = v; })},
        {"owlora.rank", num([](const RunConfig& c) { return c.owlora.rank; },
                            [](RunConfig& c, int v) { c.owlora.rank = v; })},
        {"owlora.lambda3", dbl([](const RunConfig& c) { return c.owlora.lambda3; },
                               [](RunConfig& c, double v) { c.owlora.lambda3 = v; })},
        {"train.epochs", num([](const RunConfig& c) { return c.train.epochs_per_task; },
                             [](RunConfig& c, int v) { c.train.epochs_per_task = v; })},
        {"train.learning_rate", dbl([](const RunConfig& c) { return c.train.learning_rate; },
                                    [](RunConfig& c, double v) { c.train.learning_rate = v; })},
        {"train.weight_decay", dbl([](const RunConfig& c) { return c.train.weight_decay; },
                                   [](RunConfig& c, double v) { c.train.weight_decay = v; })},
        {"train.cosine_schedule", flag([](const RunConfig& c) { return c.train.cosine_schedule; },
                                       [](RunConfig& c, bool v) { c.train.cosine_schedule = v; })},
        {"train.optimizer",
         {[](const RunConfig& c) { return c.train.optimizer; },
          [](RunConfig& c, const std::string& v) { c.train.optimizer = v; }}},
        {"train.use_gdat", flag([](const RunConfig& c) { return c.train.use_gdat; },
                                [](RunConfig& c, bool v) { c.train.use_gdat = v; })},
        {"train.use_bppl", flag([](const RunConfig& c) { return c.train.use_bppl; },
                                [](RunConfig& c, bool v) { c.train.use_bppl = v; })},
        {"train.use_owlora", flag([](const RunConfig& c) { return c.train.use_owlora; },
                                  [](RunConfig& c, bool v) { c.train.use_owlora = v; })},
        {"train.projection", flag([](const RunConfig& c) { return c.train.projection_on; },
                                  [](RunConfig& c, bool v) { c.train.projection_on = v; })},
        {"train.init_scale", dbl([](const RunConfig& c) { return c.train.init_scale; },
                                 [](RunConfig& c, double v) { c.train.init_scale = v; })},
    };
    return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig config;
    std::map<std::string, const KeyBinding*> by_key;
    for (const auto& [key, binding] : bindings()) by_key[key] = &binding;

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            const size_t a = s.find_first_not_of(ws);
            if (a == std::string::npos) return std::string();
            const size_t b = s.find_last_not_of(ws);
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = by_key.find(key);
        if (it == by_key.end())
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        it->second->set(config, value);
    }
    config.validate();
    return config;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string canonical_config_string(const RunConfig& config) {
    std::ostringstream out;
    for (const auto& [key, binding] : bindings()) out << key << " = " << binding.get(config) << "\n";
    return out.str();
}

void apply_ablation(RunConfig& config, const std::string& which) {
    if (which == "gdat")
        config.train.use_gdat = false;
    else if (which == "bppl")
        config.train.use_bppl = false;
    else if (which == "owlora")
        config.train.use_owlora = false;
    else if (which == "projection")
        config.train.projection_on = false;
    else if (which == "lin")
        config.owlora.lambda3 = 0.0;
    else
        throw std::invalid_argument("unknown ablation '" + which +
                                    "' (expected gdat|bppl|owlora|projection|lin)");
}

}  // namespace comel
