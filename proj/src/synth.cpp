#include "comel/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace comel {

namespace {

int positives_per_task(Regime regime) { return regime == Regime::Detection ? 1 : 2; }

// One orthonormal frame shared by all tasks of a stream: columns 0/1
// hold the negative mixture plane, later columns one per positive class.
// Modified Gram-Schmidt on a seeded Gaussian matrix.
Matrix direction_frame(std::uint64_t base_seed, int feature_dim, int columns) {
    if (columns > feature_dim)
        throw std::invalid_argument("make_task_spec: more class directions than feature dims");
    Rng rng(derive_seed(base_seed, "frame"));
    Matrix q(feature_dim, columns);
    for (int j = 0; j < columns; ++j) {
        Matrix col = rng.gaussian_matrix(feature_dim, 1, 1.0);
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) {
                double proj = 0.0;
                for (int i = 0; i < feature_dim; ++i) proj += q.at(i, k) * col.at(i, 0);
                for (int i = 0; i < feature_dim; ++i) col.at(i, 0) -= proj * q.at(i, k);
            }
        }
        double norm = frobenius_norm(col);
        if (norm < 1e-8) throw std::runtime_error("direction_frame: degenerate draw");
        for (int i = 0; i < feature_dim; ++i) q.at(i, j) = col.at(i, 0) / norm;
    }
    return q;
}

Matrix frame_column(const Matrix& q, int j, double scale) {
    Matrix v(1, q.rows);
    for (int i = 0; i < q.rows; ++i) v.data[i] = q.at(i, j) * scale;
    return v;
}

}  // namespace

const Matrix& TaskSpec::mean_for_class(int label) const {
    for (size_t i = 0; i < positive_classes.size(); ++i)
        if (positive_classes[i] == label) return positive_means[i];
    throw std::invalid_argument("TaskSpec: class " + std::to_string(label) + " has no positive mean");
}

TaskSpec make_task_spec(int task_index, std::uint64_t base_seed, const SynthConfig& config) {
    if (task_index < 1) throw std::invalid_argument("make_task_spec: task_index must be >= 1");
    if (config.feature_dim < 4) throw std::invalid_argument("make_task_spec: feature_dim < 4 is degenerate");
    if (config.grid_side < 4) throw std::invalid_argument("make_task_spec: grid_side < 4 is degenerate");
    if (config.positive_shared_frac < 0.0 || config.positive_shared_frac >= 1.0)
        throw std::invalid_argument("make_task_spec: positive_shared_frac must be in [0, 1)");
    if (config.positive_scale * std::sqrt(2.0 * (1.0 - config.positive_shared_frac)) <
        config.drift_distance)
        throw std::invalid_argument("make_task_spec: positive_scale too small for drift_distance");

    const int ppc = positives_per_task(config.regime);
    const int frame_cols = 3 + task_index * ppc;  // negatives plane, shared axis, per-class axes
    Matrix frame = direction_frame(base_seed, config.feature_dim, frame_cols);
    Rng rng(derive_seed(base_seed, "spec", static_cast<std::uint64_t>(task_index)));

    TaskSpec spec;
    spec.task_index = task_index;
    spec.regime = config.regime;
    spec.feature_dim = config.feature_dim;
    spec.grid_side = config.grid_side;
    spec.positive_blob_radius = std::min(config.blob_radius, config.grid_side);
    spec.positive_std = config.positive_std;
    spec.seed = derive_seed(base_seed, "task", static_cast<std::uint64_t>(task_index));

    // Negative mixture: an orthogonal pair rotating inside its own
    // plane as tasks progress. It never leaves span(q0, q1), so it
    // stays orthogonal to every positive direction, and the two
    // components are never antipodal (an antipodal pair would hand the
    // separation loss a degenerate optimum that splits the negatives).
    const double phi = 0.4 * (task_index - 1) + rng.uniform(-0.05, 0.05);
    Matrix n0 = add(frame_column(frame, 0, config.negative_scale * std::cos(phi)),
                    frame_column(frame, 1, config.negative_scale * std::sin(phi)));
    Matrix n1 = add(frame_column(frame, 0, -config.negative_scale * std::sin(phi)),
                    frame_column(frame, 1, config.negative_scale * std::cos(phi)));
    spec.negative_mixture.push_back({n0, config.negative_std});
    spec.negative_mixture.push_back({n1, config.negative_std});

    if (config.regime == Regime::Detection) {
        spec.bag_label_space = {0, 1};
        spec.positive_classes = {1};
    } else {
        const int c0 = 2 * (task_index - 1);
        spec.bag_label_space = {c0, c0 + 1};
        spec.positive_classes = spec.bag_label_space;
    }
    const double shared_part = config.positive_scale * std::sqrt(config.positive_shared_frac);
    const double own_part = config.positive_scale * std::sqrt(1.0 - config.positive_shared_frac);
    for (int j = 0; j < ppc; ++j) {
        const int col = 3 + (task_index - 1) * ppc + j;
        spec.positive_means.push_back(
            add(frame_column(frame, 2, shared_part), frame_column(frame, col, own_part)));
    }

    for (const Matrix& mu : spec.positive_means)
        for (const NegativeComponent& nc : spec.negative_mixture) {
            const double sep = frobenius_norm(sub(mu, nc.mean));
            if (sep < 2.0 * (config.positive_std + nc.std))
                throw std::runtime_error("make_task_spec: task would not be learnable");
        }
    return spec;
}

namespace {

void fill_negative(Matrix& instances, int row, const TaskSpec& spec, Rng& rng, double mix_weight) {
    const auto& mix = spec.negative_mixture;
    const auto& comp = mix[rng.uniform(0.0, 1.0) < mix_weight ? 0 : 1];
    double* x = instances.row_ptr(row);
    for (int j = 0; j < spec.feature_dim; ++j) x[j] = comp.mean.data[j] + comp.std * rng.gaussian();
}

// Blob sizes run from a single cell up to the radius cap, so small
// lesions force the model to localize: their bag means sit inside the
// spread of the negative bags and defeat any mean-pooling readout.
std::vector<int> blob_cells(const TaskSpec& spec, Rng& rng) {
    const int side = spec.grid_side;
    const int M = spec.num_instances();
    const int cr = static_cast<int>(rng.uniform_int(0, side - 1));
    const int cc = static_cast<int>(rng.uniform_int(0, side - 1));
    const int radius = static_cast<int>(rng.uniform_int(0, spec.positive_blob_radius));

    std::vector<std::pair<double, int>> by_distance;
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            const double d2 = double(r - cr) * (r - cr) + double(c - cc) * (c - cc);
            if (d2 <= double(radius) * radius + 1e-9) by_distance.push_back({d2, r * side + c});
        }
    std::stable_sort(by_distance.begin(), by_distance.end());
    std::vector<int> cells;
    for (const auto& [d2, idx] : by_distance) {
        cells.push_back(idx);
        if (static_cast<int>(cells.size()) >= M / 2) break;
    }
    return cells;
}

}  // namespace

Bag sample_bag(const TaskSpec& spec, int label, Rng& rng) {
    const bool positive =
        std::find(spec.positive_classes.begin(), spec.positive_classes.end(), label) != spec.positive_classes.end();
    const bool known = positive || (spec.regime == Regime::Detection && label == 0);
    if (!known) throw std::invalid_argument("sample_bag: label outside the task's label space");

    const int M = spec.num_instances();
    Bag bag;
    bag.bag_label = label;
    bag.instances = Matrix(M, spec.feature_dim);
    bag.instance_labels.assign(M, 0);
    bag.positions.resize(M);
    for (int r = 0; r < spec.grid_side; ++r)
        for (int c = 0; c < spec.grid_side; ++c) bag.positions[r * spec.grid_side + c] = {r, c};

    // Per-bag mixture weight: negative bag means wander within the
    // mixture plane instead of clustering at one point.
    const double mix_weight = rng.uniform(0.15, 0.85);
    for (int m = 0; m < M; ++m) fill_negative(bag.instances, m, spec, rng, mix_weight);

    if (positive) {
        const Matrix& mu = spec.mean_for_class(label);
        for (int cell : blob_cells(spec, rng)) {
            bag.instance_labels[cell] = 1;
            double* x = bag.instances.row_ptr(cell);
            for (int j = 0; j < spec.feature_dim; ++j) x[j] = mu.data[j] + spec.positive_std * rng.gaussian();
        }
    }
    return bag;
}

Sequence build_sequence(int num_tasks, int bags_per_task, std::uint64_t base_seed,
                        const SynthConfig& config) {
    if (num_tasks < 1) throw std::invalid_argument("build_sequence: num_tasks must be >= 1");
    if (bags_per_task < 10) throw std::invalid_argument("build_sequence: bags_per_task < 10 rejected");

    Sequence seq;
    seq.config = config;
    seq.base_seed = base_seed;
    seq.bags_per_task = bags_per_task;
    for (int t = 1; t <= num_tasks; ++t) {
        TaskData data;
        data.spec = make_task_spec(t, base_seed, config);

        // Balanced labels: alternate through the label space so counts
        // differ by at most one bag.
        std::vector<int> labels;
        const auto& space = data.spec.bag_label_space;
        for (int i = 0; i < bags_per_task; ++i) labels.push_back(space[i % space.size()]);

        std::vector<Bag> bags;
        for (int i = 0; i < bags_per_task; ++i) {
            Rng rng(derive_seed(base_seed, "bag", static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i)));
            bags.push_back(sample_bag(data.spec, labels[i], rng));
        }

        // Stratified 80/20 split, deterministic from the seed.
        Rng split_rng(derive_seed(base_seed, "split", static_cast<std::uint64_t>(t)));
        for (int label : space) {
            std::vector<int> idx;
            for (int i = 0; i < bags_per_task; ++i)
                if (labels[i] == label) idx.push_back(i);
            split_rng.shuffle(idx);
            const size_t train_count = static_cast<size_t>(std::floor(0.8 * double(idx.size())));
            for (size_t k = 0; k < idx.size(); ++k)
                (k < train_count ? data.train : data.test).push_back(bags[idx[k]]);
        }
        seq.task_classes.push_back(space);
        for (int c : space) seq.num_classes = std::max(seq.num_classes, c + 1);
        for (int c : data.spec.positive_classes)
            if (std::find(seq.positive_classes.begin(), seq.positive_classes.end(), c) == seq.positive_classes.end())
                seq.positive_classes.push_back(c);
        seq.tasks.push_back(std::move(data));
    }
    return seq;
}

Sequence merge_as_single_task(const Sequence& seq) {
    Sequence joint = seq;
    joint.tasks.clear();
    joint.task_classes.clear();
    TaskData all;
    all.spec = seq.tasks.front().spec;
    all.spec.task_index = 1;
    std::vector<int> classes;
    for (const TaskData& t : seq.tasks) {
        all.train.insert(all.train.end(), t.train.begin(), t.train.end());
        all.test.insert(all.test.end(), t.test.begin(), t.test.end());
        for (int c : t.spec.bag_label_space)
            if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
    }
    std::sort(classes.begin(), classes.end());
    all.spec.bag_label_space = classes;
    joint.tasks.push_back(std::move(all));
    joint.task_classes.push_back(classes);
    return joint;
}

namespace {

std::string bag_stem(int task, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%d_b%03d", task, index);
    return buf;
}

void save_bag(const Bag& bag, const std::string& dir, const std::string& stem) {
    write_cmlm(dir + "/" + stem + ".x.cmlm", bag.instances);
    Matrix meta(bag.instances.rows, 3);
    for (int m = 0; m < bag.instances.rows; ++m) {
        meta.at(m, 0) = bag.instance_labels[m];
        meta.at(m, 1) = bag.positions[m].row;
        meta.at(m, 2) = bag.positions[m].col;
    }
    write_cmlm(dir + "/" + stem + ".y.cmlm", meta);
}

Bag load_bag(const std::string& dir, const std::string& stem, int label) {
    Bag bag;
    bag.bag_label = label;
    bag.instances = read_cmlm(dir + "/" + stem + ".x.cmlm");
    Matrix meta = read_cmlm(dir + "/" + stem + ".y.cmlm");
    require_shape(meta, bag.instances.rows, 3, "bag metadata");
    bag.instance_labels.resize(meta.rows);
    bag.positions.resize(meta.rows);
    for (int m = 0; m < meta.rows; ++m) {
        bag.instance_labels[m] = static_cast<int>(meta.at(m, 0));
        bag.positions[m] = {static_cast<int>(meta.at(m, 1)), static_cast<int>(meta.at(m, 2))};
    }
    return bag;
}

}  // namespace

void save_sequence(const Sequence& seq, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "bags");
    json manifest;
    manifest["version"] = 1;
    manifest["regime"] = seq.config.regime == Regime::Detection ? "detection" : "subtyping";
    manifest["base_seed"] = seq.base_seed;
    manifest["bags_per_task"] = seq.bags_per_task;
    manifest["num_classes"] = seq.num_classes;
    manifest["positive_classes"] = seq.positive_classes;
    manifest["config"] = {{"feature_dim", seq.config.feature_dim},
                          {"grid_side", seq.config.grid_side},
                          {"blob_radius", seq.config.blob_radius},
                          {"positive_scale", seq.config.positive_scale},
                          {"positive_std", seq.config.positive_std},
                          {"negative_scale", seq.config.negative_scale},
                          {"negative_std", seq.config.negative_std},
                          {"drift_distance", seq.config.drift_distance}};
    json tasks = json::array();
    for (size_t ti = 0; ti < seq.tasks.size(); ++ti) {
        const TaskData& t = seq.tasks[ti];
        json jt;
        jt["task_index"] = t.spec.task_index;
        jt["grid_side"] = t.spec.grid_side;
        jt["classes"] = t.spec.bag_label_space;
        jt["positive_classes"] = t.spec.positive_classes;
        json bags = json::array();
        int counter = 0;
        auto emit = [&](const std::vector<Bag>& list, const char* split) {
            for (const Bag& bag : list) {
                const std::string stem = bag_stem(static_cast<int>(ti + 1), counter++);
                save_bag(bag, dir + "/bags", stem);
                bags.push_back({{"file", stem}, {"label", bag.bag_label}, {"split", split}});
            }
        };
        emit(t.train, "train");
        emit(t.test, "test");
        jt["bags"] = bags;
        tasks.push_back(jt);
    }
    manifest["tasks"] = tasks;
    std::ofstream out(dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_sequence: cannot write manifest in " + dir);
}

Sequence load_sequence(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("load_sequence: missing manifest in " + dir);
    json manifest = json::parse(in);

    Sequence seq;
    seq.config.regime = manifest.at("regime") == "detection" ? Regime::Detection : Regime::Subtyping;
    seq.base_seed = manifest.at("base_seed").get<std::uint64_t>();
    seq.bags_per_task = manifest.at("bags_per_task").get<int>();
    seq.num_classes = manifest.at("num_classes").get<int>();
    seq.positive_classes = manifest.at("positive_classes").get<std::vector<int>>();
    const json& cfg = manifest.at("config");
    seq.config.feature_dim = cfg.at("feature_dim").get<int>();
    seq.config.grid_side = cfg.at("grid_side").get<int>();
    seq.config.blob_radius = cfg.at("blob_radius").get<int>();
    seq.config.positive_scale = cfg.at("positive_scale").get<double>();
    seq.config.positive_std = cfg.at("positive_std").get<double>();
    seq.config.negative_scale = cfg.at("negative_scale").get<double>();
    seq.config.negative_std = cfg.at("negative_std").get<double>();
    seq.config.drift_distance = cfg.at("drift_distance").get<double>();

    for (const json& jt : manifest.at("tasks")) {
        TaskData t;
        t.spec = make_task_spec(jt.at("task_index").get<int>(), seq.base_seed, seq.config);
        for (const json& jb : jt.at("bags")) {
            Bag bag = load_bag(dir + "/bags", jb.at("file").get<std::string>(), jb.at("label").get<int>());
            (jb.at("split") == "train" ? t.train : t.test).push_back(std::move(bag));
        }
        seq.task_classes.push_back(t.spec.bag_label_space);
        seq.tasks.push_back(std::move(t));
    }
    return seq;
}

}  // namespace comel
