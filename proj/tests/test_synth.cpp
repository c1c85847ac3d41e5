#include <filesystem>

#include "comel/synth.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace comel;

TEST_CASE("task specs are deterministic and drift apart") {
    SynthConfig config;
    TaskSpec a = make_task_spec(1, 99, config);
    TaskSpec b = make_task_spec(1, 99, config);
    CHECK(max_abs_diff(a.positive_means[0], b.positive_means[0]) == 0.0);
    CHECK(max_abs_diff(a.negative_mixture[0].mean, b.negative_mixture[0].mean) == 0.0);

    for (int t = 2; t <= 5; ++t) {
        TaskSpec other = make_task_spec(t, 99, config);
        const double sep = frobenius_norm(sub(a.positive_means[0], other.positive_means[0]));
        CHECK(sep >= config.drift_distance);
    }

    // desk-scale defaults
    CHECK(config.feature_dim == 32);
    CHECK(config.grid_side == 16);
    CHECK(a.num_instances() == 256);

    SynthConfig tiny = config;
    tiny.feature_dim = 3;
    CHECK_THROWS(make_task_spec(1, 1, tiny));
    tiny = config;
    tiny.grid_side = 3;
    CHECK_THROWS(make_task_spec(1, 1, tiny));
}

TEST_CASE("sampled bags honor the MIL assumption") {
    SynthConfig config;
    TaskSpec spec = make_task_spec(1, 5, config);

    Rng rng1(123);
    Bag negative = sample_bag(spec, 0, rng1);
    for (int y : negative.instance_labels) CHECK(y == 0);

    Rng rng2(123);
    Bag positive = sample_bag(spec, 1, rng2);
    int positives = 0;
    for (int y : positive.instance_labels) positives += y;
    CHECK(positives >= 1);
    CHECK(positives <= spec.num_instances() / 2);

    Rng rng3(123);
    Bag again = sample_bag(spec, 1, rng3);
    CHECK(max_abs_diff(positive.instances, again.instances) == 0.0);
    CHECK(positive.instance_labels == again.instance_labels);

    CHECK_THROWS(sample_bag(spec, 7, rng3));
}

TEST_CASE("positive blobs are contiguous on the grid") {
    SynthConfig config;
    TaskSpec spec = make_task_spec(2, 17, config);
    // find a seed with a multi-cell blob (single-cell lesions are valid)
    int positives = 0;
    Bag bag;
    for (int seed = 9; positives < 2; ++seed) {
        Rng rng(seed);
        bag = sample_bag(spec, 1, rng);
        positives = 0;
        for (int y : bag.instance_labels) positives += y;
    }
    const int side = spec.grid_side;
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            if (!bag.instance_labels[r * side + c]) continue;
            bool neighbor = false;
            for (auto [dr, dc] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
                if (r + dr >= 0 && r + dr < side && c + dc >= 0 && c + dc < side)
                    neighbor |= bag.instance_labels[(r + dr) * side + c + dc] == 1;
            CHECK(neighbor);
        }
}

TEST_CASE("build_sequence splits and balances") {
    SynthConfig config;
    Sequence seq = build_sequence(5, 60, 31, config);
    REQUIRE(seq.tasks.size() == 5);
    for (const TaskData& t : seq.tasks) {
        CHECK(t.train.size() == 48);
        CHECK(t.test.size() == 12);
        int pos = 0, neg = 0;
        for (const Bag& b : t.train) (b.bag_label == 1 ? pos : neg)++;
        for (const Bag& b : t.test) (b.bag_label == 1 ? pos : neg)++;
        CHECK(std::abs(pos - neg) <= 1);
    }

    Sequence single = build_sequence(1, 20, 31, config);
    CHECK(single.tasks.size() == 1);
    CHECK(single.num_classes == 2);

    Sequence other = build_sequence(1, 20, 32, config);
    CHECK(max_abs_diff(other.tasks[0].train[0].instances, single.tasks[0].train[0].instances) > 0.0);

    CHECK_THROWS(build_sequence(1, 5, 31, config));
}

TEST_CASE("subtyping regime owns two new classes per task") {
    SynthConfig config;
    config.regime = Regime::Subtyping;
    Sequence seq = build_sequence(3, 20, 8, config);
    CHECK(seq.num_classes == 6);
    CHECK(seq.task_classes[2] == std::vector<int>{4, 5});
    for (const TaskData& t : seq.tasks)
        for (const Bag& b : t.train) {
            int positives = 0;
            for (int y : b.instance_labels) positives += y;
            CHECK(positives >= 1);  // every bag is positive
        }
}

TEST_CASE("instance features are linearly separable") {
    SynthConfig config;
    Sequence seq = build_sequence(2, 30, 77, config);
    for (const TaskData& t : seq.tasks) {
        const double acc = testing::linear_probe_accuracy(t.train, t.test);
        CHECK(acc >= 0.95);
    }
}

TEST_CASE("dataset directory round trip") {
    SynthConfig config;
    config.grid_side = 8;
    Sequence seq = build_sequence(2, 10, 4, config);
    const std::string dir = "/tmp/comel_test_dataset";
    std::filesystem::remove_all(dir);
    save_sequence(seq, dir);
    Sequence back = load_sequence(dir);
    REQUIRE(back.tasks.size() == seq.tasks.size());
    CHECK(back.num_classes == seq.num_classes);
    for (size_t t = 0; t < seq.tasks.size(); ++t) {
        REQUIRE(back.tasks[t].train.size() == seq.tasks[t].train.size());
        for (size_t i = 0; i < seq.tasks[t].train.size(); ++i) {
            CHECK(max_abs_diff(back.tasks[t].train[i].instances, seq.tasks[t].train[i].instances) == 0.0);
            CHECK(back.tasks[t].train[i].bag_label == seq.tasks[t].train[i].bag_label);
            CHECK(back.tasks[t].train[i].instance_labels == seq.tasks[t].train[i].instance_labels);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("merge_as_single_task pools every bag") {
    SynthConfig config;
    config.grid_side = 8;
    Sequence seq = build_sequence(3, 10, 4, config);
    Sequence joint = merge_as_single_task(seq);
    REQUIRE(joint.tasks.size() == 1);
    CHECK(joint.tasks[0].train.size() == 24);
    CHECK(joint.tasks[0].test.size() == 6);
}
