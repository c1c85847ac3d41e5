#include <cmath>

#include "comel/mil.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace comel;

TEST_CASE("aggregate spec examples") {
    Rng rng(2);
    Matrix p1 = rng.gaussian_matrix(4, 2, 0.7);
    Matrix p2 = rng.gaussian_matrix(4, 2, 0.7);
    Matrix w = rng.gaussian_matrix(1, 2, 0.7);

    Matrix h1 = rng.gaussian_matrix(1, 4, 1.0);
    auto [z1, a1] = aggregate(h1, p1, p2, w);
    CHECK(a1.size() == 1);
    CHECK(a1.data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(max_abs_diff(z1, h1) < 1e-12);

    Matrix same(5, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) same.at(i, j) = 0.3 * j - 0.5;
    auto [zs, as] = aggregate(same, p1, p2, w);
    for (int m = 0; m < 5; ++m) CHECK(as.data[m] == doctest::Approx(0.2).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) CHECK(zs.data[j] == doctest::Approx(same.at(0, j)).epsilon(1e-12));

    Matrix h = rng.gaussian_matrix(7, 4, 1.0);
    auto [z, a] = aggregate(h, p1, p2, w);
    double sum = 0.0;
    for (double v : a.data) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    for (int j = 0; j < 4; ++j) {
        double lo = 1e300, hi = -1e300;
        for (int m = 0; m < 7; ++m) {
            lo = std::min(lo, h.at(m, j));
            hi = std::max(hi, h.at(m, j));
        }
        CHECK(z.data[j] >= lo - 1e-12);
        CHECK(z.data[j] <= hi + 1e-12);
    }
}

TEST_CASE("classify spec examples") {
    Matrix z(1, 3, {0.5, -1.0, 2.0});
    Matrix w0(2, 3);
    Matrix b0(1, 2);
    Matrix uniform = classify(z, w0, b0);
    CHECK(uniform.data[0] == uniform.data[1]);
    CHECK(argmax_class(uniform) == 0);  // lowest index wins ties

    Rng rng(8);
    Matrix w = rng.gaussian_matrix(4, 3, 1.0);
    Matrix b = rng.gaussian_matrix(1, 4, 1.0);
    Matrix logits = classify(z, w, b);
    Matrix shifted = logits;
    for (double& v : shifted.data) v += 7.25;
    CHECK(argmax_class(logits) == argmax_class(shifted));

    Matrix w2(2, 2, {1, 0, 0, 1});
    Matrix b2(1, 2, {0.1, -0.2});
    Matrix z2(1, 2, {2.0, 3.0});
    Matrix out = classify(z2, w2, b2);
    CHECK(out.data[0] == doctest::Approx(2.1));
    CHECK(out.data[1] == doctest::Approx(2.8));

    CHECK(argmax_class_masked(out, {0}) == 0);
}

TEST_CASE("bag_loss spec examples") {
    Matrix uniform(1, 3);
    CHECK(bag_loss(uniform, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    Matrix hand(1, 2, {0.0, std::log(3.0)});
    CHECK(bag_loss(hand, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    for (double margin : {2.0, 6.0, 12.0}) {
        Matrix logits(1, 2, {margin, 0.0});
        CHECK(bag_loss(logits, 0) < bag_loss(Matrix(1, 2, {margin / 2, 0.0}), 0));
    }
    Matrix big(1, 2, {40.0, 0.0});
    CHECK(bag_loss(big, 0) < 1e-12);

    CHECK_THROWS(bag_loss(uniform, 3));
    CHECK_THROWS(bag_loss(uniform, -1));
}

TEST_CASE("forward is deterministic with simplex attention") {
    MilConfig config;
    config.feature_dim = 6;
    config.num_classes = 2;
    config.gdat.model_dim = 4;
    config.gdat.num_blocks = 1;
    config.gdat.grouping_factor = 2;

    SynthConfig synth;
    synth.feature_dim = 6;
    synth.grid_side = 4;
    synth.blob_radius = 2;
    TaskSpec spec = make_task_spec(1, 2, synth);
    Rng rng(31);
    Bag bag = sample_bag(spec, 1, rng);
    ModelParams params = init_model_params(config, 7, 0.2);

    BagOutput a = forward(bag, config, params);
    BagOutput b = forward(bag, config, params);
    CHECK(max_abs_diff(a.bag_logits, b.bag_logits) == 0.0);
    CHECK(max_abs_diff(a.attention, b.attention) == 0.0);
    CHECK(a.predicted == b.predicted);

    double sum = 0.0;
    for (double v : a.attention.data) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("L_bag gradients reach every named parameter") {
    MilConfig config;
    config.feature_dim = 4;
    config.num_classes = 3;
    config.gdat.model_dim = 4;
    config.gdat.num_blocks = 1;
    config.gdat.grouping_factor = 2;

    SynthConfig synth;
    synth.feature_dim = 4;
    synth.grid_side = 4;
    synth.blob_radius = 2;
    TaskSpec spec = make_task_spec(1, 6, synth);
    Rng rng(19);
    Bag bag = sample_bag(spec, 1, rng);

    ModelParams params = init_model_params(config, 23, 0.4);
    // classifier at zero has zero gradient into z; nudge it
    Rng crng(5);
    params["cls.w"] = crng.gaussian_matrix(3, 4, 0.3);
    params["cls.b"] = crng.gaussian_matrix(1, 3, 0.1);

    BpplConfig bppl;
    bppl.positive_classes = {1};
    LossFn loss = testing::make_loss_fn(bag, config, bppl, 0.6, GateMode::Auto, testing::LossPart::Bag);
    GradReport report = grad_check(loss, params, 1e-4);
    INFO("worst: ", report.worst_param, " err ", report.worst);
    CHECK(report.pass);
    CHECK(report.max_rel_error.size() == params.size());
}
