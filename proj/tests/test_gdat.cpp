#include <cmath>

#include "comel/gdat.hpp"
#include "comel/mil.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace comel;

namespace {
std::vector<GridPos> grid_positions(int side) {
    std::vector<GridPos> p;
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) p.push_back({r, c});
    return p;
}
}  // namespace

TEST_CASE("group_pool spec examples") {
    Rng rng(4);
    Matrix x = rng.gaussian_matrix(16, 3, 1.0);
    auto positions = grid_positions(4);

    auto [one_group, assign1] = group_pool(x, positions, 8);
    CHECK(one_group.rows == 1);
    Matrix means = scale(col_sums(x), 1.0 / 16.0);
    CHECK(max_abs_diff(one_group, means) < 1e-12);

    auto [identity, assignm] = group_pool(x, positions, 1);
    CHECK(identity.rows == 16);
    CHECK(max_abs_diff(identity, x) == 0.0);
    for (int i = 0; i < 16; ++i) CHECK(assignm[i] != assignm[(i + 1) % 16]);

    Matrix two(2, 2, {1, 1, 3, 3});
    auto [pooled, assign] = group_pool(two, {{0, 0}, {0, 1}}, 2);
    CHECK(pooled.rows == 1);
    CHECK(pooled.at(0, 0) == doctest::Approx(2.0));
    CHECK(pooled.at(0, 1) == doctest::Approx(2.0));

    // ragged boundary: 5x5 grid with F=2 gives 3x3 windows
    auto [ragged, assign5] = group_pool(rng.gaussian_matrix(25, 2, 1.0), grid_positions(5), 2);
    CHECK(ragged.rows == 9);
}

TEST_CASE("attn spec examples") {
    Matrix v(3, 2, {1, 2, 3, 4, 5, 6});
    Matrix k = Rng(7).gaussian_matrix(3, 4, 1.0);
    Matrix zero_q(2, 4);
    Matrix out = attn(zero_q, k, v, 4);
    Matrix col_mean = scale(col_sums(v), 1.0 / 3.0);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) CHECK(out.at(i, j) == doctest::Approx(col_mean.data[j]).epsilon(1e-12));

    Matrix same_k(3, 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) same_k.at(i, j) = 0.3 * j - 1.0;
    Matrix out2 = attn(Rng(9).gaussian_matrix(2, 4, 1.0), same_k, v, 4);
    for (int i = 0; i < out2.rows; ++i)
        for (int j = 0; j < out2.cols; ++j) CHECK(out2.at(i, j) == doctest::Approx(col_mean.data[j]).epsilon(1e-12));

    Matrix q1(1, 1, {1});
    Matrix k1(2, 1, {1, 0});
    Matrix v1(2, 1, {2, 0});
    const double p = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(attn(q1, k1, v1, 1).at(0, 0) == doctest::Approx(2.0 * p).epsilon(1e-9));
    CHECK(attn(q1, k1, v1, 1).at(0, 0) == doctest::Approx(1.4621).epsilon(1e-4));

    CHECK_THROWS(attn(q1, Matrix(2, 3), v1, 1));
}

TEST_CASE("double_attn matches the literal nested-loop evaluation") {
    Rng rng(21);
    const int D = 6, D1 = 5;
    Matrix wq = rng.gaussian_matrix(D, D1, 0.5);
    Matrix wk = rng.gaussian_matrix(D, D1, 0.5);
    Matrix wv = rng.gaussian_matrix(D, D1, 0.5);
    Matrix bq = rng.gaussian_matrix(1, D1, 0.1);
    Matrix bv = rng.gaussian_matrix(1, D1, 0.1);

    for (int m : {1, 3}) {
        Matrix x = rng.gaussian_matrix(12, D, 1.0);
        Matrix xa = rng.gaussian_matrix(m, D, 1.0);
        Matrix ours = double_attn(x, xa, wq, wk, wv, bq, bv, 0.1, D1);
        Matrix ref = testing::double_attn_reference(x, xa, wq, wk, wv, bq, bv, 0.1, D1);
        CHECK(ours.rows == 12);
        CHECK(ours.cols == D1);
        CHECK(max_abs_diff(ours, ref) < 1e-10);
    }

    // m = 1 closed form: every row is the attended global mean plus eta*V_i
    Matrix x = rng.gaussian_matrix(9, D, 1.0);
    Matrix xa = rng.gaussian_matrix(1, D, 1.0);
    Matrix out = double_attn(x, xa, wq, wk, wv, bq, bv, 0.25, D1);
    Matrix no_eta = double_attn(x, xa, wq, wk, wv, bq, bv, 0.0, D1);
    for (int i = 1; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            CHECK(no_eta.at(i, j) == doctest::Approx(no_eta.at(0, j)).epsilon(1e-10));
    Matrix v = add(matmul(x, wv), matmul(Matrix::filled(9, 1, 1.0), bv));
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            CHECK(out.at(i, j) - no_eta.at(i, j) == doctest::Approx(0.25 * v.at(i, j)).epsilon(1e-10));
}

TEST_CASE("double_attn is equivariant under within-group permutations") {
    Rng rng(33);
    const int D = 4;
    Matrix x = rng.gaussian_matrix(16, D, 1.0);
    auto positions = grid_positions(4);
    auto [xa, assignment] = group_pool(x, positions, 2);

    // swap two instances of group 0
    int first = -1, second = -1;
    for (int i = 0; i < 16 && second < 0; ++i) {
        if (assignment[i] != 0) continue;
        (first < 0 ? first : second) = i;
    }
    REQUIRE(second >= 0);
    Matrix xp = x;
    for (int j = 0; j < D; ++j) std::swap(xp.at(first, j), xp.at(second, j));
    auto [xap, assignment2] = group_pool(xp, positions, 2);
    CHECK(max_abs_diff(xa, xap) < 1e-12);

    Matrix wq = rng.gaussian_matrix(D, 3, 0.7), wk = rng.gaussian_matrix(D, 3, 0.7),
           wv = rng.gaussian_matrix(D, 3, 0.7);
    Matrix b(1, 3);
    Matrix out = double_attn(x, xa, wq, wk, wv, b, b, 0.1, 3);
    Matrix outp = double_attn(xp, xap, wq, wk, wv, b, b, 0.1, 3);
    for (int j = 0; j < 3; ++j) {
        CHECK(out.at(first, j) == doctest::Approx(outp.at(second, j)).epsilon(1e-12));
        CHECK(out.at(second, j) == doctest::Approx(outp.at(first, j)).epsilon(1e-12));
    }
}

TEST_CASE("gdat_forward residual identity and determinism") {
    MilConfig config;
    config.feature_dim = 6;
    config.num_classes = 2;
    config.gdat.model_dim = 5;
    config.gdat.num_blocks = 2;
    config.gdat.grouping_factor = 2;
    config.gdat.eta = 0.0;

    SynthConfig synth;
    synth.feature_dim = 6;
    synth.grid_side = 4;
    synth.blob_radius = 2;
    TaskSpec spec = make_task_spec(1, 3, synth);
    Rng rng(5);
    Bag bag = sample_bag(spec, 1, rng);

    ModelParams params = init_model_params(config, 11, 0.2);
    for (auto& [name, tensor] : params)
        if (name.rfind("gdat.", 0) == 0) tensor = Matrix(tensor.rows, tensor.cols);

    ad::Tape t;
    std::map<std::string, int> nodes;
    for (const auto& [name, tensor] : params) nodes[name] = t.constant(tensor);
    BagGraph g = build_forward(t, bag, config, nodes);
    CHECK(max_abs_diff(t.value(g.features), bag.instances) == 0.0);

    // determinism and attention row sums
    ModelParams live = init_model_params(config, 11, 0.2);
    ad::Tape t2;
    std::map<std::string, int> nodes2;
    for (const auto& [name, tensor] : live) nodes2[name] = t2.constant(tensor);
    BagGraph g2 = build_forward(t2, bag, config, nodes2);
    ad::Tape t3;
    std::map<std::string, int> nodes3;
    for (const auto& [name, tensor] : live) nodes3[name] = t3.constant(tensor);
    BagGraph g3 = build_forward(t3, bag, config, nodes3);
    CHECK(max_abs_diff(t2.value(g2.features), t3.value(g3.features)) == 0.0);
    REQUIRE(g2.attention_rows.size() == 4);  // two attentions per block
    for (int node : g2.attention_rows) {
        const Matrix& rows = t2.value(node);
        for (int i = 0; i < rows.rows; ++i) {
            double sum = 0.0;
            for (int j = 0; j < rows.cols; ++j) sum += rows.at(i, j);
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("gradients flow through two stacked blocks") {
    MilConfig config;
    config.feature_dim = 5;
    config.num_classes = 2;
    config.gdat.model_dim = 4;
    config.gdat.num_blocks = 2;
    config.gdat.grouping_factor = 2;

    SynthConfig synth;
    synth.feature_dim = 5;
    synth.grid_side = 4;
    synth.blob_radius = 2;
    TaskSpec spec = make_task_spec(1, 21, synth);
    Rng rng(13);
    Bag bag = sample_bag(spec, 1, rng);

    ModelParams params = init_model_params(config, 3, 0.3);
    BpplConfig bppl;
    bppl.positive_classes = {1};
    LossFn loss = testing::make_loss_fn(bag, config, bppl, 0.6, GateMode::Auto, testing::LossPart::Bag);
    GradReport report = grad_check(loss, params, 1e-4);
    INFO("worst parameter: ", report.worst_param, " err ", report.worst);
    CHECK(report.pass);
}
