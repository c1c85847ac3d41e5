#include <cmath>

#include "comel/gradcheck.hpp"
#include "comel/numeric.hpp"
#include "comel/owlora.hpp"
#include "doctest.h"

using namespace comel;

TEST_CASE("truncation_rank spec examples") {
    CHECK(truncation_rank({3.0, 1.0, 0.1}, 0.99) == 2);
    CHECK(truncation_rank({1.0, 1.0, 1.0, 1.0}, 0.99) == 4);  // equal mass: 0.25/0.5/0.75/1.0
    CHECK(truncation_rank({1.0, 1.0, 1.0, 1.0}, 0.75) == 3);
    CHECK(truncation_rank({5.0}, 0.5) == 1);
    CHECK(truncation_rank({0.0, 0.0}, 0.99) == 1);  // degenerate guard
}

TEST_CASE("truncate_first_task keeps the epsilon mass") {
    Rng rng(5);
    const double eps = 0.99;
    Matrix w = rng.gaussian_matrix(10, 7, 1.0);
    AdapterStack stack = truncate_first_task("layer", w, eps);
    CHECK(stack.dtilde >= 1);
    CHECK(stack.frozen.size() == 1);
    CHECK(stack.basis_u.cols == stack.dtilde);

    Matrix rec = effective_weight(stack);
    Matrix err = sub(w, rec);
    CHECK(dot_all(err, err) <= (1.0 - eps) * dot_all(w, w) + 1e-12);

    // frozen factors orthonormal
    CHECK(max_abs_diff(matmul_tn(stack.frozen[0].u, stack.frozen[0].u), Matrix::identity(stack.dtilde)) < 1e-10);
    CHECK(max_abs_diff(matmul_tn(stack.frozen[0].v, stack.frozen[0].v), Matrix::identity(stack.dtilde)) < 1e-10);

    // near-total retention keeps full rank
    AdapterStack full = truncate_first_task("layer", w, 0.999999999999);
    CHECK(full.dtilde == 7);

    AdapterStack zero = truncate_first_task("layer", Matrix(6, 4), 0.99);
    CHECK(zero.dtilde == 1);
    CHECK(frobenius_norm(effective_weight(zero)) == 0.0);

    // identity(4): equal singular values, eps = 0.99 keeps all four
    AdapterStack id = truncate_first_task("layer", Matrix::identity(4), 0.99);
    CHECK(id.dtilde == 4);
}

TEST_CASE("init_adapter lives in the frozen complement") {
    Rng wrng(9);
    Matrix w = matmul(wrng.gaussian_matrix(8, 2, 1.0), wrng.gaussian_matrix(2, 8, 1.0));
    AdapterStack stack = truncate_first_task("layer", w, 0.99);
    REQUIRE(stack.dtilde == 2);
    Matrix before = effective_weight(stack);

    Rng rng(31);
    init_adapter(stack, 2, 4, rng);  // complement dim 6 >= 4
    CHECK(stack.active.task_index == 2);
    CHECK(max_abs_diff(effective_weight(stack), before) == 0.0);  // s = 0

    CHECK(frobenius_norm(matmul_tn(stack.basis_u, stack.active.u)) <= 1e-10);
    CHECK(frobenius_norm(matmul_tn(stack.basis_v, stack.active.v)) <= 1e-10);
    CHECK(max_abs_diff(matmul_tn(stack.active.u, stack.active.u), Matrix::identity(4)) < 1e-10);

    // rank exhaustion is a clean error
    AdapterStack cramped = truncate_first_task("layer", wrng.gaussian_matrix(5, 5, 1.0), 0.999999999999);
    REQUIRE(cramped.dtilde == 5);
    Rng rng2(3);
    CHECK_THROWS_WITH_AS(init_adapter(cramped, 2, 2, rng2),
                         doctest::Contains("rank exhaustion"), std::runtime_error);
}

TEST_CASE("effective_weight spec examples") {
    // two rank-1 factors on orthogonal axes reconstruct a diagonal
    AdapterStack stack;
    stack.layer = "toy";
    stack.d_in = 2;
    stack.d_out = 2;
    stack.dtilde = 1;
    TaskFactors f1{1, Matrix(2, 1, {1, 0}), Matrix(1, 1, {3.0}), Matrix(2, 1, {1, 0})};
    TaskFactors f2{2, Matrix(2, 1, {0, 1}), Matrix(1, 1, {0.5}), Matrix(2, 1, {0, 1})};
    stack.frozen.push_back(f1);
    stack.frozen.push_back(f2);
    stack.rebuild_cache();
    Matrix expected(2, 2, {3.0, 0.0, 0.0, 0.5});
    CHECK(max_abs_diff(effective_weight(stack), expected) < 1e-15);

    // the active triple participates once s is nonzero
    AdapterStack wide;
    wide.layer = "toy3";
    wide.d_in = 3;
    wide.d_out = 3;
    wide.dtilde = 1;
    wide.frozen.push_back({1, Matrix(3, 1, {1, 0, 0}), Matrix(1, 1, {3.0}), Matrix(3, 1, {1, 0, 0})});
    wide.rebuild_cache();
    Matrix base = effective_weight(wide);
    Rng rng(2);
    init_adapter(wide, 2, 1, rng);
    CHECK(max_abs_diff(effective_weight(wide), base) < 1e-15);
    wide.active.s.data[0] = 2.0;
    Matrix inc = sub(effective_weight(wide), base);
    CHECK(frobenius_norm(inc) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("intra_ortho_loss spec examples") {
    Matrix u(3, 2, {1, 0, 0, 1, 0, 0});
    Matrix v(4, 2, {1, 0, 0, 1, 0, 0, 0, 0});
    CHECK(intra_ortho_loss(u, v) == doctest::Approx(0.0));

    Matrix dup(3, 2, {1, 1, 0, 0, 0, 0});  // two copies of e1
    CHECK(intra_ortho_loss(dup, v) == doctest::Approx(2.0).epsilon(1e-12));

    Matrix scaled = u;
    for (int i = 0; i < 3; ++i) scaled.at(i, 0) *= 2.0;
    CHECK(intra_ortho_loss(scaled, v) == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("intra_ortho_loss gradient matches finite differences") {
    Rng rng(11);
    ParamMap params;
    params["u"] = rng.gaussian_matrix(6, 3, 0.8);
    params["v"] = rng.gaussian_matrix(5, 3, 0.8);
    LossFn loss = [](const ParamMap& p, bool want_grad) {
        ad::Tape t;
        int u = t.param(p.at("u"));
        int v = t.param(p.at("v"));
        int root = intra_ortho_loss_node(t, u, v);
        LossEval ev;
        ev.value = t.value(root).data[0];
        if (want_grad) {
            t.backward(root);
            ev.grads["u"] = t.grad(u);
            ev.grads["v"] = t.grad(v);
        }
        return ev;
    };
    GradReport report = grad_check(loss, params, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("project_gradient spec examples") {
    Matrix g(3, 1, {1, 2, 3});
    CHECK(max_abs_diff(project_gradient(g, Matrix(3, 0)), g) == 0.0);

    Matrix e1(3, 1, {1, 0, 0});
    Matrix projected = project_gradient(g, e1);
    CHECK(projected.at(0, 0) == doctest::Approx(0.0));
    CHECK(projected.at(1, 0) == doctest::Approx(2.0));
    CHECK(projected.at(2, 0) == doctest::Approx(3.0));

    // vector inside the span maps to zero; projection is idempotent
    Matrix in_span = scale(e1, -4.2);
    CHECK(frobenius_norm(project_gradient(in_span, e1)) <= 1e-12);
    CHECK(max_abs_diff(project_gradient(projected, e1), projected) == 0.0);

    Rng rng(3);
    Matrix basis(4, 2);
    basis.at(0, 0) = 1.0;
    basis.at(2, 1) = 1.0;
    Matrix any = rng.gaussian_matrix(4, 3, 1.0);
    Matrix once = project_gradient(any, basis);
    CHECK(frobenius_norm(matmul_tn(basis, once)) <= 1e-12 * frobenius_norm(any));
}

TEST_CASE("reproject_params removes frozen-span drift") {
    Rng wrng(13);
    Matrix w = matmul(wrng.gaussian_matrix(8, 3, 1.0), wrng.gaussian_matrix(3, 8, 1.0));
    AdapterStack stack = truncate_first_task("layer", w, 0.99);
    Rng rng(7);
    init_adapter(stack, 2, 3, rng);

    Matrix u_before = stack.active.u;
    reproject_params(stack);  // already clean: unchanged up to fp noise
    CHECK(max_abs_diff(stack.active.u, u_before) <= 1e-14);

    // contaminate with a frozen direction, then clean it again
    for (int i = 0; i < stack.d_in; ++i) stack.active.u.at(i, 0) += 0.5 * stack.basis_u.at(i, 0);
    reproject_params(stack);
    CHECK(frobenius_norm(matmul_tn(stack.basis_u, stack.active.u)) <=
          1e-12 * std::max(1.0, frobenius_norm(stack.active.u)));
    CHECK(max_frozen_overlap(stack) <= 1e-12);

    // a parameter that IS a basis column gets zeroed
    AdapterStack basis_stack = stack;
    for (int i = 0; i < basis_stack.d_in; ++i)
        for (int j = 0; j < basis_stack.active.u.cols; ++j)
            basis_stack.active.u.at(i, j) = basis_stack.basis_u.at(i, 0);
    reproject_params(basis_stack);
    CHECK(frobenius_norm(basis_stack.active.u) <= 1e-12);
}

TEST_CASE("effective_weight_node differentiates through the factors") {
    Rng wrng(21);
    Matrix w = matmul(wrng.gaussian_matrix(6, 2, 1.0), wrng.gaussian_matrix(2, 5, 1.0));
    AdapterStack stack = truncate_first_task("layer", w, 0.99);
    Rng rng(2);
    init_adapter(stack, 2, 2, rng);
    stack.active.s = Matrix(1, 2, {0.3, -0.8});

    Matrix probe = wrng.gaussian_matrix(6, 5, 1.0);
    ParamMap params;
    params["u"] = stack.active.u;
    params["s"] = stack.active.s;
    params["v"] = stack.active.v;
    LossFn loss = [&](const ParamMap& p, bool want_grad) {
        ad::Tape t;
        int u = t.param(p.at("u"));
        int s = t.param(p.at("s"));
        int v = t.param(p.at("v"));
        int weff = effective_weight_node(t, stack, u, s, v);
        int root = t.sum_all(t.mul(weff, t.constant(probe)));
        LossEval ev;
        ev.value = t.value(root).data[0];
        if (want_grad) {
            t.backward(root);
            ev.grads["u"] = t.grad(u);
            ev.grads["s"] = t.grad(s);
            ev.grads["v"] = t.grad(v);
        }
        return ev;
    };
    CHECK(grad_check(loss, params, 1e-6).pass);

    AdapterStack value_stack = stack;
    ad::Tape t;
    int node = effective_weight_node(t, stack, t.constant(stack.active.u), t.constant(stack.active.s),
                                     t.constant(stack.active.v));
    CHECK(max_abs_diff(t.value(node), effective_weight(value_stack)) < 1e-14);
}
