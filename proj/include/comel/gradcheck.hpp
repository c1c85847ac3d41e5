#pragma once

#include <functional>
#include <map>
#include <string>

#include "comel/matrix.hpp"

namespace comel {

// All trainable tensors of a model, addressed by stable dotted names.
// std::map keeps iteration order deterministic across runs.
using ParamMap = std::map<std::string, Matrix>;

struct GradReport {
    // max relative error per parameter tensor
    std::map<std::string, double> max_rel_error;
    double worst = 0.0;
    std::string worst_param;
    bool pass = false;
};

struct LossEval {
    double value = 0.0;
    ParamMap grads;  // one entry per parameter, same shapes
};

// Deterministic loss with analytic gradients; grads may be skipped when
// want_grad is false (finite-difference probes).
using LossFn = std::function<LossEval(const ParamMap&, bool want_grad)>;

// Central finite differences (h = 1e-5) against the analytic gradients,
// entry by entry. Relative error is |a-f| / max(1e-8, |a|+|f|).
// A loss that returns different values for two evaluations at the same
// point is rejected.
GradReport grad_check(const LossFn& loss, const ParamMap& params, double tol);

}  // namespace comel
