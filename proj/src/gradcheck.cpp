#include "comel/gradcheck.hpp"

namespace comel {

GradReport grad_check(const LossFn& loss, const ParamMap& params, double tol) {
    const double h = 1e-5;

    const double base = loss(params, false).value;
    const double again = loss(params, false).value;
    if (base != again) throw std::runtime_error("grad_check: loss function is not deterministic");

    const LossEval analytic = loss(params, true);
    GradReport report;
    ParamMap probe = params;
    for (auto& [name, tensor] : probe) {
        auto it = analytic.grads.find(name);
        if (it == analytic.grads.end() || !it->second.same_shape(tensor))
            throw std::runtime_error("grad_check: missing or misshaped gradient for " + name);
        double worst = 0.0;
        for (size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor.data[i];
            tensor.data[i] = saved + h;
            const double fp = loss(probe, false).value;
            tensor.data[i] = saved - h;
            const double fm = loss(probe, false).value;
            tensor.data[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = it->second.data[i];
            const double rel = std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
            worst = std::max(worst, rel);
        }
        report.max_rel_error[name] = worst;
        if (worst > report.worst) {
            report.worst = worst;
            report.worst_param = name;
        }
    }
    report.pass = report.worst <= tol;
    return report;
}

}  // namespace comel
