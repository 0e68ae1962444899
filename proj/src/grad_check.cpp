#include "promptforge/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace promptforge {

double finite_difference_check(const LossBuilder& build, const std::vector<Param*>& params,
                               double eps) {
    if (!(eps > 0.0) || eps > 1e-3) {
        throw std::invalid_argument("finite_difference_check: eps must lie in (0, 1e-3]");
    }
    Graph g;
    const Value loss = build(g);
    if (!std::isfinite(g.scalar_value(loss))) {
        throw std::runtime_error("finite_difference_check: non-finite loss at base point");
    }

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) {
        p->grad.fill(0.0);
        analytic.emplace_back(p->value.shape());
    }
    g.backward(loss);
    for (size_t k = 0; k < params.size(); ++k) analytic[k] = params[k]->grad;

    double worst = 0.0;
    for (size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        if (!p.trainable) continue;
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + eps;
            g.recompute();
            const double up = g.scalar_value(loss);
            p.value[i] = saved - eps;
            g.recompute();
            const double down = g.scalar_value(loss);
            p.value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw std::runtime_error("finite_difference_check: non-finite evaluation");
            }
            const double central = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            const double rel = std::fabs(a - central) / (std::fabs(a) + std::fabs(central) + 1e-12);
            worst = std::max(worst, rel);
        }
    }
    g.recompute();  // restore cached values at the base point
    return worst;
}

}  // namespace promptforge
