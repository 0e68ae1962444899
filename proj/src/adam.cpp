#include "promptforge/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace promptforge {

Adam::Adam(std::vector<Param*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (!(config_.lr > 0.0)) throw std::invalid_argument("Adam: lr must be positive");
    if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 ||
        config_.beta2 >= 1.0) {
        throw std::invalid_argument("Adam: betas must lie in [0, 1)");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Param& p = *params_[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            if (!std::isfinite(g)) {
                throw std::runtime_error("Adam: non-finite gradient in parameter '" + p.name +
                                         "'");
            }
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->grad.fill(0.0);
}

}  // namespace promptforge
