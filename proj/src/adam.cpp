#include "mqf/adam.hpp"

#include <cmath>

#include "mqf/errors.hpp"
#include "mqf/tape.hpp"

namespace mqf {

void AdamState::step(ParameterStore& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params[i].value.shape());
            v_.emplace_back(params[i].value.shape());
        }
    }
    if (m_.size() != params.size()) {
        throw ContractError("adam: parameter count changed between steps");
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (!p.value.same_shape(m_[i])) {
            throw ContractError("adam: shape of " + p.name + " changed between steps");
        }
        double* val = p.value.data();
        const double* g = p.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = m[j] / corr1;
            const double vhat = v[j] / corr2;
            val[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

}  // namespace mqf
