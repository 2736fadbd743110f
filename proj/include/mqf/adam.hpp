#pragma once

#include <cstdint>
#include <vector>

#include "mqf/tensor.hpp"

namespace mqf {

class ParameterStore;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated on the first step
// and keyed by parameter position, so the store must not change size between
// steps. Gradients are read, never modified.
class AdamState {
public:
    explicit AdamState(AdamConfig config = {}) : config_(config) {}

    void step(ParameterStore& params);

    // Schedules adjust the rate between steps; moments are unaffected.
    void set_lr(double lr) { config_.lr = lr; }

    const AdamConfig& config() const { return config_; }
    std::int64_t steps_taken() const { return t_; }

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace mqf
