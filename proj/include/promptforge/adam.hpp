#pragma once

#include <vector>

#include "promptforge/graph.hpp"

namespace promptforge {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter group. Throws on non-finite
// gradients rather than clamping.
class Adam {
public:
    Adam(std::vector<Param*> params, AdamConfig config);

    // Applies one update from the accumulated Param::grad buffers.
    void step();
    void zero_grad();

    long step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }

private:
    std::vector<Param*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamConfig config_;
    long step_ = 0;
};

}  // namespace promptforge
