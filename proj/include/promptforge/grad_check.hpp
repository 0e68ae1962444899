#pragma once

#include <functional>
#include <vector>

#include "promptforge/graph.hpp"

namespace promptforge {

// Builds a scalar loss over the given parameters inside the supplied graph.
using LossBuilder = std::function<Value(Graph&)>;

// Central-difference gradient check. Builds the loss once, backpropagates,
// then perturbs every coordinate of every trainable parameter by +/- eps and
// recomputes. Returns the max over coordinates of
//   |analytic - central| / (|analytic| + |central| + 1e-12).
// Throws if any evaluation is non-finite or eps is outside (0, 1e-3].
double finite_difference_check(const LossBuilder& build, const std::vector<Param*>& params,
                               double eps = 1e-6);

}  // namespace promptforge
