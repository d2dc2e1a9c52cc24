#pragma once

#include <cstddef>

#include "flowids/nn/layers.hpp"
#include "flowids/nn/losses.hpp"
#include "flowids/tensor.hpp"

namespace flowids::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a kink
};

// Compares the analytic gradient of loss(net(input), target) against central
// finite differences, coordinate by coordinate, over every parameter and the
// input itself. Relative error per coordinate is
// |a - n| / max(1e-8, |a| + |n|).
//
// Coordinates where the +eps and -eps evaluations disagree on any discrete
// choice (ReLU sign, pool argmax, loss clipping) are skipped: the loss is not
// differentiable there and the central difference is meaningless.
GradCheckReport grad_check(Sequential& net, Loss& loss, Tensor& input,
                           const Tensor& target, double eps);

}  // namespace flowids::nn
