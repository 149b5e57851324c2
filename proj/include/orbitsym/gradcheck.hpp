#pragma once

#include <functional>
#include <vector>

#include "orbitsym/tensor.hpp"

namespace orbitsym {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;  // worst input, norm-wise
  std::size_t evaluations = 0;
};

/// Compares reverse-mode gradients of a scalar-valued `fn` against central
/// differences with the given step. Relative error per input is
/// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, floor).
GradCheckResult check_gradient(const ScalarFn& fn, const std::vector<Tensor>& inputs, double step = 1e-6,
                               double floor = 1e-8);

/// Same comparison for a loss closed over existing leaf parameters, which are
/// perturbed in place and restored. Existing gradients are cleared.
GradCheckResult check_parameter_gradient(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                                         double step = 1e-6, double floor = 1e-8);

}  // namespace orbitsym
