#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gdpl/tensor.hpp"

namespace gdpl {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of the scalar `loss_fn` against central
/// differences with step `h`. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|); the maximum is returned.
/// `loss_fn` must rebuild its graph on every call. Throws std::domain_error
/// when the loss is non-finite at any probe point.
GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                  double h = 1e-5);

}  // namespace gdpl
