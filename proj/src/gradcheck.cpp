#include "gdpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gdpl {

namespace {
double evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  const double value = loss_fn().item();
  if (!std::isfinite(value)) throw std::domain_error("finite_diff_check: loss is not finite");
  return value;
}
}  // namespace

GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double h) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw std::domain_error("finite_diff_check: loss is not finite");
  backward(loss);

  GradCheckResult result;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = evaluate(loss_fn);
      values[i] = saved - h;
      const double minus = evaluate(loss_fn);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p.name();
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace gdpl
