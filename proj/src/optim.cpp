#include "gdpl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gdpl {

namespace {
void require_grad(const Tensor& p, std::size_t index) {
  if (!p.has_grad()) {
    const std::string label = p.name().empty() ? "#" + std::to_string(index) : p.name();
    throw std::logic_error("parameter '" + label + "' has no gradient");
  }
}
}  // namespace

Sgd::Sgd(std::vector<Tensor> params, SgdConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("SGD learning rate must be positive");
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) {
    throw std::invalid_argument("SGD momentum must lie in [0, 1)");
  }
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) require_grad(params_[i], i);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_values();
    auto grad = params_[i].grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      vel[j] = config_.momentum * vel[j] + grad[j];
      values[j] -= config_.learning_rate * vel[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    // Parameters untouched by this loss (e.g. unused vocabulary rows) are skipped.
    if (!params_[i].has_grad()) continue;
    auto values = params_[i].mutable_values();
    auto grad = params_[i].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * grad[j];
      v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * grad[j] * grad[j];
      values[j] -= config_.learning_rate * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace gdpl
