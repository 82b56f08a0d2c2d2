#pragma once

#include <vector>

#include "gdpl/tensor.hpp"

namespace gdpl {

struct SgdConfig {
  double learning_rate = 3.5e-3;
  double momentum = 0.9;
};

/// SGD with heavy-ball momentum: v <- momentum * v + g, theta <- theta - lr * v.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdConfig config);

  /// Throws std::logic_error naming the first parameter that has no gradient.
  void step();
  void zero_grad();
  const SgdConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam, used only for pretraining the toy base encoders.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  long steps_ = 0;
};

}  // namespace gdpl
