#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdpl/gdpl.hpp"

namespace gdpl {

struct CheckResult {
  std::string name;
  double value = 0.0;      // measured error
  double tolerance = 0.0;  // passes when value < tolerance, or value == 0 for exact checks
  bool exact = false;

  bool pass() const { return exact ? value == 0.0 : value < tolerance; }
};

/// Untrained frozen encoders of width 8 on 8x8 images (4 patches), for fast
/// structural checks. Norm and bias parameters are randomized.
Backbone micro_backbone(std::uint64_t seed, std::size_t depth);

/// Central-difference check of every trainable tensor of a micro model
/// (k = 1, V = 2, three classes, batch 2) with LoRA moved off its neutral
/// start, for the full model and both ablations. One entry per parameter
/// name holding the worst relative error over the variants.
std::vector<CheckResult> gradient_checks(std::uint64_t seed, std::size_t depth = 2);

/// Hamilton product against its matrix form, matrix homomorphism, norm
/// multiplicativity, the rank bound of the LoRA shift operator, LoRA
/// neutrality at initialization and the identity cross-modal update.
std::vector<CheckResult> oracle_checks(std::uint64_t seed);

}  // namespace gdpl
