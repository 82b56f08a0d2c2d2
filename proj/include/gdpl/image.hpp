#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gdpl/tensor.hpp"

namespace gdpl {

/// Single-channel image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  bool operator==(const Image&) const = default;
};

/// Cuts each image into non-overlapping patch x patch tiles (row-major tile
/// order, row-major pixels inside a tile): [B, num_patches, patch * patch].
/// Throws std::invalid_argument when an extent is not divisible by `patch`
/// or the images differ in size.
Tensor patchify(std::span<const Image> images, std::size_t patch);

}  // namespace gdpl
