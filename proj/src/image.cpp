#include "gdpl/image.hpp"

#include <stdexcept>
#include <string>

namespace gdpl {

Tensor patchify(std::span<const Image> images, std::size_t patch) {
  if (images.empty()) throw std::invalid_argument("patchify: no images");
  const std::size_t h = images[0].height, w = images[0].width;
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t rows = h / patch, cols = w / patch, pd = patch * patch;
  std::vector<double> out(images.size() * rows * cols * pd);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = images[b];
    if (img.height != h || img.width != w || img.pixels.size() != h * w) {
      throw std::invalid_argument("patchify: images differ in size");
    }
    for (std::size_t pr = 0; pr < rows; ++pr) {
      for (std::size_t pc = 0; pc < cols; ++pc) {
        double* dst = out.data() + ((b * rows + pr) * cols + pc) * pd;
        for (std::size_t y = 0; y < patch; ++y) {
          for (std::size_t x = 0; x < patch; ++x) dst[y * patch + x] = img.at(pr * patch + y, pc * patch + x);
        }
      }
    }
  }
  return Tensor::from_data({images.size(), rows * cols, pd}, std::move(out));
}

}  // namespace gdpl
