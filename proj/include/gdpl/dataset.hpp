#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdpl/image.hpp"

namespace gdpl {

/// Oriented grating: `cycles` periods across the image at `angle` radians.
struct TextureSpec {
  double cycles = 0.0;
  double angle = 0.0;
  bool operator==(const TextureSpec&) const = default;
};

/// Fixed catalogue shared by every synthetic domain; class id c always names
/// the same texture (and the same vocabulary token).
TextureSpec texture_of(std::size_t class_id);
std::size_t catalogue_size();

enum class Style { Natural, DomainShifted };

std::string to_string(Style style);

struct DatasetConfig {
  std::uint64_t seed = 0;
  std::size_t n_classes = 12;
  std::size_t first_class = 0;  // classes are first_class .. first_class + n_classes - 1
  std::size_t per_class = 40;
  Style style = Style::DomainShifted;
  std::size_t domain_id = 1;  // selects the global transform of a shifted domain
  std::size_t image_size = 32;
  double noise = 0.35;
};

struct SyntheticDataset {
  std::size_t domain_id = 0;
  Style style = Style::Natural;
  std::vector<std::size_t> classes;  // global class ids
  std::vector<Image> images;
  std::vector<std::size_t> labels;   // global class id per image
  std::vector<std::vector<std::size_t>> captions;

  std::size_t size() const { return images.size(); }
};

/// Deterministic in the config. Throws std::invalid_argument when per_class is
/// 0, fewer than 2 classes are requested or the catalogue is exceeded.
SyntheticDataset generate_dataset(const DatasetConfig& config);

/// Applies the fixed global transform of shifted domain `domain_id`.
Image apply_domain_shift(const Image& image, std::size_t domain_id);

/// Index of the nearest class mean in raw pixel space, fitted on `train`.
std::vector<std::size_t> nearest_centroid_predict(const SyntheticDataset& train, const std::vector<Image>& queries);

struct BaseNovelSplit {
  std::vector<std::size_t> base_classes;
  std::vector<std::size_t> novel_classes;
  std::vector<std::size_t> train;       // indices into the dataset
  std::vector<std::size_t> base_test;
  std::vector<std::size_t> novel_test;
};

/// The first n_base classes are base, the next n_novel novel. Each base class
/// gives `shots` training images; its remaining images form base_test. Novel
/// classes never contribute training images; each keeps as many test images
/// as a base class.
BaseNovelSplit split_base_novel(const SyntheticDataset& data, std::size_t n_base, std::size_t n_novel,
                                std::size_t shots, std::uint64_t seed);

/// FNV-1a over the raw pixel bytes.
std::uint64_t image_hash(const Image& image);

}  // namespace gdpl
