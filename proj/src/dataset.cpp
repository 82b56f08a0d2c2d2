#include "gdpl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "gdpl/encoders.hpp"
#include "gdpl/rng.hpp"

namespace gdpl {

namespace {
constexpr double kCycles[] = {2.0, 3.0, 4.5, 6.5};
constexpr std::size_t kAngles = 8;
}  // namespace

std::size_t catalogue_size() { return std::size(kCycles) * kAngles; }

TextureSpec texture_of(std::size_t class_id) {
  if (class_id >= catalogue_size()) throw std::out_of_range("class id " + std::to_string(class_id) + " not in catalogue");
  // Interleave so that consecutive ids differ in both orientation and frequency.
  const std::size_t a = class_id % kAngles;
  const std::size_t f = (class_id / kAngles + a) % std::size(kCycles);
  return {kCycles[f], std::numbers::pi * static_cast<double>(a) / kAngles};
}

std::string to_string(Style style) { return style == Style::Natural ? "natural" : "domain-shifted"; }

namespace {

Image render(const TextureSpec& spec, std::size_t size, double noise, Rng& rng) {
  const double angle = spec.angle + rng.uniform(-0.06, 0.06);
  const double cycles = spec.cycles * rng.uniform(0.95, 1.05);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double amp = rng.uniform(0.8, 1.2);
  const double c = std::cos(angle), s = std::sin(angle);
  const double k = 2.0 * std::numbers::pi * cycles / static_cast<double>(size);
  Image img{size, size, std::vector<double>(size * size)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) * c + static_cast<double>(y) * s;
      img.pixels[y * size + x] = amp * std::sin(k * u + phase) + rng.normal(0.0, noise);
    }
  }
  return img;
}

}  // namespace

Image apply_domain_shift(const Image& image, std::size_t domain_id) {
  if (domain_id == 0) return image;
  Rng rng(derive_seed(0xD0A1, domain_id));
  // A fixed blur strength, contrast curve and overlay grating per domain.
  const double blend = rng.uniform(0.35, 0.55);
  const double gain = rng.uniform(1.8, 2.6);
  const double overlay_amp = rng.uniform(0.6, 0.8);
  const double overlay_angle = rng.uniform(0.0, std::numbers::pi);
  const double overlay_cycles = rng.uniform(1.0, 1.5);
  const double offset = rng.uniform(-0.4, 0.4);

  const std::size_t h = image.height, w = image.width;
  Image out{h, w, std::vector<double>(h * w)};
  const double k = 2.0 * std::numbers::pi * overlay_cycles / static_cast<double>(w);
  const double c = std::cos(overlay_angle), s = std::sin(overlay_angle);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      int count = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
          acc += image.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          ++count;
        }
      }
      const double smooth = (1.0 - blend) * image.at(y, x) + blend * acc / count;
      const double u = static_cast<double>(x) * c + static_cast<double>(y) * s;
      out.pixels[y * w + x] = std::tanh(gain * smooth) * 0.7 + overlay_amp * std::sin(k * u) + offset;
    }
  }
  return out;
}

SyntheticDataset generate_dataset(const DatasetConfig& config) {
  if (config.per_class < 1) throw std::invalid_argument("generate_dataset: per_class must be at least 1");
  if (config.n_classes < 2) throw std::invalid_argument("generate_dataset: need at least 2 classes");
  if (config.first_class + config.n_classes > catalogue_size() ||
      config.first_class + config.n_classes > Vocabulary::kMaxClasses) {
    throw std::invalid_argument("generate_dataset: only " + std::to_string(catalogue_size()) + " classes exist");
  }
  const std::size_t domain = config.style == Style::Natural ? 0 : std::max<std::size_t>(config.domain_id, 1);
  SyntheticDataset data;
  data.domain_id = domain;
  data.style = config.style;
  Rng rng(derive_seed(config.seed, 100 + domain));
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    const std::size_t id = config.first_class + c;
    data.classes.push_back(id);
    for (std::size_t i = 0; i < config.per_class; ++i) {
      Image img = render(texture_of(id), config.image_size, config.noise, rng);
      data.images.push_back(domain == 0 ? std::move(img) : apply_domain_shift(img, domain));
      data.labels.push_back(id);
      data.captions.push_back(
          Vocabulary::caption(id, rng.index(Vocabulary::kFillerCount), rng.index(Vocabulary::kFillerCount)));
    }
  }
  return data;
}

std::vector<std::size_t> nearest_centroid_predict(const SyntheticDataset& train, const std::vector<Image>& queries) {
  const std::size_t n = train.images.at(0).pixels.size();
  std::vector<std::vector<double>> centroids(train.classes.size(), std::vector<double>(n, 0.0));
  std::vector<std::size_t> counts(train.classes.size(), 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto slot = std::find(train.classes.begin(), train.classes.end(), train.labels[i]) - train.classes.begin();
    for (std::size_t p = 0; p < n; ++p) centroids[slot][p] += train.images[i].pixels[p];
    ++counts[slot];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    for (double& v : centroids[c]) v /= static_cast<double>(std::max<std::size_t>(counts[c], 1));
  }
  std::vector<std::size_t> out;
  for (const auto& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      double d = 0.0;
      for (std::size_t p = 0; p < n; ++p) d += (q.pixels[p] - centroids[c][p]) * (q.pixels[p] - centroids[c][p]);
      if (d < best) best = d, arg = c;
    }
    out.push_back(train.classes[arg]);
  }
  return out;
}

BaseNovelSplit split_base_novel(const SyntheticDataset& data, std::size_t n_base, std::size_t n_novel,
                                std::size_t shots, std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("split_base_novel: shots must be at least 1");
  if (n_base < 1 || n_novel < 1 || n_base + n_novel > data.classes.size()) {
    throw std::invalid_argument("split_base_novel: " + std::to_string(n_base) + " base + " + std::to_string(n_novel) +
                                " novel classes exceed the " + std::to_string(data.classes.size()) + " available");
  }
  BaseNovelSplit split;
  split.base_classes.assign(data.classes.begin(), data.classes.begin() + n_base);
  split.novel_classes.assign(data.classes.begin() + n_base, data.classes.begin() + n_base + n_novel);
  Rng rng(derive_seed(seed, 200));
  for (std::size_t c : split.base_classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == c) members.push_back(i);
    }
    if (members.size() <= shots) {
      throw std::invalid_argument("split_base_novel: class " + std::to_string(c) + " has " +
                                  std::to_string(members.size()) + " images, need more than " + std::to_string(shots));
    }
    rng.shuffle(members.begin(), members.end());
    split.train.insert(split.train.end(), members.begin(), members.begin() + shots);
    split.base_test.insert(split.base_test.end(), members.begin() + shots, members.end());
  }
  // Novel pools match the size of the base test pools.
  for (std::size_t c : split.novel_classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == c) members.push_back(i);
    }
    if (members.size() <= shots) {
      throw std::invalid_argument("split_base_novel: novel class " + std::to_string(c) + " has too few images");
    }
    rng.shuffle(members.begin(), members.end());
    split.novel_test.insert(split.novel_test.end(), members.begin(), members.end() - shots);
  }
  std::sort(split.base_test.begin(), split.base_test.end());
  std::sort(split.novel_test.begin(), split.novel_test.end());
  return split;
}

std::uint64_t image_hash(const Image& image) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(image.pixels.data());
  for (std::size_t i = 0; i < image.pixels.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gdpl
