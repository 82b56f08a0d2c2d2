#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gdpl/image.hpp"
#include "gdpl/nn.hpp"
#include "gdpl/optim.hpp"
#include "gdpl/rng.hpp"
#include "gdpl/tensor.hpp"

namespace gdpl {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t width = 64;
  std::size_t depth = 4;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t embed_dim = 64;  // shared image/text space
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 16;

  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size; }
};

/// Fixed 64-symbol vocabulary: "a", "photo", "of", one token per class and
/// filler words. Captions read "<filler> <filler> a photo of <class>"; the two
/// leading slots are where learned context is substituted.
struct Vocabulary {
  static constexpr std::size_t kA = 0;
  static constexpr std::size_t kPhoto = 1;
  static constexpr std::size_t kOf = 2;
  static constexpr std::size_t kClassBase = 3;
  static constexpr std::size_t kMaxClasses = 32;
  static constexpr std::size_t kFillerBase = kClassBase + kMaxClasses;
  static constexpr std::size_t kFillerCount = 64 - kFillerBase;
  static constexpr std::size_t kContextSlots = 2;

  static std::size_t class_token(std::size_t class_id);
  /// "a photo of <class>"
  static std::vector<std::size_t> category_tokens(std::size_t class_id);
  static std::vector<std::size_t> caption(std::size_t class_id, std::size_t filler1, std::size_t filler2);
};

/// Toy ViT: patch embedding, class token, positional table, pre-norm blocks,
/// final norm and a bias-free projection into the shared space.
class VisionEncoder {
 public:
  struct BaseEmbedding {
    Tensor patches;  // E^v_1: [B, num_patches, width]
    Tensor cls;      // c_1:   [B, 1, width]
  };

  static VisionEncoder init(const EncoderConfig& config, Rng& rng, const std::string& prefix = "vision");

  const EncoderConfig& config() const { return config_; }
  std::size_t depth() const { return blocks_.size(); }
  const TransformerBlock& layer(std::size_t i) const { return blocks_.at(i); }
  const Tensor& positions() const { return positions_; }
  const LayerNorm& final_norm() const { return ln_post_; }

  BaseEmbedding embed(const Tensor& patches) const;
  BaseEmbedding encode_image_base(std::span<const Image> images) const;
  /// Final norm + projection of a [B, width] class-token state.
  Tensor head(const Tensor& cls_state) const;
  /// Token states after all blocks for the unprompted sequence [cls, patches].
  Tensor forward_tokens(std::span<const Image> images) const;
  /// Unprompted image embedding [B, embed_dim].
  Tensor encode(std::span<const Image> images) const;

  std::vector<Tensor> parameters() const;

 private:
  EncoderConfig config_;
  Linear patch_embed_;
  Tensor cls_token_;
  Tensor positions_;  // [1 + num_patches, width]
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_post_;
  Linear proj_;
};

class TextEncoder {
 public:
  static TextEncoder init(const EncoderConfig& config, Rng& rng, const std::string& prefix = "text");

  const EncoderConfig& config() const { return config_; }
  std::size_t depth() const { return blocks_.size(); }
  const TransformerBlock& layer(std::size_t i) const { return blocks_.at(i); }

  /// Token embeddings without positions: [N, L, width]. Sequences must share length.
  Tensor embed_tokens(std::span<const std::vector<std::size_t>> ids) const;
  /// Adds positional embeddings to the first L positions of [N, L, width].
  Tensor add_positions(const Tensor& tokens) const;
  Tensor head(const Tensor& pooled) const;
  /// Unprompted text embedding pooled at the last token: [N, embed_dim].
  Tensor encode(std::span<const std::vector<std::size_t>> ids) const;

  std::vector<Tensor> parameters() const;

 private:
  EncoderConfig config_;
  Tensor token_embedding_;  // [vocab, width]
  Tensor positions_;        // [max_text_len, width]
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_final_;
  Linear proj_;
};

enum class DomainProvenance { SeededRandom, MaeLite };

std::string to_string(DomainProvenance provenance);

/// Frozen stand-in for a domain-specific foundation model. Same architecture
/// as the vision encoder; features are mean-pooled normalized patch tokens.
class DomainEncoder {
 public:
  DomainEncoder(VisionEncoder net, DomainProvenance provenance);
  static DomainEncoder seeded_random(const EncoderConfig& config, std::uint64_t seed);

  void freeze();
  bool frozen() const { return frozen_; }
  DomainProvenance provenance() const { return provenance_; }
  std::size_t feature_width() const { return net_.config().width; }
  const VisionEncoder& network() const { return net_; }

  /// F_d: [B, width]. Throws std::logic_error before freeze(). The result never
  /// carries gradient history.
  Tensor encode_domain(std::span<const Image> images) const;

 private:
  VisionEncoder net_;
  DomainProvenance provenance_;
  bool frozen_ = false;
};

/// L_d: two affine maps with GELU between, from F_d width to the context width.
struct DomainProjection {
  Linear first;
  Linear second;

  static DomainProjection init(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& features) const;
  std::vector<Tensor> parameters() const;
};

// ---------------------------------------------------------------- pretraining

struct MaeConfig {
  double mask_ratio = 0.75;
  std::size_t steps = 500;
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Masked-patch reconstruction head: learnable mask token plus a linear
/// per-token pixel decoder.
struct MaeHead {
  Tensor mask_token;
  Linear decoder;

  static MaeHead init(const EncoderConfig& config, Rng& rng);
  std::vector<Tensor> parameters() const;
};

/// Mean squared reconstruction error over masked patches (all patches when
/// the mask is empty). `mask` holds one 0/1 flag per patch per image.
Tensor masked_reconstruction_loss(const VisionEncoder& net, const MaeHead& head, const Tensor& patches,
                                  const std::vector<double>& mask);
std::vector<double> sample_patch_mask(std::size_t batch, std::size_t num_patches, double ratio, Rng& rng);

struct MaeResult {
  DomainEncoder encoder;
  MaeHead head;
  std::vector<double> losses;  // one per step; losses[0] is before any update
};

MaeResult mae_lite_pretrain(std::span<const Image> images, const EncoderConfig& config, const MaeConfig& mae);

/// Held-out masked reconstruction error for a fixed mask seed.
double masked_reconstruction_error(const VisionEncoder& net, const MaeHead& head, std::span<const Image> images,
                                   double mask_ratio, std::uint64_t seed);

struct ClipConfig {
  std::size_t steps = 400;
  std::size_t batch = 24;
  double learning_rate = 2e-3;
  double temperature = 0.07;
  std::uint64_t seed = 0;
};

struct ClipResult {
  VisionEncoder vision;
  TextEncoder text;
  std::vector<double> losses;
};

/// Symmetric InfoNCE over a batch of paired embeddings [B, e].
Tensor symmetric_contrastive_loss(const Tensor& image_emb, const Tensor& text_emb, double temperature);

/// Contrastive pretraining of the toy dual encoder on (image, class) pairs with
/// captions drawn from Vocabulary::caption using random fillers.
ClipResult clip_lite_pretrain(std::span<const Image> images, std::span<const std::size_t> labels,
                              const EncoderConfig& config, const ClipConfig& clip);

/// Zero-shot logits [B, C] of the unprompted dual encoder for candidate classes.
Tensor zero_shot_logits(const VisionEncoder& vision, const TextEncoder& text, std::span<const Image> images,
                        std::span<const std::size_t> classes, double temperature);

}  // namespace gdpl
