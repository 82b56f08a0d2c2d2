#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gdpl/encoders.hpp"
#include "gdpl/quaternion.hpp"
#include "gdpl/rng.hpp"
#include "gdpl/tensor.hpp"

namespace gdpl {

/// Frozen pieces every prompt-learning run shares.
struct Backbone {
  EncoderConfig config;
  VisionEncoder vision;
  TextEncoder text;
  DomainEncoder domain;
};

struct GdplConfig {
  std::size_t n_ctx = 2;     // context words
  std::size_t n_prompt = 2;  // prompt tokens per prompted layer
  std::size_t depth = 3;     // k
  std::size_t lora_rank = 4; // V
  SlotPattern pattern;
  bool use_quat = true;
  bool use_lora = true;
  double temperature = 0.07;
};

/// Throws std::invalid_argument for k >= m, zero widths or a bad temperature.
void validate(const GdplConfig& config, std::size_t encoder_depth);

struct PromptState {
  Tensor context;                    // E_c [n_ctx, d]
  std::vector<Tensor> language;      // P_l^i [n_prompt, d], i = 1..k
  DomainProjection projection;       // L_d
  QuatLinear text_quat;              // Q_t
  std::vector<QuatLinear> vision_quat;  // Q_v^i, i = 1..k

  static PromptState init(const GdplConfig& config, std::size_t width, std::size_t domain_width, Rng& rng);
  /// Parameters that take part in the forward pass for this configuration.
  std::vector<Tensor> parameters(const GdplConfig& config) const;
  std::vector<Tensor> all_parameters() const;
};

struct LoraBranch {
  Tensor beta;    // [D, V]
  Tensor lambda;  // diagonal of Λ, [V]
  Tensor alpha;   // [V, K]
};

/// One branch entry per layer 2..m for each modality, plus the shared M_c.
struct LoraAdapter {
  std::vector<LoraBranch> language;
  std::vector<LoraBranch> vision;
  Tensor mix;  // M_c [2, 2]

  /// α = 0, Λ = 1, M_c = I, β uniform in ±1/sqrt(D).
  static LoraAdapter init(std::size_t layers, std::size_t width, std::size_t rank, Rng& rng);
  std::vector<Tensor> parameters() const;
  std::size_t rank() const { return mix.defined() && !language.empty() ? language[0].lambda.numel() : 0; }
};

// ------------------------------------------------------------ language branch

/// N_G = Mean(F̂_d) · N(0, 1) per image, shaped [B, n_ctx, d].
Tensor context_noise(const Tensor& fhat, std::size_t n_ctx, Rng& rng);

/// The two quaternion slot inputs of Q_t: context side (E_c + N_G) and domain
/// side (F̂_d), both [B, n_ctx, d].
std::pair<Tensor, Tensor> language_slot_inputs(const PromptState& state, const Tensor& fhat, const Tensor& noise);

/// T_d [B, n_ctx, d]. `noise` is added when defined (training); pass an
/// undefined tensor for inference. Throws std::domain_error on non-finite F̂_d.
Tensor gen_language_context(const PromptState& state, const GdplConfig& config, const Tensor& fhat,
                            const Tensor& noise = {});

/// [T_d ; C_t] for every (image, class) pair: T_d [B, n_ctx, d] with category
/// tokens [C, L_c, d] gives [B * C, n_ctx + L_c, d], image-major.
Tensor build_language_input(const Tensor& context, const Tensor& category_tokens);

/// Raw token embeddings of "a photo of <class>" for each class: [C, 4, d].
Tensor category_embeddings(const TextEncoder& text, std::span<const std::size_t> classes);

// -------------------------------------------------------------- vision branch

/// Slot inputs of Q_v^i: (P_l^i, F̂_d), both [B, n_prompt, d].
std::pair<Tensor, Tensor> vision_slot_inputs(const Tensor& language_prompt, const Tensor& fhat);
/// P_v^i [B, n_prompt, d] for i = 1..k.
std::vector<Tensor> gen_vision_prompts(const PromptState& state, const GdplConfig& config, const Tensor& fhat);

// ----------------------------------------------------------------------- LoRA

/// Rows of M_c · [Λ_l ; Λ_v].
std::pair<Tensor, Tensor> cross_modal_update(const Tensor& lambda_l, const Tensor& lambda_v, const Tensor& mix);
/// Ê = E + β diag(Λ̂) α applied to every token of E_prev.
Tensor lora_shift(const Tensor& e, const Tensor& e_prev, const Tensor& beta, const Tensor& lambda_hat,
                  const Tensor& alpha);
/// The dense [D, K] operator β diag(Λ̂) α.
Tensor shift_operator(const Tensor& beta, const Tensor& lambda_hat, const Tensor& alpha);

// ---------------------------------------------------------------- propagation

struct Propagated {
  Tensor embedding;                  // projected output
  std::vector<std::size_t> lengths;  // token count entering each layer
};

/// Language encoder pass over E^l_1 [N, L, d] (positions not yet added).
/// Layers 1..k see the learned prompts (shared, [n_prompt, d]); later layers
/// carry the prompt outputs forward. Pools at `pool_index`. With `lora`, the
/// non-prompt tokens of layers 2..m receive shifts using the given Λ̂ rows.
Propagated propagate_language(const TextEncoder& text, const Tensor& e1, std::span<const Tensor> prompts,
                              std::size_t pool_index, const LoraAdapter* lora = nullptr,
                              std::span<const Tensor> lambda_hat = {});

/// Vision encoder pass; prompts are per image, [B, n_prompt, d]. The class
/// token leads the sequence and is pooled; LoRA shifts apply to patch tokens
/// of layers 2..m-1.
Propagated propagate_vision(const VisionEncoder& vision, const VisionEncoder::BaseEmbedding& base,
                            std::span<const Tensor> prompts, const LoraAdapter* lora = nullptr,
                            std::span<const Tensor> lambda_hat = {});

// ------------------------------------------------------------- classification

/// Cosine logits [B, C] = sim(image_b, text_{b,c}) / τ. Text is [B * C, e],
/// image-major. Throws std::domain_error on a zero-norm embedding.
Tensor similarity_logits(const Tensor& image_emb, const Tensor& text_emb, std::size_t classes, double temperature);
/// Softmax over similarity_logits.
Tensor classify(const Tensor& image_emb, const Tensor& text_emb, std::size_t classes, double temperature);
/// Mean -log p of the true class. Labels index the candidate list.
Tensor contrastive_loss(const Tensor& probabilities, std::span<const std::size_t> labels);

// -------------------------------------------------------------------- model

/// Images prepared once: patches for the base vision encoder and the frozen
/// domain features F_d.
struct ImageBatch {
  Tensor patches;          // [B, num_patches, patch_dim]
  Tensor domain_features;  // [B, d_dom]
  std::size_t size() const { return patches.dim(0); }
};

ImageBatch prepare_images(const Backbone& backbone, std::span<const Image> images);
/// Rows `indices` of a prepared batch.
ImageBatch select(const ImageBatch& batch, std::span<const std::size_t> indices);

struct ForwardOptions {
  bool training = false;
  Rng* noise = nullptr;  // required when training
};

struct ForwardResult {
  Tensor probabilities;              // [B, C]
  Tensor logits;                     // [B, C]
  std::vector<double> slot_cosines;  // mean |cos| of the two slot inputs: Q_t, Q_v^1..Q_v^k
};

class GdplModel {
 public:
  GdplModel(const Backbone& backbone, GdplConfig config, PromptState prompts, LoraAdapter lora);
  static GdplModel init(const Backbone& backbone, const GdplConfig& config, Rng& rng);

  const GdplConfig& config() const { return config_; }
  const Backbone& backbone() const { return *backbone_; }
  PromptState& prompts() { return prompts_; }
  const PromptState& prompts() const { return prompts_; }
  LoraAdapter& lora() { return lora_; }
  const LoraAdapter& lora() const { return lora_; }

  /// Λ̂ rows per layer 2..m for the language and vision branches.
  std::pair<std::vector<Tensor>, std::vector<Tensor>> updated_lambdas() const;

  ForwardResult forward(const ImageBatch& batch, std::span<const std::size_t> classes,
                        const ForwardOptions& options = {}) const;

  /// Parameters the optimizer should update. The last vision LoRA branch only
  /// contributes its Λ.
  std::vector<Tensor> trainable_parameters() const;

 private:
  const Backbone* backbone_;
  GdplConfig config_;
  PromptState prompts_;
  LoraAdapter lora_;
};

/// Mean |cos| between rows of two same-shape tensors over the last axis.
/// Rows where either side has zero norm are skipped; nullopt if all are.
std::optional<double> mean_abs_cosine(const Tensor& a, const Tensor& b);

}  // namespace gdpl
