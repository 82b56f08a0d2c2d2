#include "gdpl/gdpl.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gdpl/ops.hpp"

namespace gdpl {

namespace {

/// Repeats a [rows, ...] tensor so each row appears `times` times in a row.
Tensor repeat_rows(const Tensor& a, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(a.dim(0) * times);
  for (std::size_t r = 0; r < a.dim(0); ++r) idx.insert(idx.end(), times, r);
  return index_select(a, idx);
}

/// Copies of a whole tensor stacked along a new leading axis.
Tensor tile(const Tensor& a, std::size_t times) {
  Shape flat{1, a.numel()};
  Shape out = a.shape();
  out.insert(out.begin(), times);
  return reshape(index_select(reshape(a, flat), std::vector<std::size_t>(times, 0)), out);
}

/// [B, d] -> [B, n, d], each row repeated n times.
Tensor expand_rows(const Tensor& rows, std::size_t n) {
  return reshape(repeat_rows(rows, n), {rows.dim(0), n, rows.dim(1)});
}

Tensor quaternion_mix(const QuatLinear& layer, const SlotPattern& pattern, bool use_quat, const Tensor& a,
                      const Tensor& b) {
  if (!use_quat) return add(a, b);
  return extract_context(layer.forward(pack_slots(a, b, pattern)));
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(what) + " contains non-finite values");
  }
}

}  // namespace

void validate(const GdplConfig& config, std::size_t encoder_depth) {
  if (config.depth >= encoder_depth) {
    throw std::invalid_argument("prompt depth " + std::to_string(config.depth) + " must be below encoder depth " +
                                std::to_string(encoder_depth));
  }
  if (config.n_ctx == 0 || config.n_prompt == 0) throw std::invalid_argument("context and prompt lengths must be positive");
  if (config.lora_rank == 0) throw std::invalid_argument("LoRA rank must be positive");
  if (!(config.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

// ---------------------------------------------------------------- parameters

PromptState PromptState::init(const GdplConfig& config, std::size_t width, std::size_t domain_width, Rng& rng) {
  PromptState s;
  s.context = Tensor::parameter("prompt.context", {config.n_ctx, width}, rng.normal_vector(config.n_ctx * width, 0.02));
  for (std::size_t i = 0; i < config.depth; ++i) {
    s.language.push_back(Tensor::parameter("prompt.language" + std::to_string(i + 1), {config.n_prompt, width},
                                           rng.normal_vector(config.n_prompt * width, 0.02)));
  }
  s.projection = DomainProjection::init(domain_width, width, rng);
  s.text_quat = QuatLinear::init("quat.text", width, width, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    s.vision_quat.push_back(QuatLinear::init("quat.vision" + std::to_string(i + 1), width, width, rng));
  }
  return s;
}

std::vector<Tensor> PromptState::parameters(const GdplConfig& config) const {
  std::vector<Tensor> out{context};
  out.insert(out.end(), language.begin(), language.end());
  for (const auto& p : projection.parameters()) out.push_back(p);
  if (config.use_quat) {
    // Only the r component is read, so weight blocks facing zero slots never
    // reach the output.
    auto add_used = [&](const QuatLinear& q) {
      for (std::size_t c = 0; c < 4; ++c) {
        if (config.pattern[c] != Slot::Zero) out.push_back(q.weight[c]);
      }
    };
    add_used(text_quat);
    for (const auto& q : vision_quat) add_used(q);
  }
  return out;
}

std::vector<Tensor> PromptState::all_parameters() const {
  std::vector<Tensor> out{context};
  out.insert(out.end(), language.begin(), language.end());
  for (const auto& p : projection.parameters()) out.push_back(p);
  for (const auto& p : text_quat.parameters()) out.push_back(p);
  for (const auto& q : vision_quat) {
    for (const auto& p : q.parameters()) out.push_back(p);
  }
  return out;
}

LoraAdapter LoraAdapter::init(std::size_t layers, std::size_t width, std::size_t rank, Rng& rng) {
  LoraAdapter lora;
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  auto branch = [&](const std::string& name) {
    return LoraBranch{Tensor::parameter(name + ".beta", {width, rank}, rng.uniform_vector(width * rank, bound)),
                      Tensor::parameter(name + ".lambda", {rank}, std::vector<double>(rank, 1.0)),
                      Tensor::parameter(name + ".alpha", {rank, width}, std::vector<double>(rank * width, 0.0))};
  };
  for (std::size_t i = 1; i < layers; ++i) {
    lora.language.push_back(branch("lora.language" + std::to_string(i + 1)));
    lora.vision.push_back(branch("lora.vision" + std::to_string(i + 1)));
  }
  lora.mix = Tensor::parameter("lora.mix", {2, 2}, {1.0, 0.0, 0.0, 1.0});
  return lora;
}

std::vector<Tensor> LoraAdapter::parameters() const {
  std::vector<Tensor> out;
  for (const auto* side : {&language, &vision}) {
    for (const auto& b : *side) {
      out.push_back(b.beta);
      out.push_back(b.lambda);
      out.push_back(b.alpha);
    }
  }
  out.push_back(mix);
  return out;
}

// ------------------------------------------------------------ language branch

Tensor context_noise(const Tensor& fhat, std::size_t n_ctx, Rng& rng) {
  const std::size_t batch = fhat.dim(0), d = fhat.dim(1);
  Tensor draws = Tensor::from_data({batch, n_ctx, d}, rng.normal_vector(batch * n_ctx * d, 1.0));
  Tensor scale_rows = matmul(reshape(mean(fhat), {batch, 1}), Tensor::full({1, n_ctx * d}, 1.0));
  return mul(draws, reshape(scale_rows, {batch, n_ctx, d}));
}

std::pair<Tensor, Tensor> language_slot_inputs(const PromptState& state, const Tensor& fhat, const Tensor& noise) {
  const std::size_t n_ctx = state.context.dim(0);
  if (fhat.rank() != 2 || fhat.dim(1) != state.context.dim(1)) {
    throw ShapeError("domain features " + shape_string(fhat.shape()) + " do not match context " +
                     shape_string(state.context.shape()));
  }
  Tensor a = noise.defined() ? add(noise, state.context) : tile(state.context, fhat.dim(0));
  return {a, expand_rows(fhat, n_ctx)};
}

Tensor gen_language_context(const PromptState& state, const GdplConfig& config, const Tensor& fhat,
                            const Tensor& noise) {
  require_finite(fhat, "projected domain features");
  auto [a, b] = language_slot_inputs(state, fhat, noise);
  return quaternion_mix(state.text_quat, config.pattern, config.use_quat, a, b);
}

Tensor build_language_input(const Tensor& context, const Tensor& category_tokens) {
  if (context.rank() != 3 || category_tokens.rank() != 3 || context.dim(2) != category_tokens.dim(2)) {
    throw ShapeError("build_language_input: context " + shape_string(context.shape()) + " and category tokens " +
                     shape_string(category_tokens.shape()) + " disagree");
  }
  const std::size_t batch = context.dim(0), n_ctx = context.dim(1), d = context.dim(2);
  const std::size_t classes = category_tokens.dim(0), len = category_tokens.dim(1);
  Tensor ctx = reshape(repeat_rows(reshape(context, {batch, n_ctx * d}), classes), {batch * classes, n_ctx, d});
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < classes; ++c) idx.push_back(c);
  }
  Tensor cat = reshape(index_select(reshape(category_tokens, {classes, len * d}), idx), {batch * classes, len, d});
  return concat({ctx, cat}, 1);
}

Tensor category_embeddings(const TextEncoder& text, std::span<const std::size_t> classes) {
  std::vector<std::vector<std::size_t>> ids;
  for (std::size_t c : classes) ids.push_back(Vocabulary::category_tokens(c));
  return text.embed_tokens(ids);
}

// -------------------------------------------------------------- vision branch

std::pair<Tensor, Tensor> vision_slot_inputs(const Tensor& language_prompt, const Tensor& fhat) {
  if (fhat.rank() != 2 || fhat.dim(1) != language_prompt.dim(1)) {
    throw ShapeError("domain features " + shape_string(fhat.shape()) + " do not match prompt " +
                     shape_string(language_prompt.shape()));
  }
  return {tile(language_prompt, fhat.dim(0)), expand_rows(fhat, language_prompt.dim(0))};
}

std::vector<Tensor> gen_vision_prompts(const PromptState& state, const GdplConfig& config, const Tensor& fhat) {
  if (state.vision_quat.size() < state.language.size()) {
    throw std::invalid_argument("gen_vision_prompts: " + std::to_string(state.language.size()) + " prompts but only " +
                                std::to_string(state.vision_quat.size()) + " vision quaternion layers");
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < state.language.size(); ++i) {
    auto [a, b] = vision_slot_inputs(state.language[i], fhat);
    out.push_back(quaternion_mix(state.vision_quat[i], config.pattern, config.use_quat, a, b));
  }
  return out;
}

// ----------------------------------------------------------------------- LoRA

std::pair<Tensor, Tensor> cross_modal_update(const Tensor& lambda_l, const Tensor& lambda_v, const Tensor& mix) {
  if (lambda_l.shape() != lambda_v.shape() || lambda_l.rank() != 1) {
    throw ShapeError("cross_modal_update: diagonals " + shape_string(lambda_l.shape()) + " and " +
                     shape_string(lambda_v.shape()) + " differ");
  }
  if (mix.shape() != Shape{2, 2}) throw ShapeError("cross-modal matrix must be [2, 2], got " + shape_string(mix.shape()));
  const std::size_t v = lambda_l.numel();
  Tensor mixed = matmul(mix, concat({reshape(lambda_l, {1, v}), reshape(lambda_v, {1, v})}, 0));
  return {reshape(slice(mixed, 0, 0, 1), {v}), reshape(slice(mixed, 0, 1, 2), {v})};
}

Tensor shift_operator(const Tensor& beta, const Tensor& lambda_hat, const Tensor& alpha) {
  return matmul(mul(beta, lambda_hat), alpha);
}

Tensor lora_shift(const Tensor& e, const Tensor& e_prev, const Tensor& beta, const Tensor& lambda_hat,
                  const Tensor& alpha) {
  if (e_prev.shape().back() != alpha.dim(1) || beta.dim(1) != alpha.dim(0) || lambda_hat.numel() != alpha.dim(0)) {
    throw ShapeError("lora_shift: beta " + shape_string(beta.shape()) + ", lambda " + shape_string(lambda_hat.shape()) +
                     ", alpha " + shape_string(alpha.shape()) + " do not chain over " + shape_string(e_prev.shape()));
  }
  Tensor shift = matmul(mul(matmul(e_prev, alpha, true), lambda_hat), beta, true);
  if (shift.shape() != e.shape()) {
    throw ShapeError("lora_shift: shift " + shape_string(shift.shape()) + " does not match " + shape_string(e.shape()));
  }
  return add(e, shift);
}

// ---------------------------------------------------------------- propagation

namespace {

void check_depth(std::size_t k, std::size_t m) {
  if (k >= m) {
    throw std::invalid_argument("prompt depth " + std::to_string(k) + " must be below encoder depth " +
                                std::to_string(m));
  }
}

}  // namespace

Propagated propagate_language(const TextEncoder& text, const Tensor& e1, std::span<const Tensor> prompts,
                              std::size_t pool_index, const LoraAdapter* lora, std::span<const Tensor> lambda_hat) {
  const std::size_t m = text.depth(), k = prompts.size();
  check_depth(k, m);
  if (e1.rank() != 3) throw ShapeError("language input must be [N, L, d], got " + shape_string(e1.shape()));
  const std::size_t n = e1.dim(0), base = e1.dim(1);
  if (pool_index >= base) throw std::out_of_range("pool index outside the language sequence");

  Propagated out;
  Tensor x = text.add_positions(e1);
  Tensor carried;
  for (std::size_t i = 0; i < m; ++i) {
    Tensor input = x;
    if (i < k) {
      input = concat({x, tile(prompts[i], n)}, 1);
    } else if (carried.defined()) {
      input = concat({x, carried}, 1);
    }
    out.lengths.push_back(input.dim(1));
    Tensor y = text.layer(i).forward(input);
    Tensor e = y;
    if (input.dim(1) > base) {
      e = slice(y, 1, 0, base);
      carried = slice(y, 1, base, input.dim(1));
    }
    if (lora && i >= 1) {
      const auto& br = lora->language.at(i - 1);
      e = lora_shift(e, x, br.beta, lambda_hat[i - 1], br.alpha);
    }
    x = e;
  }
  out.embedding = text.head(reshape(slice(x, 1, pool_index, pool_index + 1), {n, x.dim(2)}));
  return out;
}

Propagated propagate_vision(const VisionEncoder& vision, const VisionEncoder::BaseEmbedding& base,
                            std::span<const Tensor> prompts, const LoraAdapter* lora,
                            std::span<const Tensor> lambda_hat) {
  const std::size_t m = vision.depth(), k = prompts.size();
  check_depth(k, m);
  const std::size_t batch = base.patches.dim(0), np = base.patches.dim(1), len = 1 + np;

  Propagated out;
  Tensor x = concat({base.cls, base.patches}, 1);
  Tensor carried;
  for (std::size_t i = 0; i < m; ++i) {
    Tensor input = x;
    if (i < k) {
      if (prompts[i].rank() != 3 || prompts[i].dim(0) != batch) {
        throw ShapeError("vision prompts must be [B, n, d], got " + shape_string(prompts[i].shape()));
      }
      input = concat({x, prompts[i]}, 1);
    } else if (carried.defined()) {
      input = concat({x, carried}, 1);
    }
    out.lengths.push_back(input.dim(1));
    Tensor y = vision.layer(i).forward(input);
    Tensor e = y;
    if (input.dim(1) > len) {
      e = slice(y, 1, 0, len);
      carried = slice(y, 1, len, input.dim(1));
    }
    // Only the class token is read after the last layer.
    if (lora && i >= 1 && i + 1 < m) {
      const auto& br = lora->vision.at(i - 1);
      Tensor patches = lora_shift(slice(e, 1, 1, len), slice(x, 1, 1, len), br.beta, lambda_hat[i - 1], br.alpha);
      e = concat({slice(e, 1, 0, 1), patches}, 1);
    }
    x = e;
  }
  out.embedding = vision.head(reshape(slice(x, 1, 0, 1), {batch, x.dim(2)}));
  return out;
}

// ------------------------------------------------------------- classification

Tensor similarity_logits(const Tensor& image_emb, const Tensor& text_emb, std::size_t classes, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (classes == 0) throw std::invalid_argument("need at least one class");
  const std::size_t batch = image_emb.dim(0);
  if (text_emb.rank() != 2 || text_emb.dim(0) != batch * classes || text_emb.dim(1) != image_emb.dim(1)) {
    throw ShapeError("text embeddings " + shape_string(text_emb.shape()) + " do not pair with images " +
                     shape_string(image_emb.shape()) + " over " + std::to_string(classes) + " classes");
  }
  for (const Tensor* t : {&image_emb, &text_emb}) {
    const std::size_t w = t->dim(1);
    auto v = t->values();
    for (std::size_t r = 0; r < t->dim(0); ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < w; ++j) sq += v[r * w + j] * v[r * w + j];
      if (sq == 0.0) throw std::domain_error("classify: zero-norm embedding at row " + std::to_string(r));
    }
  }
  Tensor sims = cosine_similarity(repeat_rows(image_emb, classes), text_emb);
  return scale(reshape(sims, {batch, classes}), 1.0 / temperature);
}

Tensor classify(const Tensor& image_emb, const Tensor& text_emb, std::size_t classes, double temperature) {
  return softmax(similarity_logits(image_emb, text_emb, classes, temperature));
}

Tensor contrastive_loss(const Tensor& probabilities, std::span<const std::size_t> labels) {
  return nll(log(probabilities), labels);
}

// -------------------------------------------------------------------- model

ImageBatch prepare_images(const Backbone& backbone, std::span<const Image> images) {
  return {patchify(images, backbone.config.patch_size), backbone.domain.encode_domain(images)};
}

ImageBatch select(const ImageBatch& batch, std::span<const std::size_t> indices) {
  const Shape& ps = batch.patches.shape();
  const std::size_t n = batch.size();
  Tensor patches = reshape(index_select(reshape(batch.patches, {n, ps[1] * ps[2]}), indices), {indices.size(), ps[1], ps[2]});
  return {patches, index_select(batch.domain_features, indices)};
}

GdplModel::GdplModel(const Backbone& backbone, GdplConfig config, PromptState prompts, LoraAdapter lora)
    : backbone_(&backbone), config_(std::move(config)), prompts_(std::move(prompts)), lora_(std::move(lora)) {
  validate(config_, backbone.config.depth);
}

GdplModel GdplModel::init(const Backbone& backbone, const GdplConfig& config, Rng& rng) {
  validate(config, backbone.config.depth);
  PromptState prompts = PromptState::init(config, backbone.config.width, backbone.domain.feature_width(), rng);
  LoraAdapter lora = LoraAdapter::init(backbone.config.depth, backbone.config.width, config.lora_rank, rng);
  return GdplModel(backbone, config, std::move(prompts), std::move(lora));
}

std::pair<std::vector<Tensor>, std::vector<Tensor>> GdplModel::updated_lambdas() const {
  std::vector<Tensor> l, v;
  for (std::size_t i = 0; i < lora_.language.size(); ++i) {
    auto [a, b] = cross_modal_update(lora_.language[i].lambda, lora_.vision[i].lambda, lora_.mix);
    l.push_back(a);
    v.push_back(b);
  }
  return {l, v};
}

ForwardResult GdplModel::forward(const ImageBatch& batch, std::span<const std::size_t> classes,
                                 const ForwardOptions& options) const {
  if (classes.empty()) throw std::invalid_argument("forward: no candidate classes");
  if (options.training && !options.noise) throw std::invalid_argument("forward: training needs a noise stream");
  const Backbone& bb = *backbone_;
  ForwardResult out;

  Tensor fhat = prompts_.projection.forward(batch.domain_features);
  require_finite(fhat, "projected domain features");
  Tensor noise = options.training ? context_noise(fhat, config_.n_ctx, *options.noise) : Tensor();
  auto [ctx_a, ctx_b] = language_slot_inputs(prompts_, fhat, noise);
  Tensor context = quaternion_mix(prompts_.text_quat, config_.pattern, config_.use_quat, ctx_a, ctx_b);
  out.slot_cosines.push_back(mean_abs_cosine(ctx_a, ctx_b).value_or(std::nan("")));

  std::vector<Tensor> vision_prompts;
  for (std::size_t i = 0; i < config_.depth; ++i) {
    auto [a, b] = vision_slot_inputs(prompts_.language[i], fhat);
    vision_prompts.push_back(quaternion_mix(prompts_.vision_quat[i], config_.pattern, config_.use_quat, a, b));
    out.slot_cosines.push_back(mean_abs_cosine(a, b).value_or(std::nan("")));
  }

  std::vector<Tensor> lambda_l, lambda_v;
  if (config_.use_lora) std::tie(lambda_l, lambda_v) = updated_lambdas();
  const LoraAdapter* lora = config_.use_lora ? &lora_ : nullptr;

  Tensor e1 = build_language_input(context, category_embeddings(bb.text, classes));
  const std::size_t pool = config_.n_ctx + Vocabulary::category_tokens(classes[0]).size() - 1;
  Propagated text = propagate_language(bb.text, e1, prompts_.language, pool, lora, lambda_l);
  Propagated image = propagate_vision(bb.vision, bb.vision.embed(batch.patches), vision_prompts, lora, lambda_v);

  out.logits = similarity_logits(image.embedding, text.embedding, classes.size(), config_.temperature);
  out.probabilities = softmax(out.logits);
  return out;
}

std::vector<Tensor> GdplModel::trainable_parameters() const {
  std::vector<Tensor> out = prompts_.parameters(config_);
  if (config_.use_lora) {
    const LoraBranch& last = lora_.vision.back();
    for (const auto& p : lora_.parameters()) {
      if (p.node() != last.beta.node() && p.node() != last.alpha.node()) out.push_back(p);
    }
  }
  return out;
}

std::optional<double> mean_abs_cosine(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mean_abs_cosine: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t w = a.shape().back(), rows = a.numel() / w;
  auto va = a.values(), vb = b.values();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      dot += va[r * w + j] * vb[r * w + j];
      na += va[r * w + j] * va[r * w + j];
      nb += vb[r * w + j] * vb[r * w + j];
    }
    if (na == 0.0 || nb == 0.0) continue;
    total += std::abs(dot) / std::sqrt(na * nb);
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return total / static_cast<double>(counted);
}

}  // namespace gdpl
