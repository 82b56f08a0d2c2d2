#include "gdpl/encoders.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "gdpl/ops.hpp"

namespace gdpl {

// ------------------------------------------------------------------ vocabulary

std::size_t Vocabulary::class_token(std::size_t class_id) {
  if (class_id >= kMaxClasses) throw std::out_of_range("class id " + std::to_string(class_id) + " has no token");
  return kClassBase + class_id;
}

std::vector<std::size_t> Vocabulary::category_tokens(std::size_t class_id) {
  return {kA, kPhoto, kOf, class_token(class_id)};
}

std::vector<std::size_t> Vocabulary::caption(std::size_t class_id, std::size_t filler1, std::size_t filler2) {
  if (filler1 >= kFillerCount || filler2 >= kFillerCount) throw std::out_of_range("filler index out of range");
  std::vector<std::size_t> ids{kFillerBase + filler1, kFillerBase + filler2};
  auto tail = category_tokens(class_id);
  ids.insert(ids.end(), tail.begin(), tail.end());
  return ids;
}

// -------------------------------------------------------------- vision encoder

VisionEncoder VisionEncoder::init(const EncoderConfig& config, Rng& rng, const std::string& prefix) {
  VisionEncoder enc;
  enc.config_ = config;
  const std::size_t d = config.width;
  enc.patch_embed_ = Linear::init(prefix + ".patch_embed", config.patch_dim(), d, rng);
  enc.cls_token_ = Tensor::parameter(prefix + ".cls", {d}, rng.normal_vector(d, 0.02));
  enc.positions_ = Tensor::parameter(prefix + ".pos", {1 + config.num_patches(), d},
                                     rng.normal_vector((1 + config.num_patches()) * d, 0.02));
  for (std::size_t i = 0; i < config.depth; ++i) {
    enc.blocks_.push_back(
        TransformerBlock::init(prefix + ".block" + std::to_string(i), d, config.heads, config.mlp_ratio, rng));
  }
  enc.ln_post_ = LayerNorm::init(prefix + ".ln_post", d);
  enc.proj_ = Linear::init(prefix + ".proj", d, config.embed_dim, rng, false);
  return enc;
}

VisionEncoder::BaseEmbedding VisionEncoder::embed(const Tensor& patches) const {
  const std::size_t np = config_.num_patches(), d = config_.width;
  if (patches.rank() != 3 || patches.dim(1) != np || patches.dim(2) != config_.patch_dim()) {
    throw ShapeError("vision encoder expects patches [B, " + std::to_string(np) + ", " +
                     std::to_string(config_.patch_dim()) + "], got " + shape_string(patches.shape()));
  }
  const std::size_t batch = patches.dim(0);
  Tensor tokens = add(patch_embed_.forward(patches), slice(positions_, 0, 1, 1 + np));
  Tensor cls = reshape(add(reshape(slice(positions_, 0, 0, 1), {d}), cls_token_), {1, 1, d});
  std::vector<std::size_t> zeros(batch, 0);
  return {tokens, index_select(cls, zeros)};
}

VisionEncoder::BaseEmbedding VisionEncoder::encode_image_base(std::span<const Image> images) const {
  return embed(patchify(images, config_.patch_size));
}

Tensor VisionEncoder::head(const Tensor& cls_state) const { return proj_.forward(ln_post_.forward(cls_state)); }

Tensor VisionEncoder::forward_tokens(std::span<const Image> images) const {
  auto base = encode_image_base(images);
  Tensor x = concat({base.cls, base.patches}, 1);
  for (const auto& block : blocks_) x = block.forward(x);
  return x;
}

Tensor VisionEncoder::encode(std::span<const Image> images) const {
  Tensor x = forward_tokens(images);
  return head(reshape(slice(x, 1, 0, 1), {images.size(), config_.width}));
}

std::vector<Tensor> VisionEncoder::parameters() const {
  std::vector<Tensor> out;
  patch_embed_.collect(out);
  out.push_back(cls_token_);
  out.push_back(positions_);
  for (const auto& block : blocks_) block.collect(out);
  ln_post_.collect(out);
  proj_.collect(out);
  return out;
}

// ---------------------------------------------------------------- text encoder

TextEncoder TextEncoder::init(const EncoderConfig& config, Rng& rng, const std::string& prefix) {
  TextEncoder enc;
  enc.config_ = config;
  const std::size_t d = config.width;
  enc.token_embedding_ =
      Tensor::parameter(prefix + ".token_embedding", {config.vocab_size, d}, rng.normal_vector(config.vocab_size * d, 0.02));
  enc.positions_ =
      Tensor::parameter(prefix + ".pos", {config.max_text_len, d}, rng.normal_vector(config.max_text_len * d, 0.01));
  for (std::size_t i = 0; i < config.depth; ++i) {
    enc.blocks_.push_back(
        TransformerBlock::init(prefix + ".block" + std::to_string(i), d, config.heads, config.mlp_ratio, rng));
  }
  enc.ln_final_ = LayerNorm::init(prefix + ".ln_final", d);
  enc.proj_ = Linear::init(prefix + ".proj", d, config.embed_dim, rng, false);
  return enc;
}

Tensor TextEncoder::embed_tokens(std::span<const std::vector<std::size_t>> ids) const {
  if (ids.empty()) throw std::invalid_argument("embed_tokens: no sequences");
  const std::size_t len = ids[0].size();
  std::vector<std::size_t> flat;
  flat.reserve(ids.size() * len);
  for (const auto& seq : ids) {
    if (seq.size() != len) throw ShapeError("embed_tokens: sequences differ in length");
    for (std::size_t id : seq) {
      if (id >= config_.vocab_size) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
      flat.push_back(id);
    }
  }
  return reshape(index_select(token_embedding_, flat), {ids.size(), len, config_.width});
}

Tensor TextEncoder::add_positions(const Tensor& tokens) const {
  const std::size_t len = tokens.dim(1);
  if (len > config_.max_text_len) {
    throw ShapeError("text sequence of length " + std::to_string(len) + " exceeds positional table " +
                     shape_string(positions_.shape()));
  }
  return add(tokens, slice(positions_, 0, 0, len));
}

Tensor TextEncoder::head(const Tensor& pooled) const { return proj_.forward(ln_final_.forward(pooled)); }

Tensor TextEncoder::encode(std::span<const std::vector<std::size_t>> ids) const {
  Tensor x = add_positions(embed_tokens(ids));
  for (const auto& block : blocks_) x = block.forward(x);
  const std::size_t len = x.dim(1);
  return head(reshape(slice(x, 1, len - 1, len), {ids.size(), config_.width}));
}

std::vector<Tensor> TextEncoder::parameters() const {
  std::vector<Tensor> out;
  out.push_back(token_embedding_);
  out.push_back(positions_);
  for (const auto& block : blocks_) block.collect(out);
  ln_final_.collect(out);
  proj_.collect(out);
  return out;
}

// -------------------------------------------------------------- domain encoder

std::string to_string(DomainProvenance provenance) {
  return provenance == DomainProvenance::MaeLite ? "mae-lite" : "seeded-random";
}

DomainEncoder::DomainEncoder(VisionEncoder net, DomainProvenance provenance)
    : net_(std::move(net)), provenance_(provenance) {}

DomainEncoder DomainEncoder::seeded_random(const EncoderConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  DomainEncoder enc(VisionEncoder::init(config, rng, "domain"), DomainProvenance::SeededRandom);
  enc.freeze();
  return enc;
}

void DomainEncoder::freeze() {
  set_trainable(net_.parameters(), false);
  frozen_ = true;
}

namespace {
/// Layer-normed patch tokens of the last block, mean-pooled: [B, width].
std::vector<double> pooled_patch_features(const VisionEncoder& net, const Tensor& tokens) {
  const std::size_t batch = tokens.dim(0), len = tokens.dim(1), d = tokens.dim(2);
  Tensor normed = net.final_norm().forward(slice(tokens, 1, 1, len));
  auto v = normed.values();
  std::vector<double> out(batch * d, 0.0);
  const double inv = 1.0 / static_cast<double>(len - 1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t + 1 < len; ++t) {
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += v[(b * (len - 1) + t) * d + j] * inv;
    }
  }
  return out;
}
}  // namespace

Tensor DomainEncoder::encode_domain(std::span<const Image> images) const {
  if (!frozen_) throw std::logic_error("domain encoder must be frozen before encoding");
  NoGradGuard guard;
  Tensor tokens = net_.forward_tokens(images);
  return Tensor::from_data({images.size(), net_.config().width}, pooled_patch_features(net_, tokens));
}

DomainProjection DomainProjection::init(std::size_t in, std::size_t out, Rng& rng) {
  return {Linear::init("projection.fc1", in, out, rng), Linear::init("projection.fc2", out, out, rng)};
}

Tensor DomainProjection::forward(const Tensor& features) const {
  if (features.shape().back() != first.in_features()) {
    throw ShapeError("domain projection expects width " + std::to_string(first.in_features()) + ", got " +
                     shape_string(features.shape()));
  }
  return second.forward(gelu(first.forward(features)));
}

std::vector<Tensor> DomainProjection::parameters() const {
  std::vector<Tensor> out;
  first.collect(out);
  second.collect(out);
  return out;
}

// ------------------------------------------------------------------- MAE-lite

MaeHead MaeHead::init(const EncoderConfig& config, Rng& rng) {
  return {Tensor::parameter("mae.mask_token", {config.width}, rng.normal_vector(config.width, 0.02)),
          Linear::init("mae.decoder", config.width, config.patch_dim(), rng)};
}

std::vector<Tensor> MaeHead::parameters() const {
  std::vector<Tensor> out{mask_token};
  decoder.collect(out);
  return out;
}

std::vector<double> sample_patch_mask(std::size_t batch, std::size_t num_patches, double ratio, Rng& rng) {
  const std::size_t masked = static_cast<std::size_t>(ratio * static_cast<double>(num_patches) + 0.5);
  std::vector<double> mask(batch * num_patches, 0.0);
  std::vector<std::size_t> order(num_patches);
  for (std::size_t b = 0; b < batch; ++b) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < masked; ++i) mask[b * num_patches + order[i]] = 1.0;
  }
  return mask;
}

Tensor masked_reconstruction_loss(const VisionEncoder& net, const MaeHead& head, const Tensor& patches,
                                  const std::vector<double>& mask) {
  const std::size_t batch = patches.dim(0), np = patches.dim(1), pd = patches.dim(2);
  const std::size_t d = net.config().width;
  if (mask.size() != batch * np) throw ShapeError("mask does not match patches " + shape_string(patches.shape()));
  const bool any_masked = std::any_of(mask.begin(), mask.end(), [](double m) { return m > 0.0; });

  std::vector<double> keep(batch * np * d), hide(batch * np * d), weight(batch * np * pd);
  double count = 0.0;
  for (std::size_t t = 0; t < batch * np; ++t) {
    std::fill_n(keep.begin() + t * d, d, 1.0 - mask[t]);
    std::fill_n(hide.begin() + t * d, d, mask[t]);
    const double w = any_masked ? mask[t] : 1.0;
    std::fill_n(weight.begin() + t * pd, pd, w);
    count += w * static_cast<double>(pd);
  }
  Tensor keep_t = Tensor::from_data({batch, np, d}, std::move(keep));
  Tensor hide_t = Tensor::from_data({batch, np, d}, std::move(hide));

  auto base = net.embed(patches);
  // Masked positions see mask_token + their position; visible ones keep their embedding.
  Tensor pos = slice(net.positions(), 0, 1, 1 + np);
  Tensor tokens = add(add(mul(base.patches, keep_t), mul(hide_t, head.mask_token)), mul(hide_t, pos));
  Tensor x = concat({base.cls, tokens}, 1);
  for (std::size_t i = 0; i < net.depth(); ++i) x = net.layer(i).forward(x);
  Tensor pred = head.decoder.forward(net.final_norm().forward(slice(x, 1, 1, 1 + np)));
  Tensor diff = sub(pred, patches);
  Tensor weighted = mul(mul(diff, diff), Tensor::from_data({batch, np, pd}, std::move(weight)));
  return scale(sum_all(weighted), 1.0 / count);
}

MaeResult mae_lite_pretrain(std::span<const Image> images, const EncoderConfig& config, const MaeConfig& mae) {
  if (images.empty()) throw std::invalid_argument("mae_lite_pretrain: empty image set");
  if (mae.mask_ratio < 0.0 || mae.mask_ratio >= 1.0) {
    throw std::invalid_argument("mae_lite_pretrain: mask ratio must lie in [0, 1)");
  }
  Rng init_rng(derive_seed(mae.seed, 11));
  Rng rng(derive_seed(mae.seed, 12));
  VisionEncoder net = VisionEncoder::init(config, init_rng, "domain");
  MaeHead head = MaeHead::init(config, init_rng);
  auto params = net.parameters();
  for (const auto& p : head.parameters()) params.push_back(p);
  Adam opt(params, {mae.learning_rate});
  const Tensor all_patches = patchify(images, config.patch_size);
  const std::size_t np = config.num_patches(), pd = config.patch_dim();
  const std::size_t batch = std::min(mae.batch, images.size());

  std::vector<double> losses;
  for (std::size_t step = 0; step <= mae.steps; ++step) {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(images.size());
    Tensor patches = reshape(index_select(reshape(all_patches, {images.size(), np * pd}), idx), {batch, np, pd});
    Tensor loss = masked_reconstruction_loss(net, head, patches, sample_patch_mask(batch, np, mae.mask_ratio, rng));
    losses.push_back(loss.item());
    if (step == mae.steps) break;
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  DomainEncoder encoder(std::move(net), DomainProvenance::MaeLite);
  encoder.freeze();
  set_trainable(head.parameters(), false);
  return {std::move(encoder), std::move(head), std::move(losses)};
}

double masked_reconstruction_error(const VisionEncoder& net, const MaeHead& head, std::span<const Image> images,
                                   double mask_ratio, std::uint64_t seed) {
  NoGradGuard guard;
  Rng rng(seed);
  Tensor patches = patchify(images, net.config().patch_size);
  auto mask = sample_patch_mask(images.size(), net.config().num_patches(), mask_ratio, rng);
  return masked_reconstruction_loss(net, head, patches, mask).item();
}

// ------------------------------------------------------------------- CLIP-lite

Tensor symmetric_contrastive_loss(const Tensor& image_emb, const Tensor& text_emb, double temperature) {
  if (image_emb.shape() != text_emb.shape() || image_emb.rank() != 2) {
    throw ShapeError("contrastive pairs must share shape [B, e], got " + shape_string(image_emb.shape()) + " and " +
                     shape_string(text_emb.shape()));
  }
  const std::size_t batch = image_emb.dim(0);
  std::vector<std::size_t> targets(batch);
  std::iota(targets.begin(), targets.end(), 0);
  Tensor v = normalize(image_emb);
  Tensor t = normalize(text_emb);
  Tensor image_to_text = scale(matmul(v, t, true), 1.0 / temperature);
  Tensor text_to_image = scale(matmul(t, v, true), 1.0 / temperature);
  return scale(add(nll(log_softmax(image_to_text), targets), nll(log_softmax(text_to_image), targets)), 0.5);
}

ClipResult clip_lite_pretrain(std::span<const Image> images, std::span<const std::size_t> labels,
                              const EncoderConfig& config, const ClipConfig& clip) {
  if (images.size() != labels.size() || images.empty()) {
    throw std::invalid_argument("clip_lite_pretrain: images and labels must be non-empty and aligned");
  }
  std::vector<std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= by_class.size()) by_class.resize(labels[i] + 1);
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty()) classes.push_back(c);
  }
  if (classes.size() < 2) throw std::invalid_argument("clip_lite_pretrain: need at least 2 classes");

  Rng init_rng(derive_seed(clip.seed, 21));
  Rng rng(derive_seed(clip.seed, 22));
  VisionEncoder vision = VisionEncoder::init(config, init_rng, "vision");
  TextEncoder text = TextEncoder::init(config, init_rng, "text");
  auto params = vision.parameters();
  for (const auto& p : text.parameters()) params.push_back(p);
  Adam opt(params, {clip.learning_rate});

  // Each batch holds distinct classes so captions never collide.
  const std::size_t per_batch = std::min(clip.batch, classes.size());
  std::vector<double> losses;
  for (std::size_t step = 0; step < clip.steps; ++step) {
    rng.shuffle(classes.begin(), classes.end());
    std::vector<Image> batch_images;
    std::vector<std::vector<std::size_t>> captions;
    for (std::size_t b = 0; b < per_batch; ++b) {
      const auto& pool = by_class[classes[b]];
      batch_images.push_back(images[pool[rng.index(pool.size())]]);
      captions.push_back(Vocabulary::caption(classes[b], rng.index(Vocabulary::kFillerCount),
                                             rng.index(Vocabulary::kFillerCount)));
    }
    Tensor loss = symmetric_contrastive_loss(vision.encode(batch_images), text.encode(captions), clip.temperature);
    losses.push_back(loss.item());
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  set_trainable(vision.parameters(), false);
  set_trainable(text.parameters(), false);
  return {std::move(vision), std::move(text), std::move(losses)};
}

Tensor zero_shot_logits(const VisionEncoder& vision, const TextEncoder& text, std::span<const Image> images,
                        std::span<const std::size_t> classes, double temperature) {
  std::vector<std::vector<std::size_t>> captions;
  for (std::size_t c : classes) captions.push_back(Vocabulary::caption(c, 0, 1));
  Tensor v = normalize(vision.encode(images));
  Tensor t = normalize(text.encode(captions));
  return scale(matmul(v, t, true), 1.0 / temperature);
}

}  // namespace gdpl
