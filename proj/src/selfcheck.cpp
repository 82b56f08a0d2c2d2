#include "gdpl/selfcheck.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

#include "gdpl/gradcheck.hpp"
#include "gdpl/nn.hpp"
#include "gdpl/ops.hpp"

namespace gdpl {

namespace {

void jitter(const std::vector<Tensor>& params, Rng& rng, double sd) {
  for (auto p : params) {
    for (double& v : p.mutable_values()) v += rng.normal(0.0, sd);
  }
}

void activate_lora(LoraAdapter& lora, Rng& rng) {
  for (auto* side : {&lora.language, &lora.vision}) {
    for (auto& b : *side) jitter({b.alpha, b.lambda}, rng, 0.3);
  }
  jitter({lora.mix}, rng, 0.3);
}

ImageBatch micro_batch(const Backbone& backbone, std::size_t n, Rng& rng) {
  std::vector<Image> images;
  for (std::size_t i = 0; i < n; ++i) images.push_back(Image{8, 8, rng.normal_vector(64, 1.0)});
  return prepare_images(backbone, images);
}

GdplConfig micro_gdpl() {
  GdplConfig g;
  g.depth = 1;
  g.lora_rank = 2;
  return g;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

Backbone micro_backbone(std::uint64_t seed, std::size_t depth) {
  EncoderConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.width = 8;
  c.depth = depth;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.embed_dim = 8;
  Rng rng(seed);
  auto vision = VisionEncoder::init(c, rng);
  auto text = TextEncoder::init(c, rng);
  jitter(vision.parameters(), rng, 0.1);
  jitter(text.parameters(), rng, 0.1);
  set_trainable(vision.parameters(), false);
  set_trainable(text.parameters(), false);
  return Backbone{c, std::move(vision), std::move(text), DomainEncoder::seeded_random(c, seed + 1)};
}

std::vector<CheckResult> gradient_checks(std::uint64_t seed, std::size_t depth) {
  const Backbone backbone = micro_backbone(seed, depth);
  Rng data_rng(derive_seed(seed, 1));
  const ImageBatch batch = micro_batch(backbone, 2, data_rng);
  const std::vector<std::size_t> classes{0, 1, 2};
  const std::vector<std::size_t> labels{0, 2};

  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (int variant = 0; variant < 3; ++variant) {
    GdplConfig g = micro_gdpl();
    g.use_quat = variant != 1;
    g.use_lora = variant != 2;
    Rng rng(derive_seed(seed, 2));
    auto model = GdplModel::init(backbone, g, rng);
    activate_lora(model.lora(), rng);
    auto loss_fn = [&] {
      Rng noise(derive_seed(seed, 3));
      return contrastive_loss(model.forward(batch, classes, {true, &noise}).probabilities, labels);
    };
    for (const auto& p : model.trainable_parameters()) {
      const double err = finite_diff_check(loss_fn, {p}).max_relative_error;
      if (!worst.count(p.name())) order.push_back(p.name());
      worst[p.name()] = std::max(worst[p.name()], err);
    }
  }
  std::vector<CheckResult> out;
  for (const auto& name : order) out.push_back({"grad " + name, worst[name], 1e-4});
  return out;
}

std::vector<CheckResult> oracle_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;

  double product = 0.0, homomorphism = 0.0, norm = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Quaternion a{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    Quaternion b{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const Quaternion ab = hamilton_product(a, b);
    product = std::max(product, max_abs_diff(ab.as_array(), matvec4(quaternion_to_matrix(a), b.as_array())));
    const Matrix4 lhs = matmul4(quaternion_to_matrix(a), quaternion_to_matrix(b)), rhs = quaternion_to_matrix(ab);
    for (int r = 0; r < 4; ++r) homomorphism = std::max(homomorphism, max_abs_diff(lhs[r], rhs[r]));
    norm = std::max(norm, std::abs(ab.norm() - a.norm() * b.norm()));
  }
  out.push_back({"hamilton product vs matrix form", product, 1e-12});
  out.push_back({"M(q1)M(q2) = M(q1 q2)", homomorphism, 1e-10});
  out.push_back({"|q1 q2| = |q1||q2|", norm, 1e-10});

  double tail = 0.0;
  for (std::size_t v = 1; v <= 4; ++v) {
    const std::size_t d = 16;
    Tensor beta = Tensor::from_data({d, v}, rng.normal_vector(d * v, 1.0));
    Tensor lam = Tensor::from_data({v}, rng.normal_vector(v, 1.0));
    Tensor alpha = Tensor::from_data({v, d}, rng.normal_vector(v * d, 1.0));
    Tensor op = shift_operator(beta, lam, alpha);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(op.values().data(), d, d);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    for (Eigen::Index i = static_cast<Eigen::Index>(v); i < svd.singularValues().size(); ++i) {
      tail = std::max(tail, svd.singularValues()(i));
    }
  }
  out.push_back({"shift operator singular values beyond V", tail, 1e-10});

  const Backbone backbone = micro_backbone(seed, 3);
  const ImageBatch batch = micro_batch(backbone, 2, rng);
  const std::vector<std::size_t> classes{0, 1, 2};
  GdplConfig with = micro_gdpl(), without = micro_gdpl();
  without.use_lora = false;
  Rng r1(derive_seed(seed, 2)), r2(derive_seed(seed, 2));
  const auto a = GdplModel::init(backbone, with, r1);
  const auto b = GdplModel::init(backbone, without, r2);
  {
    NoGradGuard guard;
    out.push_back({"LoRA at initialization vs LoRA disabled",
                   max_abs_diff(a.forward(batch, classes).logits.values(), b.forward(batch, classes).logits.values()),
                   1e-12});
  }

  Tensor ll = Tensor::from_data({4}, rng.normal_vector(4, 1.0)), lv = Tensor::from_data({4}, rng.normal_vector(4, 1.0));
  auto [hl, hv] = cross_modal_update(ll, lv, Tensor::from_data({2, 2}, {1, 0, 0, 1}));
  out.push_back({"identity cross-modal update", std::max(max_abs_diff(hl.values(), ll.values()),
                                                         max_abs_diff(hv.values(), lv.values())),
                 0.0, true});
  return out;
}

}  // namespace gdpl
