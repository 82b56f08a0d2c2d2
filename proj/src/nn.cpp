#include "gdpl/nn.hpp"

#include <cmath>

#include "gdpl/ops.hpp"

namespace gdpl {

Linear Linear::init(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear layer;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  layer.weight = Tensor::parameter(name + ".weight", {in, out}, rng.uniform_vector(in * out, bound));
  if (with_bias) layer.bias = Tensor::parameter(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return layer;
}

Linear Linear::zeros(const std::string& name, std::size_t in, std::size_t out, bool with_bias) {
  Linear layer;
  layer.weight = Tensor::parameter(name + ".weight", {in, out}, std::vector<double>(in * out, 0.0));
  if (with_bias) layer.bias = Tensor::parameter(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return layer;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(std::vector<Tensor>& out) const {
  out.push_back(weight);
  if (bias.defined()) out.push_back(bias);
}

LayerNorm LayerNorm::init(const std::string& name, std::size_t width) {
  return {Tensor::parameter(name + ".gain", {width}, std::vector<double>(width, 1.0)),
          Tensor::parameter(name + ".bias", {width}, std::vector<double>(width, 0.0))};
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(std::vector<Tensor>& out) const {
  out.push_back(gain);
  out.push_back(bias);
}

TransformerBlock TransformerBlock::init(const std::string& name, std::size_t width, std::size_t heads,
                                        std::size_t mlp_ratio, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("transformer width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  TransformerBlock block;
  block.ln1 = LayerNorm::init(name + ".ln1", width);
  block.qkv = Linear::init(name + ".qkv", width, 3 * width, rng);
  block.attn_out = Linear::init(name + ".attn_out", width, width, rng);
  block.ln2 = LayerNorm::init(name + ".ln2", width);
  block.fc1 = Linear::init(name + ".fc1", width, mlp_ratio * width, rng);
  block.fc2 = Linear::init(name + ".fc2", mlp_ratio * width, width, rng);
  block.heads = heads;
  return block;
}

Tensor TransformerBlock::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != width()) {
    throw ShapeError("transformer block of width " + std::to_string(width()) + " got tokens " +
                     shape_string(x.shape()));
  }
  const std::size_t d = width();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor qkv_out = qkv.forward(ln1.forward(x));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor q = slice(qkv_out, 2, h * dh, (h + 1) * dh);
    Tensor k = slice(qkv_out, 2, d + h * dh, d + (h + 1) * dh);
    Tensor v = slice(qkv_out, 2, 2 * d + h * dh, 2 * d + (h + 1) * dh);
    Tensor attn = softmax(scale(bmm(q, k, true), inv_sqrt));
    head_out.push_back(bmm(attn, v));
  }
  Tensor merged = heads == 1 ? head_out[0] : concat(head_out, 2);
  Tensor h1 = add(x, attn_out.forward(merged));
  return add(h1, fc2.forward(gelu(fc1.forward(ln2.forward(h1)))));
}

void TransformerBlock::collect(std::vector<Tensor>& out) const {
  ln1.collect(out);
  qkv.collect(out);
  attn_out.collect(out);
  ln2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

void set_trainable(const std::vector<Tensor>& params, bool trainable) {
  for (auto p : params) p.set_requires_grad(trainable);
}

}  // namespace gdpl
