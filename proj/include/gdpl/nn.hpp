#pragma once

#include <string>
#include <vector>

#include "gdpl/rng.hpp"
#include "gdpl/tensor.hpp"

namespace gdpl {

/// y = x W + b with W stored as [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  static Linear init(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  /// All-zero weights and bias.
  static Linear zeros(const std::string& name, std::size_t in, std::size_t out, bool with_bias = true);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Tensor>& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(const std::string& name, std::size_t width);
  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Tensor>& out) const;
};

/// Pre-norm transformer block over token sequences [N, L, d]:
///   x + attn(ln1(x)), then + mlp(ln2(.)) with a GELU MLP.
struct TransformerBlock {
  LayerNorm ln1;
  Linear qkv;
  Linear attn_out;
  LayerNorm ln2;
  Linear fc1;
  Linear fc2;
  std::size_t heads = 1;

  static TransformerBlock init(const std::string& name, std::size_t width, std::size_t heads, std::size_t mlp_ratio,
                               Rng& rng);
  std::size_t width() const { return qkv.in_features(); }
  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Tensor>& out) const;
};

/// Sets requires_grad on every tensor of a parameter list.
void set_trainable(const std::vector<Tensor>& params, bool trainable);

}  // namespace gdpl
