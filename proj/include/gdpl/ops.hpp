#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gdpl/tensor.hpp"

// Differentiable forward ops. Broadcasting is limited to a right operand whose
// shape equals a trailing suffix of the left operand's shape ("leading batch").

namespace gdpl {

/// a[..., k] x b[k, m] -> [..., m]. With transpose_b, b is [m, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// a[B, n, k] x b[B, k, m] -> [B, n, m]. With transpose_b, b is [B, m, k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows of `a` along axis 0 picked by `indices`; repeats allowed (this is also
/// how a single row is broadcast over a batch).
Tensor index_select(const Tensor& a, std::span<const std::size_t> indices);

/// Mean over the last axis; the axis is dropped (a rank-1 input yields shape [1]).
Tensor mean(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

/// Normalizes over the last axis, then applies gain and bias of shape [width].
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor relu(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
/// Unit-normalizes rows over the last axis; norms are floored at eps.
Tensor normalize(const Tensor& a, double eps = 1e-12);
/// Row-wise cosine similarity over the last axis; the axis is dropped.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

/// Mean of -logp[i, labels[i]] for logp of shape [N, C].
Tensor nll(const Tensor& logp, std::span<const std::size_t> labels);
/// Mean squared error between same-shape tensors.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace gdpl
