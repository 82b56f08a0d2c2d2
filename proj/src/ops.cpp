#include "gdpl/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

namespace gdpl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string both(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " and " + shape_string(b.shape());
}

/// Gradient buffer of an input, allocated on first use; null when the input
/// does not require grad.
double* grad_buffer(const Tensor& t) {
  detail::Node* n = t.node();
  if (!n->requires_grad) return nullptr;
  if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
  return n->grad.data();
}

template <class Backward>
Tensor finish(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, Backward&& rule) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  detail::Node* node = out.node();
  node->leaf = false;
  node->requires_grad = true;
  for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
  node->backward = [node, rule = std::forward<Backward>(rule)]() { rule(node->grad); };
  return out;
}

/// Number of leading-batch repeats when `b` broadcasts over `a`.
std::size_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + both(a, b));
  return a.numel() / b.numel();
}

std::size_t last_dim(const Tensor& a) { return a.shape().back(); }

Shape drop_last(const Shape& s) {
  if (s.size() <= 1) return {1};
  return Shape(s.begin(), s.end() - 1);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (b.rank() != 2 || a.rank() < 1) throw ShapeError("matmul: incompatible shapes " + both(a, b));
  const std::size_t k = last_dim(a);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t m = transpose_b ? b.dim(0) : b.dim(1);
  if (bk != k) throw ShapeError("matmul: incompatible shapes " + both(a, b));
  const std::size_t rows = a.numel() / k;

  std::vector<double> out(rows * m);
  ConstMap A(a.values().data(), rows, k);
  ConstMap B(b.values().data(), b.dim(0), b.dim(1));
  MutMap C(out.data(), rows, m);
  if (transpose_b) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A * B;
  }
  Shape shape = a.shape();
  shape.back() = m;
  return finish(std::move(shape), std::move(out), {a, b}, [a, b, rows, k, m, transpose_b](const std::vector<double>& g) {
    ConstMap G(g.data(), rows, m);
    ConstMap A(a.values().data(), rows, k);
    ConstMap B(b.values().data(), b.dim(0), b.dim(1));
    if (double* ga = grad_buffer(a)) {
      MutMap GA(ga, rows, k);
      if (transpose_b) {
        GA.noalias() += G * B;
      } else {
        GA.noalias() += G * B.transpose();
      }
    }
    if (double* gb = grad_buffer(b)) {
      MutMap GB(gb, b.dim(0), b.dim(1));
      if (transpose_b) {
        GB.noalias() += G.transpose() * A;
      } else {
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: incompatible shapes " + both(a, b));
  }
  const std::size_t batch = a.dim(0), n = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t m = transpose_b ? b.dim(1) : b.dim(2);
  if (bk != k) throw ShapeError("bmm: incompatible shapes " + both(a, b));
  const std::size_t b_rows = b.dim(1), b_cols = b.dim(2);

  std::vector<double> out(batch * n * m);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMap A(a.values().data() + i * n * k, n, k);
    ConstMap B(b.values().data() + i * b_rows * b_cols, b_rows, b_cols);
    MutMap C(out.data() + i * n * m, n, m);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  return finish({batch, n, m}, std::move(out), {a, b},
                [a, b, batch, n, k, m, b_rows, b_cols, transpose_b](const std::vector<double>& g) {
                  double* ga = grad_buffer(a);
                  double* gb = grad_buffer(b);
                  for (std::size_t i = 0; i < batch; ++i) {
                    ConstMap G(g.data() + i * n * m, n, m);
                    ConstMap A(a.values().data() + i * n * k, n, k);
                    ConstMap B(b.values().data() + i * b_rows * b_cols, b_rows, b_cols);
                    if (ga) {
                      MutMap GA(ga + i * n * k, n, k);
                      if (transpose_b) {
                        GA.noalias() += G * B;
                      } else {
                        GA.noalias() += G * B.transpose();
                      }
                    }
                    if (gb) {
                      MutMap GB(gb + i * b_rows * b_cols, b_rows, b_cols);
                      if (transpose_b) {
                        GB.noalias() += G.transpose() * A;
                      } else {
                        GB.noalias() += A.transpose() * G;
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "add");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
  }
  return finish(a.shape(), std::move(out), {a, b}, [a, b, outer, inner](const std::vector<double>& g) {
    if (double* ga = grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = grad_buffer(b)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gb[i] += g[o * inner + i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "sub");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] -= bv[i];
  }
  return finish(a.shape(), std::move(out), {a, b}, [a, b, outer, inner](const std::vector<double>& g) {
    if (double* ga = grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = grad_buffer(b)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gb[i] -= g[o * inner + i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "mul");
  const std::size_t inner = b.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = av[o * inner + i] * bv[i];
  }
  return finish(a.shape(), std::move(out), {a, b}, [a, b, outer, inner](const std::vector<double>& g) {
    auto av = a.values();
    auto bv = b.values();
    double* ga = grad_buffer(a);
    double* gb = grad_buffer(b);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t j = o * inner + i;
        if (ga) ga[j] += g[j] * bv[i];
        if (gb) gb[i] += g[j] * av[j];
      }
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= factor;
  return finish(a.shape(), std::move(out), {a}, [a, factor](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return finish(std::move(shape), std::move(out), {a}, [a](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::size_t total = 0;
  std::vector<std::size_t> chunk;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) throw ShapeError("concat: incompatible shapes " + both(parts[0], p));
    total += s[axis];
    chunk.push_back(s[axis] * inner);
  }
  Shape shape = first;
  shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * chunk[p], chunk[p], out.begin() + o * row + offset);
    }
    offset += chunk[p];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish(std::move(shape), std::move(out), inputs,
                [inputs, chunk, outer, row](const std::vector<double>& g) {
                  std::size_t offset = 0;
                  for (std::size_t p = 0; p < inputs.size(); ++p) {
                    if (double* gp = grad_buffer(inputs[p])) {
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < chunk[p]; ++i) gp[o * chunk[p] + i] += g[o * row + offset + i];
                      }
                    }
                    offset += chunk[p];
                  }
                });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t src_row = s[axis] * inner;
  const std::size_t dst_row = (end - begin) * inner;
  const std::size_t offset = begin * inner;
  std::vector<double> out(outer * dst_row);
  auto v = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + o * src_row + offset, dst_row, out.begin() + o * dst_row);
  }
  Shape shape = s;
  shape[axis] = end - begin;
  return finish(std::move(shape), std::move(out), {a}, [a, outer, src_row, dst_row, offset](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < dst_row; ++i) ga[o * src_row + offset + i] += g[o * dst_row + i];
    }
  });
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.numel() / rows;
  std::vector<double> out(indices.size() * width);
  auto v = a.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw ShapeError("index_select: index " + std::to_string(indices[i]) + " out of range for shape " +
                       shape_string(a.shape()));
    }
    std::copy_n(v.begin() + indices[i] * width, width, out.begin() + i * width);
  }
  Shape shape = a.shape();
  shape[0] = indices.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(std::move(shape), std::move(out), {a}, [a, idx, width](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) ga[idx[i] * width + j] += g[i * width + j];
    }
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t width = last_dim(a);
  const std::size_t rows = a.numel() / width;
  auto v = a.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += v[r * width + j];
    out[r] = s / static_cast<double>(width);
  }
  return finish(drop_last(a.shape()), std::move(out), {a}, [a, rows, width](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    const double inv = 1.0 / static_cast<double>(width);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += g[r] * inv;
    }
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return finish({1}, {s}, {a}, [a](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t width = last_dim(a);
  if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(width) + "], got " + both(gain, bias));
  }
  const std::size_t rows = a.numel() / width;
  auto v = a.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> xhat(v.size()), inv_std(rows), out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += x[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) {
      xhat[r * width + j] = (x[j] - mu) * inv_std[r];
      out[r * width + j] = xhat[r * width + j] * gv[j] + bv[j];
    }
  }
  return finish(a.shape(), std::move(out), {a, gain, bias},
                [a, gain, bias, rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    const std::vector<double>& g) {
                  auto gv = gain.values();
                  double* ga = grad_buffer(a);
                  double* gg = grad_buffer(gain);
                  double* gb = grad_buffer(bias);
                  const double n = static_cast<double>(width);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* dy = g.data() + r * width;
                    const double* xh = xhat.data() + r * width;
                    if (gg || gb) {
                      for (std::size_t j = 0; j < width; ++j) {
                        if (gg) gg[j] += dy[j] * xh[j];
                        if (gb) gb[j] += dy[j];
                      }
                    }
                    if (ga) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < width; ++j) {
                        const double d = dy[j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                      }
                      mean_d /= n;
                      mean_dx /= n;
                      for (std::size_t j = 0; j < width; ++j) {
                        const double d = dy[j] * gv[j];
                        ga[r * width + j] += inv_std[r] * (d - mean_d - xh[j] * mean_dx);
                      }
                    }
                  }
                });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  return finish(a.shape(), std::move(out), {a}, [a](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    auto v = a.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > 0.0) ga[i] += g[i];
    }
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  return finish(a.shape(), std::move(out), {a}, [a](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    auto v = a.values();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = v[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) {
    if (!(x > 0.0)) throw std::domain_error("log: non-positive input");
    x = std::log(x);
  }
  return finish(a.shape(), std::move(out), {a}, [a](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    auto v = a.values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / v[i];
  });
}

Tensor softmax(const Tensor& a) {
  const std::size_t width = last_dim(a);
  const std::size_t rows = a.numel() / width;
  auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * width;
    double* y = out.data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= s;
  }
  std::vector<double> saved = out;
  return finish(a.shape(), std::move(out), {a}, [a, rows, width, y = std::move(saved)](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * y[r * width + j];
      for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += y[r * width + j] * (g[r * width + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t width = last_dim(a);
  const std::size_t rows = a.numel() / width;
  auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = x[j] - lse;
  }
  std::vector<double> saved = out;
  return finish(a.shape(), std::move(out), {a}, [a, rows, width, y = std::move(saved)](const std::vector<double>& g) {
    double* ga = grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < width; ++j) total += g[r * width + j];
      for (std::size_t j = 0; j < width; ++j) {
        ga[r * width + j] += g[r * width + j] - std::exp(y[r * width + j]) * total;
      }
    }
  });
}

Tensor normalize(const Tensor& a, double eps) {
  const std::size_t width = last_dim(a);
  const std::size_t rows = a.numel() / width;
  auto v = a.values();
  std::vector<double> out(v.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += v[r * width + j] * v[r * width + j];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = v[r * width + j] / norms[r];
  }
  std::vector<double> saved = out;
  return finish(a.shape(), std::move(out), {a},
                [a, rows, width, y = std::move(saved), norms = std::move(norms)](const std::vector<double>& g) {
                  double* ga = grad_buffer(a);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * y[r * width + j];
                    for (std::size_t j = 0; j < width; ++j) {
                      ga[r * width + j] += (g[r * width + j] - y[r * width + j] * dot) / norms[r];
                    }
                  }
                });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  if (a.shape() != b.shape()) throw ShapeError("cosine_similarity: incompatible shapes " + both(a, b));
  const std::size_t width = last_dim(a);
  const std::size_t rows = a.numel() / width;
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(rows), na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double x = av[r * width + j], y = bv[r * width + j];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    na[r] = std::max(std::sqrt(sa), eps);
    nb[r] = std::max(std::sqrt(sb), eps);
    out[r] = dot / (na[r] * nb[r]);
  }
  std::vector<double> saved = out;
  return finish(drop_last(a.shape()), std::move(out), {a, b},
                [a, b, rows, width, c = std::move(saved), na = std::move(na), nb = std::move(nb)](
                    const std::vector<double>& g) {
                  auto av = a.values();
                  auto bv = b.values();
                  double* ga = grad_buffer(a);
                  double* gb = grad_buffer(b);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double inv = 1.0 / (na[r] * nb[r]);
                    for (std::size_t j = 0; j < width; ++j) {
                      const double x = av[r * width + j], y = bv[r * width + j];
                      if (ga) ga[r * width + j] += g[r] * (y * inv - c[r] * x / (na[r] * na[r]));
                      if (gb) gb[r * width + j] += g[r] * (x * inv - c[r] * y / (nb[r] * nb[r]));
                    }
                  }
                });
}

Tensor nll(const Tensor& logp, std::span<const std::size_t> labels) {
  if (logp.rank() != 2 || logp.dim(0) != labels.size()) {
    throw ShapeError("nll: log-probabilities " + shape_string(logp.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logp.dim(0), c = logp.dim(1);
  auto v = logp.values();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw std::out_of_range("nll: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    s -= v[i * c + labels[i]];
  }
  std::vector<std::size_t> saved(labels.begin(), labels.end());
  return finish({1}, {s / static_cast<double>(n)}, {logp}, [logp, n, c, saved](const std::vector<double>& g) {
    double* gl = grad_buffer(logp);
    for (std::size_t i = 0; i < n; ++i) gl[i * c + saved[i]] -= g[0] / static_cast<double>(n);
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: incompatible shapes " + both(a, b));
  auto av = a.values();
  auto bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  return finish({1}, {s / n}, {a, b}, [a, b, n](const std::vector<double>& g) {
    auto av = a.values();
    auto bv = b.values();
    double* ga = grad_buffer(a);
    double* gb = grad_buffer(b);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = 2.0 * (av[i] - bv[i]) / n * g[0];
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

}  // namespace gdpl
