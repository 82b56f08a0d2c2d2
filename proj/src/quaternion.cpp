#include "gdpl/quaternion.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "gdpl/ops.hpp"

namespace gdpl {

double Quaternion::norm() const { return std::sqrt(r * r + x * x + y * y + z * z); }

Quaternion hamilton_product(const Quaternion& a, const Quaternion& b) {
  return {
      a.r * b.r - a.x * b.x - a.y * b.y - a.z * b.z,
      a.r * b.x + a.x * b.r + a.y * b.z - a.z * b.y,
      a.r * b.y - a.x * b.z + a.y * b.r + a.z * b.x,
      a.r * b.z + a.x * b.y - a.y * b.x + a.z * b.r,
  };
}

Matrix4 quaternion_to_matrix(const Quaternion& q) {
  return {{
      {q.r, -q.x, -q.y, -q.z},
      {q.x, q.r, -q.z, q.y},
      {q.y, q.z, q.r, -q.x},
      {q.z, -q.y, q.x, q.r},
  }};
}

Matrix4 matmul4(const Matrix4& a, const Matrix4& b) {
  Matrix4 c{};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
    }
  }
  return c;
}

std::array<double, 4> matvec4(const Matrix4& m, const std::array<double, 4>& v) {
  std::array<double, 4> out{};
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 4; ++k) out[i] += m[i][k] * v[k];
  }
  return out;
}

QuatFeature make_quat_feature(Tensor r, Tensor i, Tensor j, Tensor k) {
  const Shape& s = r.shape();
  if (i.shape() != s || j.shape() != s || k.shape() != s) {
    throw ShapeError("quaternion blocks must share a shape, got " + shape_string(s) + ", " + shape_string(i.shape()) +
                     ", " + shape_string(j.shape()) + ", " + shape_string(k.shape()));
  }
  return QuatFeature{{std::move(r), std::move(i), std::move(j), std::move(k)}};
}

QuatFeature hamilton_product(const QuatFeature& a, const QuatFeature& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("hamilton_product: width mismatch " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const auto& [r1, x1, y1, z1] = a.blocks;
  const auto& [r2, x2, y2, z2] = b.blocks;
  Tensor r = sub(sub(sub(mul(r1, r2), mul(x1, x2)), mul(y1, y2)), mul(z1, z2));
  Tensor x = sub(add(add(mul(r1, x2), mul(x1, r2)), mul(y1, z2)), mul(z1, y2));
  Tensor y = add(add(sub(mul(r1, y2), mul(x1, z2)), mul(y1, r2)), mul(z1, x2));
  Tensor z = add(sub(add(mul(r1, z2), mul(x1, y2)), mul(y1, x2)), mul(z1, r2));
  return make_quat_feature(std::move(r), std::move(x), std::move(y), std::move(z));
}

SlotPattern::SlotPattern() : slots_{Slot::A, Slot::B, Slot::Zero, Slot::Zero} {}

SlotPattern::SlotPattern(std::array<Slot, 4> slots) : slots_(slots) {
  const auto count = [&](Slot s) { return std::count(slots_.begin(), slots_.end(), s); };
  if (count(Slot::A) != 1 || count(Slot::B) != 1 || count(Slot::Zero) != 2) {
    throw std::invalid_argument("slot pattern must hold a and b once each and two zero slots");
  }
}

SlotPattern SlotPattern::parse(std::string_view text) {
  std::array<Slot, 4> slots{};
  std::size_t n = 0;
  for (char c : text) {
    if (c == '[' || c == ']' || c == ',' || c == ' ') continue;
    if (n == 4) throw std::invalid_argument("slot pattern '" + std::string(text) + "' has more than four slots");
    switch (c) {
      case 'a': slots[n++] = Slot::A; break;
      case 'b': slots[n++] = Slot::B; break;
      case '*': slots[n++] = Slot::Zero; break;
      default: throw std::invalid_argument("slot pattern '" + std::string(text) + "' contains '" + c + "'");
    }
  }
  if (n != 4) throw std::invalid_argument("slot pattern '" + std::string(text) + "' needs four slots");
  return SlotPattern(slots);
}

std::array<SlotPattern, 6> SlotPattern::all() {
  return {parse("[a,b,*,*]"), parse("[*,*,a,b]"), parse("[a,*,*,b]"),
          parse("[a,*,b,*]"), parse("[*,a,*,b]"), parse("[*,a,b,*]")};
}

std::size_t SlotPattern::slot_of(Slot which) const {
  return static_cast<std::size_t>(std::find(slots_.begin(), slots_.end(), which) - slots_.begin());
}

std::string SlotPattern::to_string() const {
  std::string out = "[";
  for (std::size_t c = 0; c < 4; ++c) {
    if (c) out += ',';
    out += slots_[c] == Slot::A ? 'a' : slots_[c] == Slot::B ? 'b' : '*';
  }
  return out + "]";
}

QuatFeature pack_slots(const Tensor& a, const Tensor& b, const SlotPattern& pattern) {
  if (a.shape() != b.shape()) {
    throw ShapeError("pack_slots: shape mismatch " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  QuatFeature q;
  for (std::size_t c = 0; c < 4; ++c) {
    switch (pattern[c]) {
      case Slot::A: q.blocks[c] = a; break;
      case Slot::B: q.blocks[c] = b; break;
      case Slot::Zero: q.blocks[c] = Tensor::zeros(a.shape()); break;
    }
  }
  return q;
}

QuatLinear QuatLinear::init(const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng, Activation act) {
  QuatLinear layer;
  layer.activation = act;
  const double bound = 1.0 / std::sqrt(4.0 * static_cast<double>(d_in));
  const char* tags[4] = {"r", "i", "j", "k"};
  for (std::size_t c = 0; c < 4; ++c) {
    layer.weight[c] = Tensor::parameter(name + ".w" + tags[c], {d_in, d_out}, rng.uniform_vector(d_in * d_out, bound));
  }
  return layer;
}

QuatLinear QuatLinear::identity(const std::string& name, std::size_t width, Activation act) {
  QuatLinear layer;
  layer.activation = act;
  const char* tags[4] = {"r", "i", "j", "k"};
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<double> w(width * width, 0.0);
    if (c == 0) {
      for (std::size_t d = 0; d < width; ++d) w[d * width + d] = 1.0;
    }
    layer.weight[c] = Tensor::parameter(name + ".w" + tags[c], {width, width}, std::move(w));
  }
  return layer;
}

namespace {

bool is_constant_zero(const Tensor& t) {
  if (t.requires_grad()) return false;
  auto v = t.values();
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// Signed sum of terms, skipping absent ones.
Tensor combine(const std::array<std::optional<Tensor>, 4>& terms, const std::array<int, 4>& signs, const Shape& shape) {
  std::optional<Tensor> acc;
  for (std::size_t t = 0; t < 4; ++t) {
    if (!terms[t]) continue;
    if (!acc) {
      acc = signs[t] > 0 ? *terms[t] : scale(*terms[t], -1.0);
    } else {
      acc = signs[t] > 0 ? add(*acc, *terms[t]) : sub(*acc, *terms[t]);
    }
  }
  return acc ? *acc : Tensor::zeros(shape);
}

}  // namespace

QuatFeature QuatLinear::forward(const QuatFeature& q) const {
  if (q.width() != d_in()) {
    throw ShapeError("quat_linear_forward: input width " + std::to_string(q.width()) + " does not match layer input " +
                     std::to_string(d_in()));
  }
  // product[c][w] = component c of the input times weight block w.
  std::array<std::array<std::optional<Tensor>, 4>, 4> product;
  for (std::size_t c = 0; c < 4; ++c) {
    if (is_constant_zero(q.blocks[c])) continue;
    for (std::size_t w = 0; w < 4; ++w) product[c][w] = matmul(q.blocks[c], weight[w]);
  }
  Shape out_shape = q.shape();
  out_shape.back() = d_out();
  enum { R = 0, X = 1, Y = 2, Z = 3 };
  // Hamilton expansion with W on the left and Q on the right.
  Tensor r = combine({product[R][R], product[X][X], product[Y][Y], product[Z][Z]}, {+1, -1, -1, -1}, out_shape);
  Tensor x = combine({product[X][R], product[R][X], product[Z][Y], product[Y][Z]}, {+1, +1, +1, -1}, out_shape);
  Tensor y = combine({product[Y][R], product[Z][X], product[R][Y], product[X][Z]}, {+1, -1, +1, +1}, out_shape);
  Tensor z = combine({product[Z][R], product[Y][X], product[X][Y], product[R][Z]}, {+1, +1, -1, +1}, out_shape);
  QuatFeature out = make_quat_feature(std::move(r), std::move(x), std::move(y), std::move(z));
  if (activation == Activation::Relu) {
    for (auto& block : out.blocks) block = relu(block);
  }
  return out;
}

Tensor extract_context(const QuatFeature& q) { return q.r(); }

}  // namespace gdpl
