#pragma once

#include <array>
#include <string>
#include <string_view>

#include "gdpl/rng.hpp"
#include "gdpl/tensor.hpp"

namespace gdpl {

/// q = r + x i + y j + z k
struct Quaternion {
  double r = 0.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  std::array<double, 4> as_array() const { return {r, x, y, z}; }
  bool operator==(const Quaternion&) const = default;
};

using Matrix4 = std::array<std::array<double, 4>, 4>;

Quaternion hamilton_product(const Quaternion& q1, const Quaternion& q2);

/// Left-multiplication matrix of q, so that to_matrix(q1) * vec(q2) == vec(q1 (x) q2):
///   [ r -x -y -z ]
///   [ x  r -z  y ]
///   [ y  z  r -x ]
///   [ z -y  x  r ]
Matrix4 quaternion_to_matrix(const Quaternion& q);
Matrix4 matmul4(const Matrix4& a, const Matrix4& b);
std::array<double, 4> matvec4(const Matrix4& m, const std::array<double, 4>& v);

/// Batch of quaternion-valued features stored as four equal-shape real blocks.
struct QuatFeature {
  std::array<Tensor, 4> blocks;  // r, i, j, k

  const Tensor& r() const { return blocks[0]; }
  const Tensor& i() const { return blocks[1]; }
  const Tensor& j() const { return blocks[2]; }
  const Tensor& k() const { return blocks[3]; }
  std::size_t width() const { return blocks[0].shape().back(); }
  const Shape& shape() const { return blocks[0].shape(); }
};

QuatFeature make_quat_feature(Tensor r, Tensor i, Tensor j, Tensor k);

/// Elementwise Hamilton product over the feature width.
QuatFeature hamilton_product(const QuatFeature& q1, const QuatFeature& q2);

enum class Slot { A, B, Zero };

/// Placement of two real inputs a, b and two zero blocks into the four
/// quaternion components, written like "[a,b,*,*]".
class SlotPattern {
 public:
  /// [a,b,*,*]
  SlotPattern();
  explicit SlotPattern(std::array<Slot, 4> slots);

  /// Accepts "[a,b,*,*]" or the compact "ab**".
  static SlotPattern parse(std::string_view text);
  static std::array<SlotPattern, 6> all();

  Slot operator[](std::size_t component) const { return slots_[component]; }
  std::size_t slot_of(Slot which) const;
  std::string to_string() const;
  bool operator==(const SlotPattern&) const = default;

 private:
  std::array<Slot, 4> slots_;
};

QuatFeature pack_slots(const Tensor& a, const Tensor& b, const SlotPattern& pattern);

enum class Activation { Relu, Identity };

/// Quaternion dense layer Q_out = act(W (x) Q). Each weight component is a
/// real [d_in, d_out] block applied on the right of the row-major features.
struct QuatLinear {
  std::array<Tensor, 4> weight;
  Activation activation = Activation::Relu;

  static QuatLinear init(const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng,
                         Activation act = Activation::Relu);
  /// W = (I, 0, 0, 0).
  static QuatLinear identity(const std::string& name, std::size_t width, Activation act = Activation::Relu);

  std::size_t d_in() const { return weight[0].dim(0); }
  std::size_t d_out() const { return weight[0].dim(1); }
  QuatFeature forward(const QuatFeature& q) const;
  std::vector<Tensor> parameters() const { return {weight.begin(), weight.end()}; }
};

/// Real component of a quaternion layer output.
Tensor extract_context(const QuatFeature& q);

}  // namespace gdpl
