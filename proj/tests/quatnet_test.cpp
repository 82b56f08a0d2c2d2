#include <gtest/gtest.h>

#include <cmath>

#include "gdpl/gradcheck.hpp"
#include "gdpl/ops.hpp"
#include "gdpl/quaternion.hpp"

using namespace gdpl;

namespace {

Quaternion random_quaternion(Rng& rng) {
  return {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
}

double max_abs_diff(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  double m = 0.0;
  for (int i = 0; i < 4; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad, const std::string& name) {
  auto t = Tensor::from_data(shape, rng.normal_vector(shape_numel(shape), 1.0), requires_grad);
  t.set_name(name);
  return t;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

/// Dense real equivalent of a quaternion layer: builds the [4 d_in, 4 d_out]
/// matrix from the four weight blocks following the left-multiplication
/// layout and applies it to the stacked input [r | x | y | z].
std::vector<double> dense_equivalent(const QuatLinear& layer, const QuatFeature& q) {
  const std::size_t din = layer.d_in(), dout = layer.d_out();
  const std::size_t rows = q.r().numel() / din;
  // layout[out][in] = (weight block, sign) as in the matrix display.
  const int block[4][4] = {{0, 1, 2, 3}, {1, 0, 3, 2}, {2, 3, 0, 1}, {3, 2, 1, 0}};
  const int sign[4][4] = {{1, -1, -1, -1}, {1, 1, -1, 1}, {1, 1, 1, -1}, {1, -1, 1, 1}};
  std::vector<double> dense(4 * din * 4 * dout, 0.0);
  for (int bo = 0; bo < 4; ++bo) {
    for (int bi = 0; bi < 4; ++bi) {
      auto w = layer.weight[block[bo][bi]].values();
      for (std::size_t i = 0; i < din; ++i) {
        for (std::size_t o = 0; o < dout; ++o) {
          dense[(bi * din + i) * (4 * dout) + bo * dout + o] = sign[bo][bi] * w[i * dout + o];
        }
      }
    }
  }
  std::vector<double> out(rows * 4 * dout, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t bi = 0; bi < 4; ++bi) {
      auto in = q.blocks[bi].values();
      for (std::size_t i = 0; i < din; ++i) {
        const double v = in[r * din + i];
        for (std::size_t c = 0; c < 4 * dout; ++c) out[r * 4 * dout + c] += v * dense[(bi * din + i) * (4 * dout) + c];
      }
    }
  }
  if (layer.activation == Activation::Relu) {
    for (double& v : out) v = std::max(v, 0.0);
  }
  return out;
}

}  // namespace

TEST(Quaternion, IdentityIsNeutral) {
  const Quaternion q{0.3, -1.2, 2.5, 0.7};
  EXPECT_EQ(hamilton_product({1, 0, 0, 0}, q), q);
  EXPECT_EQ(hamilton_product(q, {1, 0, 0, 0}), q);
}

TEST(Quaternion, BasisProductsAndNonCommutativity) {
  const Quaternion i{0, 1, 0, 0}, j{0, 0, 1, 0}, k{0, 0, 0, 1};
  EXPECT_EQ(hamilton_product(i, j), k);
  EXPECT_EQ(hamilton_product(j, i), (Quaternion{0, 0, 0, -1}));
  EXPECT_NE(hamilton_product(i, j), hamilton_product(j, i));
  EXPECT_EQ(hamilton_product(i, i), (Quaternion{-1, 0, 0, 0}));
}

TEST(Quaternion, ProductMatchesMatrixRepresentation) {
  Rng rng(1);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const auto q1 = random_quaternion(rng), q2 = random_quaternion(rng);
    worst = std::max(worst, max_abs_diff(hamilton_product(q1, q2).as_array(),
                                         matvec4(quaternion_to_matrix(q1), q2.as_array())));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Quaternion, MatrixOfIdentityAndFirstColumn) {
  const auto eye = quaternion_to_matrix({1, 0, 0, 0});
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) EXPECT_EQ(eye[a][b], a == b ? 1.0 : 0.0);
  }
  const Quaternion q{0.5, -2.0, 3.0, 4.5};
  const auto m = quaternion_to_matrix(q);
  EXPECT_EQ(m[0][0], q.r);
  EXPECT_EQ(m[1][0], q.x);
  EXPECT_EQ(m[2][0], q.y);
  EXPECT_EQ(m[3][0], q.z);
}

TEST(Quaternion, AlgebraicProperties) {
  Rng rng(5);
  for (int n = 0; n < 1000; ++n) {
    const auto q1 = random_quaternion(rng), q2 = random_quaternion(rng), q3 = random_quaternion(rng);
    const auto left = hamilton_product(hamilton_product(q1, q2), q3);
    const auto right = hamilton_product(q1, hamilton_product(q2, q3));
    EXPECT_LT(max_abs_diff(left.as_array(), right.as_array()), 1e-12);
    EXPECT_NEAR(hamilton_product(q1, q2).norm(), q1.norm() * q2.norm(), 1e-10);
    const auto prod = matmul4(quaternion_to_matrix(q1), quaternion_to_matrix(q2));
    const auto direct = quaternion_to_matrix(hamilton_product(q1, q2));
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) EXPECT_NEAR(prod[a][b], direct[a][b], 1e-12);
    }
  }
}

TEST(QuatFeature, ElementwiseProductMatchesScalarQuaternions) {
  Rng rng(9);
  auto make = [&] {
    return make_quat_feature(random_tensor({2, 3}, rng, false, "r"), random_tensor({2, 3}, rng, false, "i"),
                             random_tensor({2, 3}, rng, false, "j"), random_tensor({2, 3}, rng, false, "k"));
  };
  const auto a = make(), b = make();
  const auto c = hamilton_product(a, b);
  for (std::size_t e = 0; e < 6; ++e) {
    const Quaternion qa{a.r().values()[e], a.i().values()[e], a.j().values()[e], a.k().values()[e]};
    const Quaternion qb{b.r().values()[e], b.i().values()[e], b.j().values()[e], b.k().values()[e]};
    const auto expected = hamilton_product(qa, qb).as_array();
    for (int comp = 0; comp < 4; ++comp) EXPECT_NEAR(c.blocks[comp].values()[e], expected[comp], 1e-14);
  }
  auto narrow = make_quat_feature(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), Tensor::zeros({2, 2}),
                                  Tensor::zeros({2, 2}));
  EXPECT_THROW(hamilton_product(a, narrow), ShapeError);
  EXPECT_THROW(make_quat_feature(Tensor::zeros({2, 2}), Tensor::zeros({2, 3}), Tensor::zeros({2, 2}),
                                 Tensor::zeros({2, 2})),
               ShapeError);
}

TEST(SlotPattern, ParsesAllSixPatterns) {
  const auto all = SlotPattern::all();
  const char* names[] = {"[a,b,*,*]", "[*,*,a,b]", "[a,*,*,b]", "[a,*,b,*]", "[*,a,*,b]", "[*,a,b,*]"};
  for (int p = 0; p < 6; ++p) EXPECT_EQ(all[p].to_string(), names[p]);
  EXPECT_EQ(SlotPattern::parse("ab**"), SlotPattern());
  EXPECT_THROW(SlotPattern::parse("[a,a,*,*]"), std::invalid_argument);
  EXPECT_THROW(SlotPattern::parse("[a,b,*]"), std::invalid_argument);
  EXPECT_THROW(SlotPattern::parse("[a,b,c,*]"), std::invalid_argument);
}

TEST(PackSlots, PlacesInputsPerPattern) {
  auto a = Tensor::from_data({1, 2}, {1, 2});
  auto b = Tensor::from_data({1, 2}, {3, 4});
  auto q = pack_slots(a, b, SlotPattern::parse("[a,b,*,*]"));
  EXPECT_EQ(to_vec(q.r()), to_vec(a));
  EXPECT_EQ(to_vec(q.i()), to_vec(b));
  EXPECT_EQ(to_vec(q.j()), (std::vector<double>{0, 0}));
  EXPECT_EQ(to_vec(q.k()), (std::vector<double>{0, 0}));
  auto t = pack_slots(a, b, SlotPattern::parse("[*,*,a,b]"));
  EXPECT_EQ(to_vec(t.r()), (std::vector<double>{0, 0}));
  EXPECT_EQ(to_vec(t.i()), (std::vector<double>{0, 0}));
  EXPECT_EQ(to_vec(t.j()), to_vec(a));
  EXPECT_EQ(to_vec(t.k()), to_vec(b));
  auto zero = pack_slots(Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), SlotPattern());
  for (const auto& block : zero.blocks) EXPECT_EQ(to_vec(block), (std::vector<double>{0, 0}));
  EXPECT_THROW(pack_slots(a, Tensor::zeros({2, 2}), SlotPattern()), ShapeError);
}

TEST(QuatLinear, IdentityWeightsPassNonnegativeInput) {
  auto layer = QuatLinear::identity("q", 3);
  auto a = Tensor::from_data({2, 3}, {0.5, 1, 2, 0, 3, 4});
  auto b = Tensor::from_data({2, 3}, {1, 0.25, 0, 2, 2, 1});
  auto out = layer.forward(pack_slots(a, b, SlotPattern()));
  EXPECT_EQ(to_vec(out.r()), to_vec(a));
  EXPECT_EQ(to_vec(out.i()), to_vec(b));
  EXPECT_EQ(to_vec(extract_context(out)), to_vec(a));
}

TEST(QuatLinear, ZeroInputGivesZeroOutput) {
  Rng rng(4);
  auto layer = QuatLinear::init("q", 3, 5, rng);
  auto out = layer.forward(pack_slots(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), SlotPattern()));
  EXPECT_EQ(out.shape(), (Shape{2, 5}));
  for (const auto& block : out.blocks) {
    for (double v : block.values()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_THROW(layer.forward(pack_slots(Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), SlotPattern())), ShapeError);
}

TEST(QuatLinear, InitScaleIsBounded) {
  Rng rng(8);
  auto layer = QuatLinear::init("q", 16, 4, rng);
  const double bound = 1.0 / std::sqrt(64.0);
  for (const auto& w : layer.weight) {
    ASSERT_EQ(w.shape(), (Shape{16, 4}));
    for (double v : w.values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(QuatLinear, MatchesDenseRealEquivalent) {
  Rng rng(12);
  for (Activation act : {Activation::Identity, Activation::Relu}) {
    auto layer = QuatLinear::init("q", 5, 3, rng, act);
    auto q = make_quat_feature(random_tensor({4, 5}, rng, false, "r"), random_tensor({4, 5}, rng, false, "i"),
                               random_tensor({4, 5}, rng, false, "j"), random_tensor({4, 5}, rng, false, "k"));
    auto out = layer.forward(q);
    const auto dense = dense_equivalent(layer, q);
    for (std::size_t r = 0; r < 4; ++r) {
      for (int comp = 0; comp < 4; ++comp) {
        for (std::size_t o = 0; o < 3; ++o) {
          EXPECT_NEAR(out.blocks[comp].values()[r * 3 + o], dense[r * 12 + comp * 3 + o], 1e-10);
        }
      }
    }
  }
}

TEST(QuatLinear, PackedInputAgreesWithDenseOracleForEveryPattern) {
  Rng rng(13);
  auto layer = QuatLinear::init("q", 4, 4, rng, Activation::Identity);
  auto a = random_tensor({2, 4}, rng, false, "a");
  auto b = random_tensor({2, 4}, rng, false, "b");
  for (const auto& pattern : SlotPattern::all()) {
    auto q = pack_slots(a, b, pattern);
    auto out = layer.forward(q);
    const auto dense = dense_equivalent(layer, q);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t o = 0; o < 4; ++o) EXPECT_NEAR(out.r().values()[r * 4 + o], dense[r * 16 + o], 1e-10);
    }
  }
}

TEST(QuatLinear, GradientsPassFiniteDifferenceCheck) {
  Rng rng(21);
  auto layer = QuatLinear::init("q", 4, 3, rng, Activation::Identity);
  auto q = make_quat_feature(random_tensor({3, 4}, rng, true, "in.r"), random_tensor({3, 4}, rng, true, "in.i"),
                             random_tensor({3, 4}, rng, true, "in.j"), random_tensor({3, 4}, rng, true, "in.k"));
  Rng probe_rng(77);
  std::array<Tensor, 4> probes;
  for (auto& p : probes) p = Tensor::from_data({3, 3}, probe_rng.normal_vector(9, 1.0));
  auto loss = [&] {
    auto out = layer.forward(q);
    Tensor total = sum_all(mul(out.blocks[0], probes[0]));
    for (int c = 1; c < 4; ++c) total = add(total, sum_all(mul(out.blocks[c], probes[c])));
    return total;
  };
  auto params = layer.parameters();
  for (const auto& block : q.blocks) params.push_back(block);
  const auto result = finite_diff_check(loss, params);
  EXPECT_LT(result.max_relative_error, 1e-4) << result.worst_parameter;
  for (const auto& w : layer.weight) {
    ASSERT_TRUE(w.has_grad());
  }

  layer.activation = Activation::Relu;
  const auto relu_result = finite_diff_check(loss, params);
  EXPECT_LT(relu_result.max_relative_error, 1e-4) << relu_result.worst_parameter;
}

TEST(ExtractContext, ReturnsRealComponent) {
  auto r = Tensor::from_data({1, 2}, {1, 2});
  auto q = make_quat_feature(r, Tensor::full({1, 2}, 3), Tensor::full({1, 2}, 4), Tensor::full({1, 2}, 5));
  EXPECT_EQ(to_vec(extract_context(q)), (std::vector<double>{1, 2}));
  auto zero = make_quat_feature(Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), Tensor::zeros({1, 2}),
                                Tensor::zeros({1, 2}));
  EXPECT_EQ(to_vec(extract_context(zero)), (std::vector<double>{0, 0}));
}
