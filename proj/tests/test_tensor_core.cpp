#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "vtr/errors.hpp"
#include "vtr/gradcheck.hpp"
#include "vtr/gradient_suite.hpp"
#include "vtr/ops.hpp"

using namespace vtr;
using vtr::testing::random_tensor;

namespace {

Tensor leaf(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST(Tensor, ConstructionChecksValueCount) {
  EXPECT_THROW(Tensor(Shape{2, 2}, {1, 2, 3}), ShapeError);
  Tensor t(Shape{2, 3});
  EXPECT_EQ(t.size(), 6u);
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, CopiesShareStorageAndCloneDoesNot) {
  Tensor a(Shape{2}, {1, 2});
  Tensor b = a;
  Tensor c = a.clone();
  b.mutable_values()[0] = 9;
  EXPECT_EQ(a[0], 9);
  EXPECT_EQ(c[0], 1);
  EXPECT_TRUE(a.shares_storage(b));
  EXPECT_FALSE(a.shares_storage(c));
}

TEST(Matmul, IdentityAndHandCase) {
  Tape tape;
  Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
  Tensor x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(vtr::testing::bitwise_equal(matmul(tape, eye, x), x));
  Tensor r = matmul(tape, Tensor(Shape{1, 2}, {1, 2}), Tensor(Shape{2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape, Tensor(Shape{2, 3}), Tensor(Shape{4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("4"), std::string::npos);
  }
}

TEST(Matmul, SumGradientMatchesThreePointDifferences) {
  SeededRng rng(5);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  GradCheckOptions o{1e-6, 1e-7, 1e-8, Stencil::kThreePoint};
  auto r = grad_check([&](Tape& t) { return sum(t, matmul(t, a, b)); }, {{"a", a}, {"b", b}}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Linear, EqualsMatmulNtPlusBias) {
  SeededRng rng(1);
  Tensor x = random_tensor({3, 4}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({5}, rng);
  Tape tape;
  Tensor y = linear(tape, x, w, b);
  Tensor z = matmul_nt(tape, x, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y.at(i, j), z.at(i, j) + b[j], 1e-14);
  Tensor nb = linear(tape, x, w, Tensor());
  EXPECT_TRUE(vtr::testing::bitwise_equal(nb, z));
}

TEST(Softmax, HandValuesAndStability) {
  Tape tape;
  Tensor s = softmax_lastdim(tape, Tensor(Shape{3}, {1, 2, 3}));
  EXPECT_NEAR(s[0], 0.09003057317038046, 1e-12);
  EXPECT_NEAR(s[1], 0.24472847105479764, 1e-12);
  EXPECT_NEAR(s[2], 0.6652409557748219, 1e-12);
  Tensor u = softmax_lastdim(tape, Tensor(Shape{3}, {0, 0, 0}));
  for (double v : u.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor big = softmax_lastdim(tape, Tensor(Shape{2}, {1000, 0}));
  EXPECT_TRUE(big.all_finite());
  EXPECT_EQ(big[0], 1.0);
  EXPECT_LT(big[1], 1e-300);
  EXPECT_THROW(softmax_lastdim(tape, Tensor()), ShapeError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  SeededRng rng(2);
  Tape tape;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, 5.0);
    Tensor shifted = x.clone();
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 7; ++c) shifted.mutable_values()[r * 7 + c] += 3.5 * static_cast<double>(r) - 40;
    Tensor a = softmax_lastdim(tape, x), b = softmax_lastdim(tape, shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 7; ++c) total += a.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    EXPECT_LE(vtr::testing::max_abs_diff(a.values(), b.values()), 1e-10);
  }
}

TEST(LayerNorm, HandCases) {
  Tape tape;
  Tensor g(Shape{2}, {1, 1}), b(Shape{2}, {0, 0});
  Tensor y = layer_norm(tape, Tensor(Shape{1, 2}, {1, 3}), g, b, 0.0 + 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-10);
  EXPECT_NEAR(y[1], 1.0, 1e-10);
  Tensor g3(Shape{3}, {2, 2, 2}), b3(Shape{3}, {0, 0, 0});
  Tensor c = layer_norm(tape, Tensor(Shape{1, 3}, {4, 4, 4}), g3, b3);
  for (double v : c.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(layer_norm(tape, Tensor(Shape{1, 3}), g, b), ShapeError);
}

TEST(LayerNorm, GradientOnRandomSlice) {
  SeededRng rng(4);
  Tensor x = random_tensor({2, 4}, rng), g = random_tensor({4}, rng), b = random_tensor({4}, rng);
  Tensor w = random_tensor({2, 4}, rng);
  GradCheckOptions o{1e-4, 1e-6, 1e-8, Stencil::kThreePoint};
  auto r = grad_check([&](Tape& t) { return sum(t, mul(t, layer_norm(t, x, g, b), w)); },
                      {{"x", x}, {"gamma", g}, {"beta", b}}, o);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Gelu, ExactErfForm) {
  Tape tape;
  Tensor y = gelu(tape, Tensor(Shape{4}, {0.0, 1.0, 40.0, -40.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.8413447460685429, 1e-15);
  EXPECT_NEAR(y[2], 40.0, 1e-12);
  EXPECT_NEAR(y[3], 0.0, 1e-12);
}

TEST(L2Normalize, UnitRowsAndZeroRowFails) {
  Tape tape;
  Tensor y = l2_normalize_rows(tape, Tensor(Shape{1, 2}, {3, 4}));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  EXPECT_THROW(l2_normalize_rows(tape, Tensor(Shape{2, 2}, {1, 0, 0, 0})), DegeneracyError);
}

TEST(RowOps, SliceConcatGatherMean) {
  Tape tape;
  Tensor x(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor s = slice_rows(tape, x, 1, 3);
  EXPECT_EQ(std::vector<double>(s.values().begin(), s.values().end()), (std::vector<double>{3, 4, 5, 6}));
  const Tensor parts[] = {x, x};
  EXPECT_EQ(concat_rows(tape, parts).shape(), (Shape{6, 2}));
  const std::uint32_t idx[] = {2, 2, 0};
  Tensor g = gather_rows(tape, x, idx);
  EXPECT_EQ(g.at(0, 0), 5);
  EXPECT_EQ(g.at(2, 1), 2);
  Tensor m = mean_rows(tape, x);
  EXPECT_EQ(m.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(m[0], 3.0);
  EXPECT_DOUBLE_EQ(m[1], 4.0);
  EXPECT_THROW(slice_rows(tape, x, 2, 5), ShapeError);
}

TEST(GroupAttention, MembershipRules) {
  SeededRng rng(9);
  Tensor q = random_tensor({4, 4}, rng), k = random_tensor({4, 4}, rng), v = random_tensor({4, 4}, rng);
  Tape tape;
  AttentionGroups solo;
  const std::uint32_t only0[] = {0};
  solo.add(only0);
  Tensor out = group_attention(tape, q, k, v, solo, 2);
  // A one-token group returns its own value row; tokens in no group get zeros.
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(out.at(0, c), v.at(0, c), 1e-15);
    EXPECT_EQ(out.at(3, c), 0.0);
  }
  AttentionGroups ab, a, b;
  const std::uint32_t g1[] = {0, 1, 2}, g2[] = {0, 3};
  ab.add(g1);
  ab.add(g2);
  a.add(g1);
  b.add(g2);
  Tensor both = group_attention(tape, q, k, v, ab, 2);
  Tensor first = group_attention(tape, q, k, v, a, 2);
  Tensor second = group_attention(tape, q, k, v, b, 2);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(both.at(0, c), 0.5 * (first.at(0, c) + second.at(0, c)), 1e-14);
    EXPECT_NEAR(both.at(1, c), first.at(1, c), 1e-14);
    EXPECT_NEAR(both.at(3, c), second.at(3, c), 1e-14);
  }
}

TEST(GroupAttention, RowsAreConvexCombinations) {
  SeededRng rng(10);
  Tensor q = random_tensor({6, 4}, rng, 3), k = random_tensor({6, 4}, rng, 3), v = random_tensor({6, 4}, rng);
  AttentionGroups g;
  const std::uint32_t all[] = {0, 1, 2, 3, 4, 5};
  g.add(all);
  AttentionStats stats;
  Tape tape;
  group_attention(tape, q, k, v, g, 2, &stats);
  EXPECT_TRUE(stats.non_negative);
  EXPECT_LE(stats.max_row_sum_error, 1e-12);
  EXPECT_EQ(stats.score_count, 2u * 6u * 6u);
}

TEST(Backward, SumAndQuadraticForm) {
  Tensor x = leaf({2, 3}, {1, -2, 3, 0.5, 7, -1});
  {
    Tape tape;
    tape.backward(sum(tape, x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  }
  x.zero_grad();
  Tape tape;
  tape.backward(scale(tape, sum(tape, mul(tape, x, x)), 0.5));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x[i]);
}

TEST(Backward, RepeatedBackwardDoublesLeafGradients) {
  Tensor x = leaf({3}, {1, 2, 3});
  Tape tape;
  const Tensor loss = sum(tape, mul(tape, x, x));
  tape.backward(loss);
  const std::vector<double> once(x.grad().begin(), x.grad().end());
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * once[i]);
}

TEST(Backward, NonScalarLossAndUntrackedLossAreContractErrors) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  EXPECT_THROW(tape.backward(scale(tape, x, 2.0)), ContractError);
  Tensor c(Shape{1}, {3});
  EXPECT_THROW(tape.backward(c), ContractError);
}

TEST(Backward, InferenceTapeRecordsNothing) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape = Tape::inference();
  sum(tape, mul(tape, x, x));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, LinearityOverRandomGraphs) {
  SeededRng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    Tensor w = random_tensor({5, 4}, rng);
    const double a = rng.normal(), b = rng.normal();
    auto f = [&](Tape& t) { return sum(t, gelu(t, linear(t, x, w, Tensor()))); };
    auto g = [&](Tape& t) { return sum(t, softmax_lastdim(t, mul(t, x, x))); };
    auto grad_of = [&](auto fn) {
      x.zero_grad();
      Tape t;
      t.backward(fn(t));
      return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto gf = grad_of(f), gg = grad_of(g);
    const auto combined = grad_of([&](Tape& t) { return add(t, scale(t, f(t), a), scale(t, g(t), b)); });
    for (std::size_t i = 0; i < combined.size(); ++i) EXPECT_NEAR(combined[i], a * gf[i] + b * gg[i], 1e-12);
  }
}

TEST(Determinism, IdenticalSeedsGiveBitwiseIdenticalResults) {
  auto run = [] {
    SeededRng rng(77);
    Tensor x = random_tensor({4, 6}, rng), w = random_tensor({3, 6}, rng);
    Tape t;
    return l2_normalize_rows(t, gelu(t, linear(t, x, w, Tensor())));
  };
  EXPECT_TRUE(vtr::testing::bitwise_equal(run(), run()));
}

TEST(GradCheck, SquareAtThree) {
  Tensor x(Shape{1}, {3.0});
  GradCheckOptions o{1e-6, 1e-9, 1e-8, Stencil::kThreePoint};
  auto r = grad_check([&](Tape& t) { return sum(t, mul(t, x, x)); }, {{"x", x}}, o);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_NEAR(r.entries[0].numeric, 6.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.entries[0].analytic, 6.0);
}

TEST(GradCheck, DetectsAWrongBackwardRule) {
  Tensor x(Shape{3}, {1, 2, 3});
  auto bad_double = [&](Tape& t) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < 3; ++i) y.mutable_values()[i] = 2 * x[i];
    if (t.tracks({&x})) {
      t.record(y, [sx = x.storage(), sy = y.storage()] {
        sx->ensure_grad();
        for (std::size_t i = 0; i < 3; ++i) sx->grad[i] += 3 * sy->grad[i];
      });
    }
    return sum(t, y);
  };
  auto r = grad_check(bad_double, {{"x", x}});
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_rel_error, 1.0 / 3.0, 1e-6);
}

TEST(GradCheck, NonFiniteLossAndBadStepAreRejected) {
  Tensor x(Shape{1}, {0.0});
  auto f = [&](Tape& t) { return scale(t, sum(t, x), std::nan("")); };
  EXPECT_THROW(grad_check(f, {{"x", x}}), NumericError);
  EXPECT_THROW(grad_check([&](Tape& t) { return sum(t, x); }, {{"x", x}}, {0.0}), ContractError);
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.5), 0.5 / 1.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-12), 1e-12 / 1e-8);
}

class OpGradCheck : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradCheck, PassesAtOneInAMillion) {
  const GradCheckReport r = op_gradcheck(GetParam());
  EXPECT_TRUE(r.passed) << GetParam() << " max rel " << r.max_rel_error;
  EXPECT_LE(r.max_rel_error, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradCheck, ::testing::ValuesIn(gradcheck_op_names()),
                         [](const auto& info) { return info.param; });

TEST(OpGradCheck, UnknownOpIsAConfigError) { EXPECT_THROW(op_gradcheck("no_such_op"), ConfigError); }

TEST(Rng, ReproducibleAndForkIndependent) {
  SeededRng a(3), b(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  SeededRng c(3);
  const SeededRng f = c.fork(1);
  EXPECT_EQ(c.counter(), 0u);
  EXPECT_NE(SeededRng(f).next_u64(), SeededRng(3).next_u64());
  EXPECT_EQ(c.fork(1), f);
}

TEST(Rng, RangesAndMoments) {
  SeededRng rng(8);
  double mean = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto r = rng.uniform_range(-2, 2);
    ASSERT_GE(r, -2);
    ASSERT_LE(r, 2);
    ASSERT_LE(std::abs(rng.truncated_normal(0.5)), 1.0);
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 0.03);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.05);
}
