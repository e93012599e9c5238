#include <gtest/gtest.h>

#include <cmath>

#include "fame/numerics.hpp"

namespace fame {
namespace {

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix<T> m(r, c);
  for (auto& v : m.values()) v = static_cast<T>(rng.uniform(-scale, scale));
  return m;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto m = Matrix<double>::from_rows({{1.5, -2}, {3, 0.25}});
  EXPECT_EQ(matmul(Matrix<double>::identity(2), m), m);
}

TEST(Matmul, HandExample) {
  auto a = Matrix<double>::from_rows({{1, 2}, {3, 4}});
  auto b = Matrix<double>::from_rows({{5}, {6}});
  EXPECT_EQ(matmul(a, b), Matrix<double>::from_rows({{17}, {39}}));
}

TEST(Matmul, EmptyInnerDimensionGivesZero) {
  Matrix<double> a(1, 0), b(0, 1);
  auto c = matmul(a, b);
  ASSERT_EQ(c.rows(), 1u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix<double>(2, 3), Matrix<double>(2, 3)), DimensionError);
}

TEST(Matmul, AssociativeOnRandomChains) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_matrix<double>(4, 4, rng), b = random_matrix<double>(4, 4, rng),
         c = random_matrix<double>(4, 4, rng);
    auto left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    EXPECT_LE(relative_error(left, right), 1e-5);
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  Rng rng(3);
  auto a = random_matrix<double>(3, 5, rng), b = random_matrix<double>(3, 4, rng),
       c = random_matrix<double>(6, 5, rng);
  EXPECT_LE(relative_error(matmul_at_b(a, b), matmul(transpose(a), b)), 1e-14);
  EXPECT_LE(relative_error(matmul_a_bt(a, c), matmul(a, transpose(c))), 1e-14);
}

TEST(Softmax, SymmetricRow) {
  auto s = softmax_rows(Matrix<double>::from_rows({{0, 0}}));
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
}

TEST(Softmax, ClosedFormValues) {
  // exp(k) / (e + e^2 + e^3), evaluated at 30 digits.
  auto s = softmax_rows(Matrix<double>::from_rows({{1, 2, 3}}));
  EXPECT_NEAR(s(0, 0), 0.0900305731703805, 1e-12);
  EXPECT_NEAR(s(0, 1), 0.2447284710547977, 1e-12);
  EXPECT_NEAR(s(0, 2), 0.6652409557748219, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_matrix<double>(3, 7, rng, 20.0);
    auto s = softmax_rows(m);
    auto shifted = m;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted.values()) v += c;
    auto s2 = softmax_rows(shifted);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double sum = 0;
      for (double v : s.row(i)) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
    for (std::size_t k = 0; k < s.size(); ++k) EXPECT_NEAR(s[k], s2[k], 1e-6);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  auto s = softmax_rows(Matrix<float>::from_rows({{1000.f, 999.f, -1000.f}}));
  EXPECT_TRUE(all_finite(s));
}

TEST(LayerNorm, ConstantInputNormalizesToZero) {
  std::vector<double> x(6, 3.25), g(6, 1.0), b(6, 0.0);
  for (double v : layer_norm<double>(x, g, b, 1e-5)) EXPECT_LE(std::abs(v), 1e-3);
}

TEST(LayerNorm, AlreadyNormalizedInput) {
  std::vector<double> x{1, -1}, g{1, 1}, b{0, 0};
  auto y = layer_norm<double>(x, g, b, 1e-12);
  EXPECT_NEAR(y[0], 1.0, 1e-9);
  EXPECT_NEAR(y[1], -1.0, 1e-9);
}

TEST(LayerNorm, BetaPassesThroughWhenGammaIsZero) {
  std::vector<double> x{4, -7}, g{0, 0}, b{5, 5};
  auto y = layer_norm<double>(x, g, b);
  EXPECT_DOUBLE_EQ(y[0], 5.0);
  EXPECT_DOUBLE_EQ(y[1], 5.0);
}

TEST(LayerNorm, RowFormMatchesVectorForm) {
  Rng rng(5);
  auto x = random_matrix<double>(3, 4, rng);
  auto g = random_matrix<double>(1, 4, rng), b = random_matrix<double>(1, 4, rng);
  auto y = layer_norm_rows(x, g, b, 1e-5, static_cast<LayerNormCache<double>*>(nullptr));
  for (std::size_t i = 0; i < 3; ++i) {
    auto yi = layer_norm<double>(x.row(i), g.values(), b.values(), 1e-5);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y(i, j), yi[j], 1e-14);
  }
}

TEST(Relu, Basics) {
  auto y = relu(Matrix<double>::from_rows({{-1, 0, 2}}));
  EXPECT_EQ(y, Matrix<double>::from_rows({{0, 0, 2}}));
  auto pos = Matrix<double>::from_rows({{0.5, 3}});
  EXPECT_EQ(relu(pos), pos);
  Rng rng(1);
  auto m = random_matrix<double>(4, 4, rng);
  EXPECT_EQ(relu(relu(m)), relu(m));
}

TEST(Dropout, IdentityCases) {
  Rng rng(9);
  auto x = random_matrix<double>(5, 5, rng);
  EXPECT_EQ(dropout(x, 0.0, rng, true), x);
  EXPECT_EQ(dropout(x, 0.7, rng, false), x);
}

TEST(Dropout, RejectsProbabilityOne) {
  Rng rng(9);
  EXPECT_THROW(dropout(Matrix<double>(1, 1), 1.0, rng, true), ParameterError);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  // E[mask * 1] = (1 - p) / (1 - p) = 1; with 1e5 Bernoulli(0.5) draws the
  // standard error of the mean is 0.0032, so +-0.02 is > 6 sigma.
  Rng rng(2024);
  Matrix<double> x(1, 100000, 1.0);
  auto y = dropout(x, 0.5, rng, true);
  double mean = 0;
  for (double v : y.values()) mean += v;
  mean /= static_cast<double>(y.size());
  EXPECT_NEAR(mean, 1.0, 0.02);
}

TEST(Dropout, SameSeedSameMask) {
  Rng a(77), b(77);
  Matrix<double> x(8, 8, 1.0);
  EXPECT_EQ(dropout(x, 0.3, a, true), dropout(x, 0.3, b, true));
}

TEST(CrossEntropy, UniformLogits) {
  std::vector<double> logits(37, 0.25);
  EXPECT_NEAR(cross_entropy_from_logits<double>(logits, 5).loss, std::log(37.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTarget) {
  std::vector<double> logits{0, 0, 40, 0};
  EXPECT_LT(cross_entropy_from_logits<double>(logits, 2).loss, 1e-10);
}

TEST(CrossEntropy, ClosedForm) {
  // -log(e / (e + e^2)) = log(1 + e)
  std::vector<double> logits{1, 2};
  auto ce = cross_entropy_from_logits<double>(logits, 0);
  EXPECT_NEAR(ce.loss, 1.31326168751822, 1e-12);
  EXPECT_NEAR(ce.grad[0] + ce.grad[1], 0.0, 1e-15);
}

TEST(CrossEntropy, OutOfRangeTarget) {
  std::vector<double> logits{1, 2};
  EXPECT_THROW(cross_entropy_from_logits<double>(logits, 2), IndexError);
}

TEST(Adam, ZeroGradientOnlyAdvancesStep) {
  Param<double> p(2, 2, 0.75);
  adam_step(p, AdamConfig{});
  EXPECT_EQ(p.value, Matrix<double>(2, 2, 0.75));
  EXPECT_EQ(p.adam_m, Matrix<double>(2, 2));
  EXPECT_EQ(p.adam_v, Matrix<double>(2, 2));
  EXPECT_EQ(p.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param<double> p(1, 1);
  p.grad[0] = 1.0;
  adam_step(p, AdamConfig{0.001, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p.value[0], -0.001, 1e-6);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Adam, TwoStepScalarTrace) {
  // Reference computed with 30-digit arithmetic: start 0.5, grads +1 then -2.
  Param<double> p(1, 1, 0.5);
  AdamConfig cfg{0.001, 0.9, 0.999, 1e-8};
  p.grad[0] = 1.0;
  adam_step(p, cfg);
  EXPECT_NEAR(p.value[0], 0.49900000001, 1e-12);
  p.grad[0] = -2.0;
  adam_step(p, cfg);
  EXPECT_NEAR(p.value[0], 0.499366103534721, 1e-12);
  EXPECT_EQ(p.step_count, 2u);
}

TEST(FiniteDifference, Quadratic) {
  Param<double> x(1, 1, 3.0);
  auto g = finite_difference_gradient<double>([&] { return x.value[0] * x.value[0]; }, {&x}, 1e-4);
  EXPECT_NEAR(g[0][0], 6.0, 1e-6);
}

TEST(FiniteDifference, ConstantFunction) {
  Param<double> x(2, 3, 1.0);
  auto g = finite_difference_gradient<double>([] { return 4.2; }, {&x}, 1e-4);
  for (double v : g[0].values()) EXPECT_NEAR(v, 0.0, 1e-8);
}

// Two-layer ReLU network with a cross-entropy head, backpropagated with the
// same primitives the models use.
TEST(FiniteDifference, TwoLayerNetMatchesAnalyticGradient) {
  Rng rng(42);
  Matrix<double> x = random_matrix<double>(3, 5, rng);
  std::vector<std::size_t> targets{1, 0, 3};
  Param<double> w1(random_matrix<double>(5, 6, rng)), b1(random_matrix<double>(1, 6, rng)),
      w2(random_matrix<double>(6, 4, rng)), b2(random_matrix<double>(1, 4, rng));
  Param<double> g1(1, 6, 1.0), be1(1, 6);
  auto loss = [&](bool backprop) {
    Matrix<double> pre = matmul(x, w1.value);
    add_row_broadcast(pre, b1.value);
    LayerNormCache<double> ln;
    Matrix<double> normed = layer_norm_rows(pre, g1.value, be1.value, 1e-5, &ln);
    Matrix<double> h = relu(normed);
    Matrix<double> logits = matmul(h, w2.value);
    add_row_broadcast(logits, b2.value);
    Matrix<double> dlogits;
    double l = cross_entropy_rows<double>(logits, targets, backprop ? &dlogits : nullptr);
    if (backprop) {
      add_matmul_at_b(w2.grad, h, dlogits);
      add_column_sums(b2.grad, dlogits);
      Matrix<double> dh = relu_backward(normed, matmul_a_bt(dlogits, w2.value));
      Matrix<double> dpre = layer_norm_rows_backward(dh, ln, g1.value, g1.grad, be1.grad);
      add_matmul_at_b(w1.grad, x, dpre);
      add_column_sums(b1.grad, dpre);
    }
    return l;
  };
  std::vector<Param<double>*> params{&w1, &b1, &w2, &b2, &g1, &be1};
  loss(true);
  auto numeric = finite_difference_gradient<double>([&] { return loss(false); }, params, 1e-4);
  for (std::size_t k = 0; k < params.size(); ++k) {
    EXPECT_LE(relative_error(params[k]->grad, numeric[k]), 1e-4) << "param " << k;
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, KnownSplitmixValue) {
  // First output of splitmix64 seeded with 0.
  Rng r(0);
  EXPECT_EQ(r.next_u64(), 0xE220A8397B1DCDAFull);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(5);
  for (int i = 0; i < 10000; ++i) ASSERT_LT(r.below(7), 7u);
  EXPECT_THROW(r.below(0), ParameterError);
}

}  // namespace
}  // namespace fame
