#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "infosculpt/autodiff.hpp"
#include "infosculpt/errors.hpp"
#include "infosculpt/gradcheck.hpp"

using namespace infosculpt;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> d;
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

}  // namespace

TEST(Autodiff, SoftmaxOfZerosIsUniform) {
  Tape t;
  const Matrix p = ad::softmax_rows(t.constant(Matrix(1, 3))).value();
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Autodiff, NormalizeThreeFour) {
  Tape t;
  const Matrix n = ad::l2_normalize_rows(t.constant(Matrix::from_rows({{3, 4}}))).value();
  EXPECT_NEAR(n(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(n(0, 1), 0.8, 1e-15);
}

TEST(Autodiff, NormalizeZeroRowNamesRow) {
  Tape t;
  try {
    ad::l2_normalize_rows(t.constant(Matrix::from_rows({{1, 0}, {0, 0}})));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(Autodiff, SoftmaxRejectsAllNegInfAndNaN) {
  const double inf = std::numeric_limits<double>::infinity();
  Tape t;
  EXPECT_THROW(ad::softmax_rows(t.constant(Matrix::from_rows({{-inf, -inf}}))), DomainError);
  EXPECT_THROW(ad::softmax_rows(t.constant(Matrix::from_rows({{0.0, std::nan("")}}))), DomainError);
  // A single -inf entry is fine and gets zero probability.
  const Matrix p = ad::softmax_rows(t.constant(Matrix::from_rows({{0.0, -inf}}))).value();
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_EQ(p(0, 1), 0.0);
}

TEST(Autodiff, SoftmaxStableForLargeLogits) {
  Tape t;
  const Matrix p = ad::softmax_rows(t.constant(Matrix::from_rows({{1000, 1000}}))).value();
  EXPECT_NEAR(p(0, 0), 0.5, 1e-15);
  const double lse = ad::logsumexp_rows(t.constant(Matrix::from_rows({{1000, 1000}}))).scalar();
  EXPECT_NEAR(lse, 1000 + std::log(2.0), 1e-12);
}

TEST(Autodiff, LogOfNonPositiveIsDomainError) {
  Tape t;
  EXPECT_THROW(ad::log(t.constant(Matrix::from_rows({{1.0, 0.0}}))), DomainError);
}

TEST(Autodiff, ShapeMismatchIsDimensionError) {
  Tape t;
  EXPECT_THROW(ad::add(t.constant(Matrix(2, 3)), t.constant(Matrix(3, 2))), DimensionError);
  EXPECT_THROW(ad::matmul(t.constant(Matrix(2, 3)), t.constant(Matrix(2, 3))), DimensionError);
  EXPECT_THROW(ad::mul(t.constant(Matrix(2, 3)), t.constant(Matrix(1, 3))), DimensionError);
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
  Tape t;
  Var w = t.parameter(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(w), ContractError);
}

TEST(Autodiff, SumGradientIsOnes) {
  Tape t;
  Var w = t.parameter(Matrix::from_rows({{1, -2, 3}, {4, 5, -6}}));
  t.backward(ad::sum(w));
  for (double g : w.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, HalfSquaredNormGradientIsW) {
  Tape t;
  const Matrix wv = Matrix::from_rows({{1, -2, 3}, {0.5, 5, -6}});
  Var w = t.parameter(wv);
  t.backward(0.5 * ad::sum(ad::mul(w, w)));
  EXPECT_EQ(w.grad(), wv);
}

TEST(Autodiff, LeafGradientsAccumulateUntilZeroGrad) {
  Tape t;
  Var w = t.parameter(Matrix(1, 2, 1.0));
  Var root = ad::sum(w);
  t.backward(root);
  t.backward(root);
  EXPECT_EQ(w.grad()(0, 0), 2.0);
  t.zero_grad();
  EXPECT_EQ(w.grad()(0, 0), 0.0);
}

TEST(Autodiff, ReusedNodeGetsSummedGradient) {
  Tape t;
  Var x = t.parameter(Matrix::from_rows({{3}}));
  t.backward(ad::add(ad::mul(x, x), x));  // x^2 + x
  EXPECT_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autodiff, DetachBlocksGradient) {
  Tape t;
  Var x = t.parameter(Matrix::from_rows({{2}}));
  t.backward(ad::mul(ad::detach(x), x));
  EXPECT_EQ(x.grad()(0, 0), 2.0);
}

TEST(Autodiff, ConstantsGetNoGradient) {
  Tape t;
  Var c = t.constant(Matrix(1, 2, 1.0));
  Var w = t.parameter(Matrix(1, 2, 2.0));
  t.backward(ad::sum(ad::mul(c, w)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(w.grad()(0, 1), 1.0);
}

TEST(Autodiff, XlogxAtZero) {
  Tape t;
  Var x = t.parameter(Matrix::from_rows({{0.0, 1.0}}));
  Var y = ad::xlogx(x);
  EXPECT_EQ(y.value()(0, 0), 0.0);
  EXPECT_EQ(y.value()(0, 1), 0.0);
  EXPECT_THROW(ad::xlogx(t.constant(Matrix::from_rows({{-0.1}}))), DomainError);
}

TEST(AutodiffGrad, MatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2), w = random_matrix(rng, 3, 2);
  const auto r = check_gradient(
      "matmul",
      [&](Tape& t, std::span<const Var> in) { return ad::sum(ad::mul(t.constant(w), ad::matmul(in[0], in[1]))); },
      {a, b}, {.step = 1e-5, .rel_tol = 1e-6, .abs_tol = 1e-6});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(AutodiffGrad, LogSoftmaxOfLinearDotOneHot) {
  std::mt19937_64 rng(11);
  const Matrix w = random_matrix(rng, 4, 5), x = random_matrix(rng, 3, 4);
  const Matrix onehot = Matrix::from_rows({{0, 1, 0, 0, 0}, {0, 0, 0, 0, 1}, {1, 0, 0, 0, 0}});
  const auto r = check_gradient(
      "log_softmax",
      [&](Tape& t, std::span<const Var> in) {
        return ad::sum(ad::mul(t.constant(onehot), ad::log(ad::softmax_rows(ad::matmul(t.constant(x), in[0])))));
      },
      {w});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(AutodiffGrad, RandomCompositeExpressions) {
  // Property: random chains of ops always agree with central differences.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 3, 3), b = random_matrix(rng, 1, 3), w = random_matrix(rng, 3, 3);
    const auto r = check_gradient(
        "composite",
        [&](Tape& t, std::span<const Var> in) {
          Var h = ad::l2_normalize_rows(ad::add(ad::matmul(in[0], t.constant(w)), in[1]));
          Var s = ad::logsumexp_rows(ad::scale(ad::matmul(h, ad::transpose(h)), 2.0));
          return ad::mean(ad::add(s, ad::sum_rows(ad::exp(ad::scale(in[0], 0.3)))));
        },
        {a, b});
    EXPECT_TRUE(r.passed) << "trial " << trial << " rel " << r.max_rel_error;
  }
}

TEST(AutodiffGrad, InjectedSignErrorIsReportedByName) {
  // A deliberately wrong backward rule for y = 2x.
  auto broken_double = [](Var a) {
    Tape& t = a.tape();
    Matrix v = a.value();
    for (double& x : v.data()) x *= 2.0;
    return t.record("broken_double", std::move(v), {a}, [](const BackwardContext& ctx) {
      if (Matrix* g = ctx.input_grad(0))
        for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] -= 2.0 * ctx.grad_out().data()[i];
    });
  };
  const auto r = check_gradient(
      "op/broken_double", [&](Tape&, std::span<const Var> in) { return ad::sum(broken_double(in[0])); },
      {Matrix::from_rows({{1.0, -2.0}})});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.name, "op/broken_double");
  EXPECT_GT(r.max_rel_error, 1.0);
}
