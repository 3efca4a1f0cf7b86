#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "infosculpt/errors.hpp"
#include "infosculpt/eval.hpp"
#include "infosculpt/model.hpp"

using namespace infosculpt;

namespace {

Matrix random_int_costs(std::mt19937_64& rng, std::size_t n, int hi) {
  std::uniform_int_distribution<int> d(0, hi);
  Matrix c(n, n);
  for (double& v : c.data()) v = d(rng);
  return c;
}

// First optimum in lexicographic enumeration order.
std::vector<std::size_t> brute_force(const Matrix& cost) {
  std::vector<std::size_t> perm(cost.rows()), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = INFINITY;
  do {
    const double c = assignment_cost(cost, perm);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Matrix random_probs(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::normal_distribution<double> d(0.0, 1.5);
  Matrix logits(n, k);
  for (double& v : logits.data()) v = d(rng);
  Tape t;
  return ad::softmax_rows(t.constant(logits)).value();
}

}  // namespace

TEST(Hungarian, IdentityFavoringCost) {
  Matrix c(4, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) c(i, i) = 0.0;
  EXPECT_EQ(hungarian(c), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Hungarian, RecoversPermutation) {
  const std::vector<std::size_t> pi = {2, 0, 3, 1};
  Matrix c(4, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) c(i, pi[i]) = 0.0;
  EXPECT_EQ(hungarian(c), pi);
}

TEST(Hungarian, MatchesExhaustiveSearchExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 7;
    const Matrix c = random_int_costs(rng, n, trial % 2 ? 3 : 50);  // small range forces ties
    const auto got = hungarian(c);
    const auto want = brute_force(c);
    EXPECT_EQ(assignment_cost(c, got), assignment_cost(c, want));
    EXPECT_EQ(got, want) << "trial " << trial;
  }
}

TEST(Hungarian, BeatsRandomPermutations) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_real_distribution<double> u(-5, 5);
    Matrix c(8, 8);
    for (double& v : c.data()) v = u(rng);
    const double best = assignment_cost(c, hungarian(c));
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < 1000; ++i) {
      std::shuffle(perm.begin(), perm.end(), rng);
      EXPECT_LE(best, assignment_cost(c, perm) + 1e-12);
    }
  }
}

TEST(Hungarian, RejectsBadInput) {
  EXPECT_THROW(hungarian(Matrix(2, 3)), DimensionError);
  EXPECT_THROW(hungarian(Matrix::from_rows({{0, NAN}, {1, 1}})), DomainError);
  EXPECT_TRUE(hungarian(Matrix(0, 0)).empty());
}

TEST(Accuracy, PerfectAndPermuted) {
  const std::vector<int> truth = {0, 0, 1, 2, 2, 1, 3};
  const std::vector<bool> old = {true, true, false, false};
  const EvalReport r = clustering_accuracy(truth, truth, 4, old);
  EXPECT_EQ(r.acc_all, 1.0);
  EXPECT_EQ(r.acc_old, 1.0);
  EXPECT_EQ(r.acc_new, 1.0);
  const std::vector<int> pi = {3, 1, 0, 2};
  std::vector<int> preds;
  for (int y : truth) preds.push_back(pi[y]);
  EXPECT_EQ(clustering_accuracy(preds, truth, 4, old).acc_all, 1.0);
}

TEST(Accuracy, WorkedExample) {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  const std::vector<int> preds = {1, 1, 0, 0, 2, 0};
  const EvalReport r = clustering_accuracy(preds, truth, 3, {true, false, false});
  EXPECT_NEAR(r.acc_all, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(r.mapping, (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_EQ(r.num_old, 2u);
  EXPECT_EQ(r.num_new, 4u);
  EXPECT_EQ(r.acc_old, 1.0);
  EXPECT_NEAR(r.acc_new, 3.0 / 4.0, 1e-15);
  EXPECT_EQ(r.contingency[0][1], 2u);
  EXPECT_EQ(r.contingency[0][2], 1u);
}

TEST(Accuracy, InvariantUnderRelabeling) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> truth(40), preds(40);
    for (int& v : truth) v = d(rng);
    for (int& v : preds) v = d(rng);
    const std::vector<bool> old = {true, true, false, true, false};
    const EvalReport base = clustering_accuracy(preds, truth, 5, old);

    std::vector<int> sigma = {0, 1, 2, 3, 4}, tau = sigma;
    std::shuffle(sigma.begin(), sigma.end(), rng);
    std::shuffle(tau.begin(), tau.end(), rng);
    std::vector<int> p2, t2;
    std::vector<bool> old2(5);
    for (int v : preds) p2.push_back(sigma[v]);
    for (int v : truth) t2.push_back(tau[v]);
    for (int y = 0; y < 5; ++y) old2[tau[y]] = old[y];
    const EvalReport moved = clustering_accuracy(p2, t2, 5, old2);
    EXPECT_EQ(base.acc_all, moved.acc_all);
    EXPECT_EQ(base.num_old, moved.num_old);
  }
}

TEST(Accuracy, Errors) {
  const std::vector<int> a = {0, 1}, bad = {0, 3};
  EXPECT_ANY_THROW(clustering_accuracy(bad, a, 2, {true, false}));
  EXPECT_ANY_THROW(clustering_accuracy(a, bad, 2, {true, false}));
  EXPECT_ANY_THROW(clustering_accuracy({}, {}, 2, {true, false}));
}

TEST(Oracle, TwoSampleExample) {
  const Matrix p = Matrix::from_rows({{0.8, 0.2}, {0.6, 0.4}});
  const std::vector<int> y = {0, 0};
  const double kl1 = 0.8 * std::log(0.8 / 0.7) + 0.2 * std::log(0.2 / 0.3);
  const double kl2 = 0.6 * std::log(0.6 / 0.7) + 0.4 * std::log(0.4 / 0.3);
  const CmiOracleResult r = oracle_cmi_routes(p, y);
  EXPECT_NEAR(r.estimator, 0.5 * (kl1 + kl2), 1e-14);
  EXPECT_NEAR(r.estimator, 0.024157, 1e-6);
  EXPECT_NEAR(r.joint_expansion, r.estimator, 1e-12);
}

TEST(Oracle, ZeroWhenClassPredictionsAgree) {
  const Matrix p = Matrix::from_rows({{0.7, 0.3}, {0.2, 0.8}, {0.7, 0.3}, {0.2, 0.8}});
  EXPECT_NEAR(oracle_cmi(p, std::vector<int>{0, 1, 0, 1}), 0.0, 1e-15);
  // Predictions independent of the label.
  const Matrix q = Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  EXPECT_NEAR(oracle_cmi(q, std::vector<int>{0, 1, 2}), 0.0, 1e-15);
}

TEST(Oracle, NonNegativeAndRoutesAgree) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + trial % 3;
    std::vector<int> y;
    for (std::size_t i = 0; i < 9; ++i) y.push_back(static_cast<int>(i % c));
    const CmiOracleResult r = oracle_cmi_routes(random_probs(rng, 9, 4), y);
    EXPECT_GE(r.estimator, 0.0);
    EXPECT_NEAR(r.estimator, r.joint_expansion, 1e-10);
  }
}

TEST(Oracle, MissingClassRejected) {
  EXPECT_ANY_THROW(oracle_cmi(Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}), std::vector<int>{0, 2}));
}

TEST(Embeddings, RoundTripAndShape) {
  const GcdDataset ds = generate_gaussian_gcd(2, 1, 6, 4, 3.0, 0);
  EncoderConfig c;
  c.input_dim = 4;
  c.num_classes = 3;
  const ModelParams p = init_model(c);
  const auto path = std::filesystem::temp_directory_path() / "infosculpt_emb.csv";
  export_embeddings(p, ds, path);
  const Matrix z = load_embeddings(path);
  EXPECT_EQ(z.rows(), ds.size());
  const Matrix want = embed(p, ds.features);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z.data()[i], want.data()[i], 1e-9);
  std::filesystem::remove(path);
}

TEST(Embeddings, ZeroEncoderGivesZeros) {
  const GcdDataset ds = generate_gaussian_gcd(2, 1, 6, 4, 3.0, 0);
  EncoderConfig c;
  c.input_dim = 4;
  c.num_classes = 3;
  ModelParams p = init_model(c);
  for (std::size_t i = 0; i < p.num_tensors(); ++i)
    if (p.name(i).starts_with("encoder.")) p.tensor(i).fill(0.0);
  const auto path = std::filesystem::temp_directory_path() / "infosculpt_emb0.csv";
  export_embeddings(p, ds, path);
  EXPECT_EQ(max_abs(load_embeddings(path)), 0.0);
  std::filesystem::remove(path);
}

TEST(EvaluateUnlabeled, CountsOnlyUnlabeled) {
  const GcdDataset ds = generate_gaussian_gcd(3, 3, 10, 4, 3.0, 0);
  EncoderConfig c;
  c.input_dim = 4;
  const EvalReport r = evaluate_unlabeled(init_model(c), ds);
  EXPECT_EQ(r.num_samples, ds.size() - ds.num_labeled());
  EXPECT_EQ(r.num_old, 3u * 5u);
  EXPECT_EQ(r.num_new, 3u * 10u);
}
