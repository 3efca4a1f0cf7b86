#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "infosculpt/errors.hpp"
#include "infosculpt/gradcheck.hpp"
#include "infosculpt/model.hpp"

using namespace infosculpt;

namespace {

Matrix normal_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> d;
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

double variance(const Matrix& m) {
  double mean = 0.0;
  for (double v : m.data()) mean += v;
  mean /= static_cast<double>(m.size());
  double var = 0.0;
  for (double v : m.data()) var += (v - mean) * (v - mean);
  return var / static_cast<double>(m.size());
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("infosculpt_model_" + name);
}

}  // namespace

TEST(Model, ParameterLayout) {
  const ModelParams p = init_model(EncoderConfig{});
  EXPECT_EQ(p.get("encoder.0.weight").rows(), 16u);
  EXPECT_EQ(p.get("encoder.0.weight").cols(), 64u);
  EXPECT_EQ(p.get("encoder.2.weight").cols(), 32u);
  EXPECT_EQ(p.get("proj.1.weight").cols(), 16u);
  EXPECT_EQ(p.get("cls.weight").cols(), 6u);
  EXPECT_EQ(p.get("cls.bias").cols(), 6u);
  EXPECT_THROW(p.get("nope"), ContractError);

  EncoderConfig cos;
  cos.cosine_classifier = true;
  const ModelParams pc = init_model(cos);
  EXPECT_THROW(pc.get("cls.bias"), ContractError);
}

TEST(Model, InvalidConfigRejected) {
  EncoderConfig c;
  c.feature_dim = 1;
  EXPECT_THROW(init_model(c), ConfigError);
  c = {};
  c.hidden_dims = {8, 0};
  EXPECT_THROW(init_model(c), ConfigError);
}

TEST(Model, SameSeedIdenticalOtherSeedDiffers) {
  EncoderConfig c;
  c.seed = 1;
  const ModelParams a = init_model(c), b = init_model(c);
  EXPECT_EQ(a, b);
  c.seed = 2;
  EXPECT_NE(a, init_model(c));
}

TEST(Model, GlorotBoundsAndZeroBias) {
  const ModelParams p = init_model(EncoderConfig{});
  for (std::size_t i = 0; i < p.num_tensors(); ++i) {
    const Matrix& t = p.tensor(i);
    if (p.name(i).ends_with(".bias")) {
      EXPECT_EQ(max_abs(t), 0.0) << p.name(i);
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      EXPECT_LE(max_abs(t), bound) << p.name(i);
    }
  }
}

TEST(Model, InitLayerVariancesStayInRange) {
  // Every layer's output variance within [0.1, 10] x the input variance.
  const ModelParams p = init_model(EncoderConfig{});
  std::mt19937_64 rng(0);
  const Matrix x = normal_matrix(rng, 1000, 16);
  const double vx = variance(x);
  Tape t;
  const BoundModel m = bind(t, p, false);
  Var h = t.constant(x);
  for (std::size_t l = 0; l < p.num_encoder_layers(); ++l) {
    const std::string pre = "encoder." + std::to_string(l);
    h = ad::add(ad::matmul(h, m.var(pre + ".weight")), m.var(pre + ".bias"));
    const double ratio = variance(h.value()) / vx;
    EXPECT_GE(ratio, 0.1) << pre;
    EXPECT_LE(ratio, 10.0) << pre;
    if (l + 1 < p.num_encoder_layers()) h = ad::relu(h);
  }
}

TEST(Model, ZeroDepthIdentityEncoderIsIdentity) {
  EncoderConfig c;
  c.input_dim = 4;
  c.hidden_dims = {};
  c.feature_dim = 4;
  ModelParams p = init_model(c);
  p.get("encoder.0.weight") = Matrix::identity(4);
  std::mt19937_64 rng(1);
  const Matrix x = normal_matrix(rng, 5, 4);
  EXPECT_EQ(embed(p, x), x);
}

TEST(Model, OutputShapes) {
  const ModelParams p = init_model(EncoderConfig{});
  std::mt19937_64 rng(2);
  const Matrix x = normal_matrix(rng, 7, 16);
  const Matrix z = embed(p, x);
  EXPECT_EQ(z.rows(), 7u);
  EXPECT_EQ(z.cols(), 32u);
  EXPECT_EQ(project(p, z).cols(), 16u);
  EXPECT_EQ(classify(p, z).rows(), 7u);
  EXPECT_EQ(classify(p, z).cols(), 6u);
  EXPECT_EQ(predict_clusters(p, x).size(), 7u);
  EXPECT_THROW(embed(p, Matrix(3, 5)), DimensionError);
}

TEST(Model, ProjectionRowsAreUnitNorm) {
  const ModelParams p = init_model(EncoderConfig{});
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix h = project(p, embed(p, normal_matrix(rng, 20, 16)));
    for (std::size_t i = 0; i < h.rows(); ++i) {
      double n = 0.0;
      for (double v : h.row(i)) n += v * v;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
    }
  }
}

TEST(Model, ProjectionScaleInvariant) {
  // z and 2z give the same h when the projection head is linear (zero bias, no ReLU kink).
  EncoderConfig c;
  ModelParams p = init_model(c);
  p.get("proj.0.weight") = Matrix::identity(c.feature_dim);
  std::mt19937_64 rng(4);
  Matrix z = normal_matrix(rng, 6, c.feature_dim);
  for (double& v : z.data()) v = std::abs(v);  // stay in the ReLU's linear region
  Matrix z2 = z;
  for (double& v : z2.data()) v *= 2.0;
  const Matrix a = project(p, z), b = project(p, z2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Model, ZeroClassifierGivesUniformSoftmax) {
  ModelParams p = init_model(EncoderConfig{});
  p.get("cls.weight").fill(0.0);
  std::mt19937_64 rng(5);
  Tape t;
  const Matrix probs = ad::softmax_rows(t.constant(classify(p, embed(p, normal_matrix(rng, 3, 16))))).value();
  for (double v : probs.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(Model, PredictTiesGoToLowerIndex) {
  ModelParams p = init_model(EncoderConfig{});
  p.get("cls.weight").fill(0.0);
  for (int c : predict_clusters(p, Matrix(4, 16, 1.0))) EXPECT_EQ(c, 0);
}

TEST(Model, FirstLayerGradientMatchesFiniteDifferences) {
  EncoderConfig c;
  c.input_dim = 4;
  c.hidden_dims = {5};
  c.feature_dim = 3;
  c.proj_dim = 2;
  c.num_classes = 3;
  const ModelParams base = init_model(c);
  std::mt19937_64 rng(6);
  const Matrix x = normal_matrix(rng, 5, 4);
  const auto r = check_gradient(
      "embed/encoder.0.weight",
      [&](Tape& t, std::span<const Var> in) {
        BoundModel m = bind(t, base, false);
        m.vars[base.index_of("encoder.0.weight")] = in[0];
        return ad::mean(embed(m, t.constant(x)));
      },
      {base.get("encoder.0.weight")});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Model, ForwardEncodesOnce) {
  const ModelParams p = init_model(EncoderConfig{});
  Tape t;
  const BoundModel m = bind(t, p);
  const std::size_t w0 = m.var("encoder.0.weight").id();
  forward(m, t.constant(Matrix(3, 16, 0.5)));
  std::size_t uses = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t parent : t.node(i).parents) uses += parent == w0;
  EXPECT_EQ(uses, 1u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  EncoderConfig c;
  c.seed = 9;
  c.cosine_classifier = true;
  const ModelParams p = init_model(c);
  const auto path = temp_file("rt.bin");
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  EXPECT_EQ(p, q);
  EXPECT_TRUE(q.config().cosine_classifier);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto path = temp_file("bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(path), FormatError);

  save_checkpoint(init_model(EncoderConfig{}), path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(load_checkpoint(path));
}
