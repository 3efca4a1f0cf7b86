#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "infosculpt/data.hpp"
#include "infosculpt/errors.hpp"

using namespace infosculpt;
namespace fs = std::filesystem;

namespace {

fs::path temp_csv(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "infosculpt_data_tests";
  fs::create_directories(dir);
  return dir / (name + ".csv");
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Generator, DefaultSplit) {
  const GcdDataset ds = generate_gaussian_gcd(3, 3, 100, 16, 3.0, 0);
  EXPECT_EQ(ds.size(), 600u);
  EXPECT_EQ(ds.num_labeled(), 150u);
  EXPECT_EQ(ds.unlabeled_indices().size(), 450u);
  EXPECT_EQ(ds.input_dim(), 16u);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Generator, OddPerClassRoundsUp) {
  const GcdDataset ds = generate_gaussian_gcd(2, 0, 7, 3, 1.0, 4);
  EXPECT_EQ(ds.num_labeled(), 2u * 4u);
  for (int y : ds.labels) EXPECT_LT(y, 2);
}

TEST(Generator, LabeledOnlyOldClasses) {
  const GcdDataset ds = generate_gaussian_gcd(2, 3, 10, 4, 2.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.is_labeled[i]) EXPECT_LT(ds.labels[i], 2);
  std::vector<std::size_t> per_class(5, 0);
  for (int y : ds.labels) ++per_class[static_cast<std::size_t>(y)];
  for (std::size_t n : per_class) EXPECT_EQ(n, 10u);
}

TEST(Generator, Deterministic) {
  EXPECT_EQ(generate_gaussian_gcd(3, 3, 20, 8, 3.0, 5), generate_gaussian_gcd(3, 3, 20, 8, 3.0, 5));
  EXPECT_NE(generate_gaussian_gcd(3, 3, 20, 8, 3.0, 5).features, generate_gaussian_gcd(3, 3, 20, 8, 3.0, 6).features);
}

TEST(Generator, ClassMeansOnSphere) {
  // With sep large the empirical class mean sits near radius sep*sqrt(d).
  const GcdDataset ds = generate_gaussian_gcd(2, 0, 400, 4, 3.0, 2);
  for (int c = 0; c < 2; ++c) {
    std::vector<double> mean(4, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] != c) continue;
      ++n;
      for (std::size_t j = 0; j < 4; ++j) mean[j] += ds.features(i, j);
    }
    double norm = 0.0;
    for (double m : mean) norm += (m / n) * (m / n);
    EXPECT_NEAR(std::sqrt(norm), 6.0, 0.3);
  }
}

TEST(Generator, BadArguments) {
  EXPECT_THROW(generate_gaussian_gcd(0, 3, 100, 16, 3.0, 0), ConfigError);
  EXPECT_THROW(generate_gaussian_gcd(3, 3, 1, 16, 3.0, 0), ConfigError);
  EXPECT_THROW(generate_gaussian_gcd(3, 3, 100, 16, -1.0, 0), ConfigError);
}

TEST(Firewall, TrainingViewMasksUnlabeled) {
  const GcdDataset ds = generate_gaussian_gcd(3, 3, 20, 4, 3.0, 0);
  const TrainingView v = training_view(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.is_labeled[i])
      EXPECT_EQ(v.visible_labels[i], ds.labels[i]);
    else
      EXPECT_EQ(v.visible_labels[i], -1);
  }
}

TEST(Augment, IdentityWhenNoNoise) {
  const GcdDataset ds = generate_gaussian_gcd(2, 1, 10, 5, 3.0, 0);
  AugmentConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.mask_prob = 0.0;
  auto rng = seeded_rng(1);
  const auto [a, b] = augment_two_views(ds.features, cfg, rng);
  EXPECT_EQ(a, ds.features);
  EXPECT_EQ(b, ds.features);
}

TEST(Augment, MaskProbOneRejected) {
  AugmentConfig cfg;
  cfg.mask_prob = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.mask_prob = 0.2;
  cfg.noise_sigma = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Augment, NoiseVarianceMonteCarlo) {
  AugmentConfig cfg;
  cfg.noise_sigma = 0.3;
  cfg.mask_prob = 0.0;
  const Matrix x(100000, 1, 2.0);
  auto rng = seeded_rng(2);
  const auto [a, b] = augment_two_views(x, cfg, rng);
  for (const Matrix* v : {&a, &b}) {
    double s = 0.0, s2 = 0.0;
    for (double e : v->data()) {
      s += e - 2.0;
      s2 += (e - 2.0) * (e - 2.0);
    }
    const double n = static_cast<double>(v->size());
    const double var = s2 / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 0.09, 0.05 * 0.09);
  }
  EXPECT_NE(a, b);  // the two views are independent draws
}

TEST(Augment, MaskZeroesAboutMaskProb) {
  AugmentConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.mask_prob = 0.25;
  const Matrix x(20000, 4, 1.0);
  auto rng = seeded_rng(3);
  const auto [a, b] = augment_two_views(x, cfg, rng);
  const double zeros = static_cast<double>(std::count(a.data().begin(), a.data().end(), 0.0));
  const double n = static_cast<double>(a.size());
  EXPECT_NEAR(zeros / n, 0.25, 3 * std::sqrt(0.25 * 0.75 / n));
}

TEST(Batches, PartitionEveryEpoch) {
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
    const auto batches = epoch_batches(600, 128, 7, epoch);
    EXPECT_EQ(batches.size(), 5u);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& b : batches) {
      total += b.size();
      seen.insert(b.begin(), b.end());
    }
    EXPECT_EQ(total, 600u);
    EXPECT_EQ(seen.size(), 600u);
    EXPECT_EQ(*seen.rbegin(), 599u);
  }
}

TEST(Batches, EpochsDifferSameEpochRepeats) {
  EXPECT_NE(epoch_batches(100, 10, 1, 0), epoch_batches(100, 10, 1, 1));
  EXPECT_EQ(epoch_batches(100, 10, 1, 3), epoch_batches(100, 10, 1, 3));
  EXPECT_THROW(epoch_batches(100, 1, 1, 0), ConfigError);
}

TEST(Batches, LabeledFractionWithinBinomialBounds) {
  const GcdDataset ds = generate_gaussian_gcd(3, 3, 100, 4, 3.0, 0);
  const TrainingView view = training_view(ds);
  const double p = 150.0 / 600.0;
  double labeled = 0.0, seen = 0.0;
  for (std::uint64_t epoch = 0; epoch < 50; ++epoch) {
    for (const Batch& b : make_batches(view, 128, AugmentConfig{}, 0, epoch)) {
      if (b.size() != 128) continue;  // the short tail batch is the remainder of a partition
      labeled += static_cast<double>(b.labeled_rows().size());
      seen += 128.0;
    }
  }
  EXPECT_NEAR(labeled / seen, p, 3 * std::sqrt(p * (1 - p) / seen));
}

TEST(Batches, CarryOnlyVisibleLabels) {
  const GcdDataset ds = generate_gaussian_gcd(2, 2, 8, 3, 3.0, 0);
  const TrainingView view = training_view(ds);
  for (const Batch& b : make_batches(view, 5, AugmentConfig{}, 0, 0)) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::size_t id = b.sample_ids[i];
      EXPECT_EQ(b.labels[i], ds.is_labeled[id] ? ds.labels[id] : -1);
      EXPECT_EQ(b.is_labeled[i], ds.is_labeled[id]);
    }
  }
}

TEST(Io, RoundTripIsExact) {
  const GcdDataset ds = generate_gaussian_gcd(3, 3, 100, 16, 3.0, 0);
  const fs::path p = temp_csv("roundtrip");
  save_dataset(ds, p);
  const GcdDataset back = load_dataset(p);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(back.size(), 600u);
  EXPECT_EQ(back.num_labeled(), 150u);
  EXPECT_TRUE(fs::exists(manifest_path(p)));
}

TEST(Io, SaveIsDeterministic) {
  const GcdDataset ds = generate_gaussian_gcd(2, 1, 6, 3, 3.0, 9);
  const fs::path a = temp_csv("det_a"), b = temp_csv("det_b");
  save_dataset(ds, a);
  save_dataset(ds, b);
  EXPECT_EQ(read_file(a), read_file(b));
}

TEST(Io, LabeledNewClassRejectedWithRow) {
  GcdDataset ds = generate_gaussian_gcd(2, 1, 6, 3, 3.0, 0);
  const fs::path p = temp_csv("badlabel");
  save_dataset(ds, p);
  // Rewrite data row 3 as a labeled sample of class K_old.
  std::stringstream in(read_file(p));
  std::string line, out;
  for (int row = 0; std::getline(in, line); ++row) {
    if (row == 3) {
      std::stringstream cols(line);
      std::string id, label, lab, rest;
      std::getline(cols, id, ',');
      std::getline(cols, label, ',');
      std::getline(cols, lab, ',');
      std::getline(cols, rest);
      line = id + ",2,1," + rest;
    }
    out += line + "\n";
  }
  std::ofstream(p) << out;
  try {
    load_dataset(p);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.row(), 3u);
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
}

TEST(Io, MalformedNumbersAndMissingFiles) {
  const GcdDataset ds = generate_gaussian_gcd(2, 1, 4, 2, 3.0, 0);
  const fs::path p = temp_csv("malformed");
  save_dataset(ds, p);
  std::string text = read_file(p);
  const auto pos = text.find('\n', text.find('\n') + 1);  // end of data row 1
  text.insert(pos, "abc");
  std::ofstream(p) << text;
  EXPECT_THROW(load_dataset(p), FormatError);
  EXPECT_ANY_THROW(load_dataset(temp_csv("does_not_exist")));
}
