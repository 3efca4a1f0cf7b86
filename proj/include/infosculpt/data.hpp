#pragma once

// Synthetic GCD benchmark: isotropic Gaussian classes, half of every old
// class labeled, all new-class samples unlabeled.
//
// Ground truth for unlabeled samples is kept for evaluation only. Training
// code consumes a TrainingView, in which those labels are masked to -1.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "infosculpt/matrix.hpp"

namespace infosculpt {

enum class ClassRole { old_class, new_class };

struct GcdDataset {
  Matrix features;                  // n x d_in
  std::vector<int> labels;          // ground truth, all samples
  std::vector<std::uint8_t> is_labeled;
  std::vector<std::int64_t> ids;
  std::size_t k_old = 0;
  std::size_t k_new = 0;
  std::uint64_t seed = 0;
  std::string generator = "gaussian";

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return k_old + k_new; }
  std::size_t num_labeled() const;
  ClassRole role(std::size_t cls) const { return cls < k_old ? ClassRole::old_class : ClassRole::new_class; }
  /// Indices of unlabeled samples, in row order.
  std::vector<std::size_t> unlabeled_indices() const;

  /// Throws FormatError (1-based data row) on any violated invariant.
  void validate() const;
  friend bool operator==(const GcdDataset&, const GcdDataset&) = default;
};

/// What the trainer may see: features, labels of labeled samples (-1 elsewhere).
struct TrainingView {
  const Matrix* features = nullptr;
  std::vector<int> visible_labels;
  std::vector<std::uint8_t> is_labeled;
  std::size_t k_old = 0;
  std::size_t k_new = 0;

  std::size_t size() const noexcept { return visible_labels.size(); }
};

TrainingView training_view(const GcdDataset& dataset);

struct AugmentConfig {
  double noise_sigma = 0.3;
  double mask_prob = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Batch {
  Matrix view1;
  Matrix view2;
  std::vector<int> labels;  // -1 for unlabeled samples
  std::vector<std::uint8_t> is_labeled;
  std::vector<std::size_t> sample_ids;  // row indices into the dataset

  std::size_t size() const noexcept { return sample_ids.size(); }
  std::vector<std::size_t> labeled_rows() const;
};

GcdDataset generate_gaussian_gcd(std::size_t k_old, std::size_t k_new, std::size_t per_class, std::size_t d_in,
                                 double sep, std::uint64_t seed);

/// Independent views: x + N(0, sigma^2), then each coordinate zeroed with mask_prob.
std::pair<Matrix, Matrix> augment_two_views(const Matrix& x, const AugmentConfig& config, std::mt19937_64& rng);

/// Shuffled partition of 0..n-1 into batches; the last short batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

/// Batches for one epoch with augmented views. Deterministic in
/// (seed, epoch, augment.seed).
std::vector<Batch> make_batches(const TrainingView& view, std::size_t batch_size, const AugmentConfig& augment,
                                std::uint64_t seed, std::uint64_t epoch);

/// Stream-separated generator for (seed, a, b).
std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0);

/// CSV `id,label,is_labeled,f0,...` plus the sibling manifest
/// (same path with a .json extension).
void save_dataset(const GcdDataset& dataset, const std::filesystem::path& csv_path);
GcdDataset load_dataset(const std::filesystem::path& csv_path);
std::filesystem::path manifest_path(const std::filesystem::path& csv_path);

}  // namespace infosculpt
