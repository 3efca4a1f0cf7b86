#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "infosculpt/data.hpp"
#include "infosculpt/matrix.hpp"
#include "infosculpt/model.hpp"

namespace infosculpt {

/// Minimum-cost perfect assignment on a square cost matrix. Returns
/// perm[row] = column. Among all optimal assignments the lexicographically
/// smallest permutation is returned. Throws DimensionError if not square,
/// DomainError on non-finite costs.
std::vector<std::size_t> hungarian(const Matrix& cost);

/// Total cost of an assignment.
double assignment_cost(const Matrix& cost, std::span<const std::size_t> perm);

struct EvalReport {
  double acc_all = 0.0;
  double acc_old = 0.0;  // 0 when the subset is empty
  double acc_new = 0.0;
  /// mapping[cluster] = class id; a bijection on 0..K-1.
  std::vector<std::size_t> mapping;
  /// contingency[c][y] = samples predicted in cluster c with ground truth y.
  std::vector<std::vector<std::size_t>> contingency;
  std::size_t num_samples = 0;
  std::size_t num_old = 0;
  std::size_t num_new = 0;
};

/// Clustering accuracy under the single best one-to-one cluster -> class map
/// (Hungarian on negated contingency counts). `is_old_class[y]` marks the
/// old classes; old/new accuracies reuse the global map.
EvalReport clustering_accuracy(std::span<const int> preds, std::span<const int> truth, std::size_t num_classes,
                               const std::vector<bool>& is_old_class);

/// Accuracy of a model on the unlabeled part of a dataset.
EvalReport evaluate_unlabeled(const ModelParams& params, const GcdDataset& dataset);

struct CmiOracleResult {
  double estimator = 0.0;        // (1/n) sum_i KL(p_i || q^{y_i}), exact class means
  double joint_expansion = 0.0;  // sum_{x,y,yhat} P log(P(yhat|x,y) / P(yhat|y))
};

/// Both routes to the empirical conditional mutual information I(X; Yhat | Y).
/// Rows of `preds` are probability vectors; labels must cover 0..C-1.
/// Throws std::logic_error if the routes disagree by more than 1e-10.
CmiOracleResult oracle_cmi_routes(const Matrix& preds, std::span<const int> labels);
double oracle_cmi(const Matrix& preds, std::span<const int> labels);

/// CSV `id,label,is_labeled,z0,...` of encoder features, 17 significant digits.
void export_embeddings(const ModelParams& params, const GcdDataset& dataset, const std::filesystem::path& path);
/// Reads back the z columns of an exported file.
Matrix load_embeddings(const std::filesystem::path& path);

}  // namespace infosculpt
