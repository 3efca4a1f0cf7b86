#pragma once

// Training objectives.
//
// Class-level CMI:     cmi  = 1/|B_l| sum_i KL(p_i || refine(q^{y_i}))
// Separation:          sep  = 1/K sum_i log( 1/(K-1) sum_{j != i} exp(q^i . q^j / tau_sep) )
// Instance-level CMI:  inst = 1/(2|B|) sum_i KL(sharpen(p'_i) || p_i) + KL(sharpen(p_i) || p'_i)
// Marginal entropy:    ent  = sum_k pbar_k log pbar_k
// Composite:           cls   = l_cmi cmi + l_sep sep + l_inst inst + l_ent ent
//                      total = alpha ce + (1 - alpha) cls + beta con_l + (1 - beta) con_u
//
// Targets (refined centroids, sharpened predictions) are constants on the
// tape: no gradient flows through them.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "infosculpt/autodiff.hpp"
#include "infosculpt/matrix.hpp"

namespace infosculpt {

/// Nonnegative vector summing to 1 within 1e-9.
class ProbVector {
 public:
  ProbVector() = default;
  /// Throws DomainError if any entry is negative/non-finite or the sum is off.
  explicit ProbVector(std::vector<double> probs);
  static ProbVector uniform(std::size_t k);
  /// Divides nonnegative weights by their sum.
  static ProbVector normalized(std::vector<double> weights);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }
  double min() const;

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> probs_;
};

/// sum_k p_k log(p_k / q_k) with 0 log 0 := 0. A zero q_k under positive
/// p_k is a DomainError.
double kl_divergence(const ProbVector& p, const ProbVector& q);

struct LossConfig {
  double lambda_cmi = 0.1;
  double lambda_sep = 0.1;
  double lambda_inst = 1.0;
  double lambda_ent = 2.0;
  double alpha = 0.35;
  double beta = 0.35;
  double tau_c = 0.07;
  double tau_sep = 0.1;
  double tau_sharp = 0.5;
  /// Hard negatives suppressed in the refined target; clamped to K - 1.
  std::size_t topk = 10;
  double eps_floor = 1e-12;
  double centroid_momentum = 0.9;
  /// Recompute centroids as exact class means over all labeled data once
  /// per epoch instead of the per-batch EMA.
  bool exact_centroids = false;

  void validate() const;
  std::size_t effective_topk(std::size_t num_classes) const {
    return num_classes == 0 ? 0 : std::min(topk, num_classes - 1);
  }
};

/// Per-class mean predictions q^y for the labeled (old) classes. Classes
/// never observed hold the uniform distribution.
class ClassCentroids {
 public:
  ClassCentroids() = default;
  /// `num_classes` is K (vector length); `num_tracked` is K_old.
  ClassCentroids(std::size_t num_classes, std::size_t num_tracked, double momentum);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_tracked() const noexcept { return centroids_.size(); }
  double momentum() const noexcept { return momentum_; }
  const ProbVector& centroid(std::size_t y) const { return centroids_.at(y); }
  std::size_t count(std::size_t y) const { return counts_.at(y); }
  bool observed(std::size_t y) const { return counts_.at(y) > 0; }

  /// EMA step: for each class present, q <- m q + (1 - m) mean(preds of class),
  /// renormalized. Rows of `preds` are probability vectors.
  void update(const Matrix& preds, std::span<const int> labels);
  /// Exact class means over the given set; classes absent keep their value.
  void set_exact(const Matrix& preds, std::span<const int> labels);
  /// num_tracked x K matrix of the stored centroids.
  Matrix as_matrix() const;

  friend bool operator==(const ClassCentroids&, const ClassCentroids&) = default;

 private:
  void check_batch(const Matrix& preds, std::span<const int> labels) const;

  std::size_t num_classes_ = 0;
  double momentum_ = 0.0;
  std::vector<ProbVector> centroids_;
  std::vector<std::size_t> counts_;
};

ClassCentroids update_centroids(ClassCentroids centroids, const Matrix& preds,
                                std::span<const int> labels);

/// Entry y set to 1, the k largest other entries of q zeroed (ties to the
/// lower index), the rest kept; renormalized, then floored at eps_floor and
/// renormalized again. eps_floor = 0 skips the flooring.
ProbVector refine_target(const ProbVector& q, std::size_t y, std::size_t k, double eps_floor);

/// p^(1/tau) / sum p^(1/tau).
ProbVector sharpen(const ProbVector& p, double tau);
Matrix sharpen_rows(const Matrix& probs, double tau);

/// Model predictions with their log-probabilities on the same tape.
struct PredictionBatch {
  Var probs;
  Var log_probs;

  static PredictionBatch from_logits(Var logits);
  /// Log computed directly; every entry must be positive.
  static PredictionBatch from_probs(Var probs);
  std::size_t size() const { return probs.rows(); }
};

enum class CmiTarget {
  refined,  // refine_target(q^y, y, k, eps)
  raw,      // q^y itself (floored at eps)
};

/// Returns a zero constant for an empty batch.
Var loss_cmi(const PredictionBatch& preds, std::span<const int> labels, const ClassCentroids& centroids,
             std::size_t k, double eps_floor, CmiTarget mode = CmiTarget::refined);
/// KL(p_i || target_i) averaged over rows; the targets are constants.
Var loss_cmi_with_targets(const PredictionBatch& preds, const Matrix& targets);

/// `centroids` has one row per centroid entering the sum; needs >= 2 rows.
Var loss_sep(Var centroids, double tau_sep);

/// Differentiable centroids of the observed tracked classes: classes present
/// in the batch become m q_old + (1 - m) mean(batch preds), the others stay
/// constant. Returns an invalid Var when fewer than two classes qualify.
Var batch_centroids(const ClassCentroids& centroids, Var preds, std::span<const int> labels);

Var loss_inst(const PredictionBatch& view1, const PredictionBatch& view2, double tau_sharp);
/// Same objective with explicit (constant) targets for each view.
Var loss_inst_with_targets(const PredictionBatch& view1, const PredictionBatch& view2,
                           const Matrix& target1, const Matrix& target2);

Var loss_ent(Var probs_view1, Var probs_view2);

/// Labels must lie in [0, num_valid_classes). Zero constant for an empty batch.
Var loss_ce(Var logits, std::span<const int> labels, std::size_t num_valid_classes);

struct ConSupResult {
  Var loss;
  std::size_t skipped_anchors = 0;
};

/// Supervised contrastive loss over the rows of h (unit norm). The pool is
/// every other row of h; anchors without a same-label partner are skipped.
ConSupResult loss_con_sup(Var h, std::span<const int> labels, double tau_c);
/// Unsupervised contrastive loss; pool = both views, positive = other view.
Var loss_con_unsup(Var h_view1, Var h_view2, double tau_c);

struct LossBreakdown {
  double ce = 0, cmi = 0, sep = 0, inst = 0, ent = 0, con_l = 0, con_u = 0, cls = 0, total = 0;

  /// Fills cls and total from the components.
  static LossBreakdown combine(double ce, double cmi, double sep, double inst, double ent, double con_l,
                               double con_u, const LossConfig& cfg);
};

struct LossInputs {
  PredictionBatch view1;  // full batch
  PredictionBatch view2;
  Var logits_labeled;  // labeled rows (both views stacked); may be empty
  std::vector<int> labels_labeled;
  Var h_view1;
  Var h_view2;
  Var h_labeled;
  std::vector<int> labels_h;
  Var sep_centroids;  // invalid -> sep = 0
  const ClassCentroids* centroids = nullptr;
  std::size_t num_old_classes = 0;
  // Fixed instance-level targets; when null they are sharpened from the
  // current predictions. Gradient checks freeze them at the base point.
  const Matrix* inst_target1 = nullptr;
  const Matrix* inst_target2 = nullptr;
};

struct LossTerms {
  Var ce, cmi, sep, inst, ent, con_l, con_u, cls, total;
  LossBreakdown breakdown;
  std::size_t skipped_anchors = 0;
  bool labeled_batch_empty = false;
};

LossTerms loss_total(const LossInputs& in, const LossConfig& cfg);

}  // namespace infosculpt
