#include "infosculpt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "infosculpt/errors.hpp"

namespace infosculpt {
namespace {

// Logit assigned to excluded (self) pairs: exp underflows to exactly 0.
constexpr double kMaskedLogit = -1e30;

void check_label(int y, std::size_t bound, const char* where) {
  if (y < 0 || static_cast<std::size_t>(y) >= bound) {
    throw std::out_of_range(std::string(where) + ": label " + std::to_string(y) + " outside [0, " +
                            std::to_string(bound) + ")");
  }
}

Var zero_scalar(Tape& tape) { return tape.constant(Matrix(1, 1, 0.0)); }

double xlogx_sum(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data())
    if (v > 0.0) s += v * std::log(v);
  return s;
}

Matrix log_of(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = m.data()[i];
    if (!(v > 0.0)) throw DomainError("KL target has a nonpositive entry");
    out.data()[i] = std::log(v);
  }
  return out;
}

// Similarity logits h h^T / tau with the diagonal masked out.
Var masked_similarity(Var h, double tau) {
  Tape& tape = h.tape();
  Var s = ad::scale(ad::matmul(h, ad::transpose(h)), 1.0 / tau);
  Matrix mask(h.rows(), h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) mask(i, i) = kMaskedLogit;
  return ad::add(s, tape.constant(std::move(mask)));
}

// sum_i anchor_w_i * lse_i - sum_ij pos_w_ij * s_ij
Var contrastive_from_weights(Var s, const Matrix& anchor_w, const Matrix& pos_w) {
  Tape& tape = s.tape();
  Var lse = ad::logsumexp_rows(s);
  Var a = ad::matmul(tape.constant(anchor_w), lse);
  Var p = ad::sum(ad::mul(tape.constant(pos_w), s));
  return ad::sub(a, p);
}

}  // namespace

// ---------------------------------------------------------------- ProbVector

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw DomainError("ProbVector: empty");
  double s = 0.0;
  for (double v : probs_) {
    if (!std::isfinite(v) || v < 0.0) throw DomainError("ProbVector: invalid entry " + std::to_string(v));
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DomainError("ProbVector: sums to " + std::to_string(s));
}

ProbVector ProbVector::uniform(std::size_t k) {
  if (k == 0) throw DomainError("ProbVector::uniform: k = 0");
  return ProbVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

ProbVector ProbVector::normalized(std::vector<double> weights) {
  double s = 0.0;
  for (double v : weights) {
    if (!std::isfinite(v) || v < 0.0) throw DomainError("ProbVector::normalized: invalid weight");
    s += v;
  }
  if (!(s > 0.0)) throw DomainError("ProbVector::normalized: zero total weight");
  for (double& v : weights) v /= s;
  return ProbVector(std::move(weights));
}

double ProbVector::min() const { return *std::min_element(probs_.begin(), probs_.end()); }

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (q[k] <= 0.0) throw DomainError("kl_divergence: q has zero mass where p does not");
    kl += p[k] * std::log(p[k] / q[k]);
  }
  // Rounding can leave a tiny negative value for p == q.
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------- LossConfig

void LossConfig::validate() const {
  auto nonneg = [](double v, const char* n) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(n) + " must be >= 0");
  };
  auto unit = [](double v, const char* n) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(n) + " must lie in [0, 1]");
  };
  auto pos = [](double v, const char* n) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(n) + " must be > 0");
  };
  nonneg(lambda_cmi, "lambda_cmi");
  nonneg(lambda_sep, "lambda_sep");
  nonneg(lambda_inst, "lambda_inst");
  nonneg(lambda_ent, "lambda_ent");
  unit(alpha, "alpha");
  unit(beta, "beta");
  pos(tau_c, "tau_c");
  pos(tau_sep, "tau_sep");
  pos(tau_sharp, "tau_sharp");
  pos(eps_floor, "eps_floor");
  if (!(centroid_momentum >= 0.0 && centroid_momentum < 1.0)) {
    throw ConfigError("centroid_momentum must lie in [0, 1)");
  }
}

// ---------------------------------------------------------------- centroids

ClassCentroids::ClassCentroids(std::size_t num_classes, std::size_t num_tracked, double momentum)
    : num_classes_(num_classes),
      momentum_(momentum),
      centroids_(num_tracked, ProbVector::uniform(num_classes)),
      counts_(num_tracked, 0) {
  if (num_tracked == 0 || num_tracked > num_classes) {
    throw ConfigError("ClassCentroids: need 0 < tracked classes <= K");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("ClassCentroids: momentum outside [0, 1)");
}

void ClassCentroids::check_batch(const Matrix& preds, std::span<const int> labels) const {
  if (preds.rows() != labels.size()) throw DimensionError("centroids: preds/labels length mismatch");
  if (!labels.empty() && preds.cols() != num_classes_) {
    throw DimensionError("centroids: prediction width " + std::to_string(preds.cols()) + " != K");
  }
  for (int y : labels) check_label(y, num_tracked(), "update_centroids");
  for (std::size_t i = 0; i < preds.rows(); ++i) {
    double s = 0.0;
    for (double v : preds.row(i)) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw DomainError("centroids: row " + std::to_string(i) + " is not a distribution");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw DomainError("centroids: row " + std::to_string(i) + " does not sum to 1");
  }
}

void ClassCentroids::update(const Matrix& preds, std::span<const int> labels) {
  check_batch(preds, labels);
  const std::size_t t = num_tracked();
  Matrix sums(t, num_classes_);
  std::vector<std::size_t> n(t, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++n[y];
    for (std::size_t k = 0; k < num_classes_; ++k) sums(y, k) += preds(i, k);
  }
  for (std::size_t y = 0; y < t; ++y) {
    if (n[y] == 0) continue;
    std::vector<double> q(num_classes_);
    for (std::size_t k = 0; k < num_classes_; ++k) {
      q[k] = momentum_ * centroids_[y][k] + (1.0 - momentum_) * sums(y, k) / static_cast<double>(n[y]);
    }
    centroids_[y] = ProbVector::normalized(std::move(q));
    counts_[y] += n[y];
  }
}

void ClassCentroids::set_exact(const Matrix& preds, std::span<const int> labels) {
  check_batch(preds, labels);
  const std::size_t t = num_tracked();
  Matrix sums(t, num_classes_);
  std::vector<std::size_t> n(t, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++n[y];
    for (std::size_t k = 0; k < num_classes_; ++k) sums(y, k) += preds(i, k);
  }
  for (std::size_t y = 0; y < t; ++y) {
    if (n[y] == 0) continue;
    std::vector<double> q(sums.row(y).begin(), sums.row(y).end());
    centroids_[y] = ProbVector::normalized(std::move(q));
    counts_[y] = n[y];
  }
}

Matrix ClassCentroids::as_matrix() const {
  Matrix m(num_tracked(), num_classes_);
  for (std::size_t y = 0; y < num_tracked(); ++y)
    std::copy(centroids_[y].values().begin(), centroids_[y].values().end(), m.row(y).begin());
  return m;
}

ClassCentroids update_centroids(ClassCentroids centroids, const Matrix& preds, std::span<const int> labels) {
  centroids.update(preds, labels);
  return centroids;
}

// ---------------------------------------------------------------- targets

ProbVector refine_target(const ProbVector& q, std::size_t y, std::size_t k, double eps_floor) {
  const std::size_t n = q.size();
  if (y >= n) throw std::out_of_range("refine_target: class " + std::to_string(y) + " >= K");
  if (k > n - 1) throw ContractError("refine_target: k = " + std::to_string(k) + " exceeds K - 1");
  if (eps_floor < 0.0) throw ContractError("refine_target: negative eps_floor");

  std::vector<std::size_t> others;
  others.reserve(n - 1);
  for (std::size_t c = 0; c < n; ++c)
    if (c != y) others.push_back(c);
  std::stable_sort(others.begin(), others.end(),
                   [&q](std::size_t a, std::size_t b) { return q[a] > q[b]; });

  std::vector<double> v(q.values().begin(), q.values().end());
  for (std::size_t i = 0; i < k; ++i) v[others[i]] = 0.0;
  v[y] = 1.0;
  ProbVector out = ProbVector::normalized(std::move(v));
  if (eps_floor == 0.0) return out;
  std::vector<double> floored(out.values().begin(), out.values().end());
  for (double& x : floored) x = std::max(x, eps_floor);
  return ProbVector::normalized(std::move(floored));
}

ProbVector sharpen(const ProbVector& p, double tau) {
  Matrix m = Matrix::row_vector(p.values());
  Matrix s = sharpen_rows(m, tau);
  return ProbVector(std::vector<double>(s.data().begin(), s.data().end()));
}

Matrix sharpen_rows(const Matrix& probs, double tau) {
  if (!(tau > 0.0)) throw ContractError("sharpen: tau must be positive");
  Matrix out(probs.rows(), probs.cols());
  const double power = 1.0 / tau;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto r = probs.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    if (!(mx > 0.0)) throw DomainError("sharpen: row " + std::to_string(i) + " has no mass");
    // Powers relative to the row max, so small tau cannot underflow the whole row.
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double v = r[j] > 0.0 ? std::exp(power * (std::log(r[j]) - std::log(mx))) : 0.0;
      out(i, j) = v;
      s += v;
    }
    for (double& v : out.row(i)) v /= s;
  }
  return out;
}

PredictionBatch PredictionBatch::from_logits(Var logits) {
  return {ad::softmax_rows(logits), ad::log_softmax_rows(logits)};
}

PredictionBatch PredictionBatch::from_probs(Var probs) { return {probs, ad::log(probs)}; }

// ---------------------------------------------------------------- losses

Var loss_cmi_with_targets(const PredictionBatch& preds, const Matrix& targets) {
  Tape& tape = preds.probs.tape();
  if (preds.size() == 0) return zero_scalar(tape);
  if (!targets.same_shape(preds.probs.value())) throw DimensionError("loss_cmi: target shape mismatch");
  Var log_t = tape.constant(log_of(targets));
  Var kl = ad::sum(ad::mul(preds.probs, ad::sub(preds.log_probs, log_t)));
  return ad::scale(kl, 1.0 / static_cast<double>(preds.size()));
}

Var loss_cmi(const PredictionBatch& preds, std::span<const int> labels, const ClassCentroids& centroids,
             std::size_t k, double eps_floor, CmiTarget mode) {
  if (preds.size() != labels.size()) throw DimensionError("loss_cmi: preds/labels length mismatch");
  if (preds.size() == 0) return zero_scalar(preds.probs.tape());
  const std::size_t K = centroids.num_classes();
  if (preds.probs.cols() != K) throw DimensionError("loss_cmi: prediction width != K");
  Matrix targets(labels.size(), K);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i], centroids.num_tracked(), "loss_cmi");
    const auto y = static_cast<std::size_t>(labels[i]);
    ProbVector t;
    if (mode == CmiTarget::refined) {
      t = refine_target(centroids.centroid(y), y, k, eps_floor);
    } else {
      std::vector<double> v(centroids.centroid(y).values().begin(), centroids.centroid(y).values().end());
      bool floored = false;
      for (double& x : v) {
        if (x < eps_floor) {
          x = eps_floor;
          floored = true;
        }
      }
      t = floored ? ProbVector::normalized(std::move(v)) : centroids.centroid(y);
    }
    std::copy(t.values().begin(), t.values().end(), targets.row(i).begin());
  }
  return loss_cmi_with_targets(preds, targets);
}

Var loss_sep(Var centroids, double tau_sep) {
  const std::size_t n = centroids.rows();
  if (n < 2) throw DimensionError("loss_sep: needs at least 2 centroids, got " + std::to_string(n));
  if (!(tau_sep > 0.0)) throw ContractError("loss_sep: tau_sep must be positive");
  Var lse = ad::logsumexp_rows(masked_similarity(centroids, tau_sep));
  return ad::add_scalar(ad::mean(lse), -std::log(static_cast<double>(n - 1)));
}

Var batch_centroids(const ClassCentroids& centroids, Var preds, std::span<const int> labels) {
  if (preds.rows() != labels.size()) throw DimensionError("batch_centroids: preds/labels length mismatch");
  const std::size_t t = centroids.num_tracked();
  const std::size_t K = centroids.num_classes();
  std::vector<std::size_t> n(t, 0);
  for (int y : labels) {
    check_label(y, t, "batch_centroids");
    ++n[static_cast<std::size_t>(y)];
  }
  std::vector<std::size_t> rows;
  for (std::size_t y = 0; y < t; ++y)
    if (n[y] > 0 || centroids.observed(y)) rows.push_back(y);
  if (rows.size() < 2) return {};

  const double m = centroids.momentum();
  Matrix base(rows.size(), K);
  Matrix avg(rows.size(), labels.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t y = rows[r];
    const double keep = n[y] > 0 ? m : 1.0;
    for (std::size_t k = 0; k < K; ++k) base(r, k) = keep * centroids.centroid(y)[k];
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) == y) avg(r, i) = (1.0 - m) / static_cast<double>(n[y]);
    }
  }
  Tape& tape = preds.tape();
  if (labels.empty()) return tape.constant(std::move(base));
  return ad::add(tape.constant(std::move(base)), ad::matmul(tape.constant(std::move(avg)), preds));
}

Var loss_inst_with_targets(const PredictionBatch& view1, const PredictionBatch& view2, const Matrix& target1,
                           const Matrix& target2) {
  if (view1.size() != view2.size()) throw DimensionError("loss_inst: view batch sizes differ");
  if (view1.probs.cols() != view2.probs.cols()) throw DimensionError("loss_inst: view widths differ");
  if (!target1.same_shape(view1.probs.value()) || !target2.same_shape(view2.probs.value())) {
    throw DimensionError("loss_inst: target shape mismatch");
  }
  Tape& tape = view1.probs.tape();
  const std::size_t b = view1.size();
  if (b == 0) return zero_scalar(tape);
  // KL(t || p) = sum t log t - sum t log p; the first sum is a constant.
  const double entropy_part = xlogx_sum(target1) + xlogx_sum(target2);
  Var cross = ad::add(ad::sum(ad::mul(tape.constant(target2), view1.log_probs)),
                      ad::sum(ad::mul(tape.constant(target1), view2.log_probs)));
  return ad::scale(ad::add_scalar(ad::neg(cross), entropy_part), 1.0 / (2.0 * static_cast<double>(b)));
}

Var loss_inst(const PredictionBatch& view1, const PredictionBatch& view2, double tau_sharp) {
  if (view1.size() != view2.size()) throw DimensionError("loss_inst: view batch sizes differ");
  return loss_inst_with_targets(view1, view2, sharpen_rows(view1.probs.value(), tau_sharp),
                                sharpen_rows(view2.probs.value(), tau_sharp));
}

Var loss_ent(Var probs_view1, Var probs_view2) {
  if (probs_view1.rows() + probs_view2.rows() == 0) throw DimensionError("loss_ent: empty batch");
  Var pbar = ad::mean_cols(ad::concat_rows(probs_view1, probs_view2));
  return ad::sum(ad::xlogx(pbar));
}

Var loss_ce(Var logits, std::span<const int> labels, std::size_t num_valid_classes) {
  if (logits.rows() != labels.size()) throw DimensionError("loss_ce: logits/labels length mismatch");
  Tape& tape = logits.tape();
  if (labels.empty()) return zero_scalar(tape);
  const std::size_t bound = std::min(num_valid_classes, logits.cols());
  Matrix onehot(labels.size(), logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i], bound, "loss_ce");
    onehot(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  Var picked = ad::sum(ad::mul(tape.constant(std::move(onehot)), ad::log_softmax_rows(logits)));
  return ad::scale(picked, -1.0 / static_cast<double>(labels.size()));
}

ConSupResult loss_con_sup(Var h, std::span<const int> labels, double tau_c) {
  if (h.rows() != labels.size()) throw DimensionError("loss_con_sup: h/labels length mismatch");
  if (!(tau_c > 0.0)) throw ContractError("loss_con_sup: tau_c must be positive");
  const std::size_t n = labels.size();
  ConSupResult out;
  std::vector<std::size_t> positives(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && labels[i] == labels[j]) ++positives[i];
  const auto anchors = static_cast<std::size_t>(
      std::count_if(positives.begin(), positives.end(), [](std::size_t p) { return p > 0; }));
  out.skipped_anchors = n - anchors;
  if (anchors == 0) {
    out.loss = zero_scalar(h.tape());
    return out;
  }
  Matrix anchor_w(1, n);
  Matrix pos_w(n, n);
  const double inv_anchors = 1.0 / static_cast<double>(anchors);
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i] == 0) continue;
    anchor_w(0, i) = inv_anchors;
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && labels[i] == labels[j]) pos_w(i, j) = inv_anchors / static_cast<double>(positives[i]);
  }
  out.loss = contrastive_from_weights(masked_similarity(h, tau_c), anchor_w, pos_w);
  return out;
}

Var loss_con_unsup(Var h_view1, Var h_view2, double tau_c) {
  if (h_view1.rows() != h_view2.rows()) throw DimensionError("loss_con_unsup: view batch sizes differ");
  if (!(tau_c > 0.0)) throw ContractError("loss_con_unsup: tau_c must be positive");
  const std::size_t b = h_view1.rows();
  if (b == 0) return zero_scalar(h_view1.tape());
  const std::size_t n = 2 * b;
  Matrix anchor_w(1, n, 1.0 / static_cast<double>(n));
  Matrix pos_w(n, n);
  for (std::size_t i = 0; i < n; ++i) pos_w(i, (i + b) % n) = 1.0 / static_cast<double>(n);
  return contrastive_from_weights(masked_similarity(ad::concat_rows(h_view1, h_view2), tau_c), anchor_w,
                                  pos_w);
}

// ---------------------------------------------------------------- composite

LossBreakdown LossBreakdown::combine(double ce, double cmi, double sep, double inst, double ent, double con_l,
                                     double con_u, const LossConfig& c) {
  LossBreakdown b{ce, cmi, sep, inst, ent, con_l, con_u, 0.0, 0.0};
  b.cls = c.lambda_cmi * cmi + c.lambda_sep * sep + c.lambda_inst * inst + c.lambda_ent * ent;
  b.total = c.alpha * ce + (1.0 - c.alpha) * b.cls + c.beta * con_l + (1.0 - c.beta) * con_u;
  return b;
}

LossTerms loss_total(const LossInputs& in, const LossConfig& cfg) {
  if (in.centroids == nullptr) throw ContractError("loss_total: centroids required");
  Tape& tape = in.view1.probs.tape();
  LossTerms t;
  const std::size_t K = in.centroids->num_classes();
  t.labeled_batch_empty = in.labels_labeled.empty();

  if (t.labeled_batch_empty) {
    t.ce = zero_scalar(tape);
    t.cmi = zero_scalar(tape);
  } else {
    t.ce = loss_ce(in.logits_labeled, in.labels_labeled, in.num_old_classes);
    t.cmi = loss_cmi(PredictionBatch::from_logits(in.logits_labeled), in.labels_labeled, *in.centroids,
                     cfg.effective_topk(K), cfg.eps_floor, CmiTarget::refined);
  }
  if (in.labels_h.empty()) {
    t.con_l = zero_scalar(tape);
  } else {
    ConSupResult r = loss_con_sup(in.h_labeled, in.labels_h, cfg.tau_c);
    t.con_l = r.loss;
    t.skipped_anchors = r.skipped_anchors;
  }
  t.sep = in.sep_centroids.valid() ? loss_sep(in.sep_centroids, cfg.tau_sep) : zero_scalar(tape);
  if (in.inst_target1 != nullptr && in.inst_target2 != nullptr) {
    t.inst = loss_inst_with_targets(in.view1, in.view2, *in.inst_target1, *in.inst_target2);
  } else {
    t.inst = loss_inst(in.view1, in.view2, cfg.tau_sharp);
  }
  t.ent = loss_ent(in.view1.probs, in.view2.probs);
  t.con_u = loss_con_unsup(in.h_view1, in.h_view2, cfg.tau_c);

  t.cls = ad::add(ad::add(ad::scale(t.cmi, cfg.lambda_cmi), ad::scale(t.sep, cfg.lambda_sep)),
                  ad::add(ad::scale(t.inst, cfg.lambda_inst), ad::scale(t.ent, cfg.lambda_ent)));
  t.total = ad::add(ad::add(ad::scale(t.ce, cfg.alpha), ad::scale(t.cls, 1.0 - cfg.alpha)),
                    ad::add(ad::scale(t.con_l, cfg.beta), ad::scale(t.con_u, 1.0 - cfg.beta)));
  t.breakdown = LossBreakdown::combine(t.ce.scalar(), t.cmi.scalar(), t.sep.scalar(), t.inst.scalar(),
                                       t.ent.scalar(), t.con_l.scalar(), t.con_u.scalar(), cfg);
  return t;
}

}  // namespace infosculpt
