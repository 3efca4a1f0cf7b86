#include "infosculpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "infosculpt/data.hpp"
#include "infosculpt/eval.hpp"
#include "infosculpt/losses.hpp"
#include "infosculpt/model.hpp"
#include "infosculpt/trainer.hpp"

namespace infosculpt {

GradCheckResult check_gradient(std::string name, const ScalarGraph& f, const std::vector<Matrix>& inputs,
                               const GradCheckOptions& options) {
  GradCheckResult res;
  res.name = std::move(name);

  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.parameter(m));
    Var root = f(tape, leaves);
    tape.backward(root);
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }

  auto eval_at = [&](const std::vector<Matrix>& point) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& m : point) leaves.push_back(tape.constant(m));
    return f(tape, leaves).scalar();
  };

  std::vector<Matrix> point = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const double x0 = inputs[k].data()[e];
      point[k].data()[e] = x0 + options.step;
      const double up = eval_at(point);
      point[k].data()[e] = x0 - options.step;
      const double down = eval_at(point);
      point[k].data()[e] = x0;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k].data()[e];
      const double abs_err = std::abs(a - numeric);
      ++res.entries;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        res.passed = false;
        res.max_rel_error = std::numeric_limits<double>::infinity();
        continue;
      }
      // Near-zero gradients are compared against abs_tol instead of themselves.
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.abs_tol});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      res.max_rel_error = std::max(res.max_rel_error, rel);
      if (rel >= options.rel_tol) res.passed = false;
    }
  }
  return res;
}

GradCheckResult merge_results(std::string name, std::span<const GradCheckResult> parts) {
  GradCheckResult out;
  out.name = std::move(name);
  for (const auto& p : parts) {
    out.max_rel_error = std::max(out.max_rel_error, p.max_rel_error);
    out.max_abs_error = std::max(out.max_abs_error, p.max_abs_error);
    out.entries += p.entries;
    out.passed = out.passed && p.passed;
  }
  return out;
}

namespace {

Matrix normal_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

Matrix softmax_of(const Matrix& logits) {
  Tape t;
  return ad::softmax_rows(t.constant(logits)).value();
}

// Random weighted sum, so every output entry carries a distinct weight.
Var weighted(Tape& tape, Var out, const Matrix& w) { return ad::sum(ad::mul(tape.constant(w), out)); }

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Labels in [0, classes) where every class appears at least twice when possible.
std::vector<int> paired_labels(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>((i / 2) % classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

using Case = std::function<GradCheckResult(std::mt19937_64&, const GradCheckOptions&)>;

struct NamedCase {
  std::string name;
  Case run;
};

// Wraps a unary operator check on an r x c input with a weighted reduction.
NamedCase unary(std::string name, std::function<Var(Var)> op, std::function<Matrix(std::mt19937_64&)> gen,
                std::size_t out_rows_hint = 0) {
  (void)out_rows_hint;
  return {name, [name, op, gen](std::mt19937_64& rng, const GradCheckOptions& o) {
            Matrix x = gen(rng);
            Matrix w;
            {
              Tape t;
              const Matrix& out = op(t.constant(x)).value();
              w = normal_matrix(rng, out.rows(), out.cols());
            }
            return check_gradient(
                name, [&](Tape& t, std::span<const Var> in) { return weighted(t, op(in[0]), w); }, {x}, o);
          }};
}

NamedCase binary(std::string name, std::function<Var(Var, Var)> op, std::function<Matrix(std::mt19937_64&)> gen_a,
                 std::function<Matrix(std::mt19937_64&)> gen_b) {
  return {name, [name, op, gen_a, gen_b](std::mt19937_64& rng, const GradCheckOptions& o) {
            Matrix a = gen_a(rng);
            Matrix b = gen_b(rng);
            Matrix w;
            {
              Tape t;
              const Matrix& out = op(t.constant(a), t.constant(b)).value();
              w = normal_matrix(rng, out.rows(), out.cols());
            }
            return check_gradient(
                name, [&](Tape& t, std::span<const Var> in) { return weighted(t, op(in[0], in[1]), w); }, {a, b},
                o);
          }};
}

std::function<Matrix(std::mt19937_64&)> gauss(std::size_t r, std::size_t c) {
  return [r, c](std::mt19937_64& rng) { return normal_matrix(rng, r, c); };
}

std::function<Matrix(std::mt19937_64&)> positive(std::size_t r, std::size_t c) {
  return [r, c](std::mt19937_64& rng) { return uniform_matrix(rng, r, c, 0.5, 2.0); };
}

std::vector<NamedCase> operator_cases() {
  std::vector<NamedCase> cases;
  cases.push_back(binary("op/matmul", [](Var a, Var b) { return ad::matmul(a, b); }, gauss(3, 4), gauss(4, 2)));
  cases.push_back(unary("op/transpose", [](Var a) { return ad::transpose(a); }, gauss(3, 4)));
  cases.push_back(binary("op/add", [](Var a, Var b) { return ad::add(a, b); }, gauss(3, 4), gauss(3, 4)));
  cases.push_back(binary("op/add_row_broadcast", [](Var a, Var b) { return ad::add(a, b); }, gauss(3, 4), gauss(1, 4)));
  cases.push_back(binary("op/sub", [](Var a, Var b) { return ad::sub(a, b); }, gauss(3, 4), gauss(3, 4)));
  cases.push_back(binary("op/sub_row_broadcast", [](Var a, Var b) { return ad::sub(a, b); }, gauss(3, 4), gauss(1, 4)));
  cases.push_back(binary("op/mul", [](Var a, Var b) { return ad::mul(a, b); }, gauss(3, 4), gauss(3, 4)));
  cases.push_back(unary("op/scale", [](Var a) { return ad::scale(a, -1.7); }, gauss(3, 4)));
  cases.push_back(unary("op/add_scalar", [](Var a) { return ad::add_scalar(a, 0.3); }, gauss(3, 4)));
  cases.push_back(unary("op/log", [](Var a) { return ad::log(a); }, positive(3, 4)));
  cases.push_back(unary("op/exp", [](Var a) { return ad::exp(a); }, gauss(3, 4)));
  cases.push_back(unary("op/relu", [](Var a) { return ad::relu(a); }, gauss(3, 4)));
  cases.push_back(unary("op/xlogx", [](Var a) { return ad::xlogx(a); }, positive(3, 4)));
  cases.push_back(unary("op/softmax_rows", [](Var a) { return ad::softmax_rows(a); }, gauss(3, 5)));
  cases.push_back(unary("op/log_softmax_rows", [](Var a) { return ad::log_softmax_rows(a); }, gauss(3, 5)));
  cases.push_back(unary("op/logsumexp_rows", [](Var a) { return ad::logsumexp_rows(a); }, gauss(3, 5)));
  cases.push_back(unary("op/l2_normalize_rows", [](Var a) { return ad::l2_normalize_rows(a); }, gauss(3, 4)));
  cases.push_back(unary("op/sum_rows", [](Var a) { return ad::sum_rows(a); }, gauss(3, 4)));
  cases.push_back(unary("op/mean_rows", [](Var a) { return ad::mean_rows(a); }, gauss(3, 4)));
  cases.push_back(unary("op/mean_cols", [](Var a) { return ad::mean_cols(a); }, gauss(3, 4)));
  cases.push_back(unary("op/sum", [](Var a) { return ad::sum(a); }, gauss(3, 4)));
  cases.push_back(unary("op/mean", [](Var a) { return ad::mean(a); }, gauss(3, 4)));
  cases.push_back(binary("op/concat_rows", [](Var a, Var b) { return ad::concat_rows(a, b); }, gauss(2, 4), gauss(3, 4)));
  cases.push_back(unary(
      "op/select_rows",
      [](Var a) {
        const std::size_t rows[] = {2, 0, 2, 1};
        return ad::select_rows(a, rows);
      },
      gauss(3, 4)));
  return cases;
}

std::vector<NamedCase> loss_cases() {
  std::vector<NamedCase> cases;

  cases.push_back({"loss/ce", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t k = pick(rng, 2, 5), b = pick(rng, 1, 8);
                     std::vector<int> labels(b);
                     for (int& y : labels) y = static_cast<int>(pick(rng, 0, k - 1));
                     return check_gradient(
                         "loss/ce", [&](Tape&, std::span<const Var> in) { return loss_ce(in[0], labels, k); },
                         {normal_matrix(rng, b, k, 2.0)}, o);
                   }});

  cases.push_back({"loss/cmi", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t k = pick(rng, 2, 5), tracked = pick(rng, 1, k), b = pick(rng, 1, 8);
                     std::vector<int> labels(b);
                     for (int& y : labels) y = static_cast<int>(pick(rng, 0, tracked - 1));
                     ClassCentroids c(k, tracked, 0.5);
                     std::vector<int> all(tracked);
                     for (std::size_t y = 0; y < tracked; ++y) all[y] = static_cast<int>(y);
                     c.update(softmax_of(normal_matrix(rng, tracked, k, 2.0)), all);
                     const std::size_t topk = pick(rng, 0, k - 1);
                     return check_gradient(
                         "loss/cmi",
                         [&](Tape&, std::span<const Var> in) {
                           return loss_cmi(PredictionBatch::from_logits(in[0]), labels, c, topk, 1e-6);
                         },
                         {normal_matrix(rng, b, k, 2.0)}, o);
                   }});

  cases.push_back({"loss/sep", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t k = pick(rng, 2, 5), n = pick(rng, 2, k);
                     return check_gradient(
                         "loss/sep",
                         [&](Tape&, std::span<const Var> in) { return loss_sep(ad::softmax_rows(in[0]), 0.1); },
                         {normal_matrix(rng, n, k, 2.0)}, o);
                   }});

  cases.push_back({"loss/sep_batch_centroids", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t k = pick(rng, 2, 5), tracked = pick(rng, 2, k), b = pick(rng, 1, 8);
                     ClassCentroids c(k, tracked, 0.9);
                     std::vector<int> all(tracked);
                     for (std::size_t y = 0; y < tracked; ++y) all[y] = static_cast<int>(y);
                     c.update(softmax_of(normal_matrix(rng, tracked, k, 2.0)), all);
                     std::vector<int> labels(b);
                     for (int& y : labels) y = static_cast<int>(pick(rng, 0, tracked - 1));
                     return check_gradient(
                         "loss/sep_batch_centroids",
                         [&](Tape&, std::span<const Var> in) {
                           return loss_sep(batch_centroids(c, ad::softmax_rows(in[0]), labels), 0.1);
                         },
                         {normal_matrix(rng, b, k, 2.0)}, o);
                   }});

  cases.push_back({"loss/inst", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t k = pick(rng, 2, 5), b = pick(rng, 1, 8);
                     const Matrix l1 = normal_matrix(rng, b, k, 2.0), l2 = normal_matrix(rng, b, k, 2.0);
                     // Targets are stop-gradient: frozen at the base point.
                     const Matrix t1 = sharpen_rows(softmax_of(l1), 0.5), t2 = sharpen_rows(softmax_of(l2), 0.5);
                     return check_gradient(
                         "loss/inst",
                         [&](Tape&, std::span<const Var> in) {
                           return loss_inst_with_targets(PredictionBatch::from_logits(in[0]),
                                                         PredictionBatch::from_logits(in[1]), t1, t2);
                         },
                         {l1, l2}, o);
                   }});

  cases.push_back({"loss/ent", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t k = pick(rng, 2, 5), b = pick(rng, 1, 8);
                     return check_gradient(
                         "loss/ent",
                         [&](Tape&, std::span<const Var> in) {
                           return loss_ent(ad::softmax_rows(in[0]), ad::softmax_rows(in[1]));
                         },
                         {normal_matrix(rng, b, k, 2.0), normal_matrix(rng, b, k, 2.0)}, o);
                   }});

  cases.push_back({"loss/con_sup", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t b = pick(rng, 2, 8), d = pick(rng, 2, 5);
                     const std::vector<int> labels = paired_labels(rng, b, pick(rng, 1, 3));
                     return check_gradient(
                         "loss/con_sup",
                         [&](Tape&, std::span<const Var> in) {
                           return loss_con_sup(ad::l2_normalize_rows(in[0]), labels, 0.5).loss;
                         },
                         {normal_matrix(rng, b, d)}, o);
                   }});

  cases.push_back({"loss/con_unsup", [](std::mt19937_64& rng, const GradCheckOptions& o) {
                     const std::size_t b = pick(rng, 1, 8), d = pick(rng, 2, 5);
                     return check_gradient(
                         "loss/con_unsup",
                         [&](Tape&, std::span<const Var> in) {
                           return loss_con_unsup(ad::l2_normalize_rows(in[0]), ad::l2_normalize_rows(in[1]), 0.5);
                         },
                         {normal_matrix(rng, b, d), normal_matrix(rng, b, d)}, o);
                   }});
  return cases;
}

EncoderConfig small_encoder(std::uint64_t seed, bool cosine = false) {
  EncoderConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {6};
  cfg.feature_dim = 5;
  cfg.proj_dim = 3;
  cfg.num_classes = 4;
  cfg.seed = seed;
  cfg.cosine_classifier = cosine;
  cfg.cosine_temperature = 0.5;
  return cfg;
}

std::vector<Matrix> tensors_of(const ModelParams& p) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < p.num_tensors(); ++i) out.push_back(p.tensor(i));
  return out;
}

// Random biases so ReLU kinks are not all at the same place.
ModelParams random_model(std::mt19937_64& rng, bool cosine = false) {
  ModelParams p = init_model(small_encoder(rng(), cosine));
  for (std::size_t i = 0; i < p.num_tensors(); ++i)
    if (p.name(i).ends_with(".bias")) p.tensor(i) = normal_matrix(rng, 1, p.tensor(i).cols(), 0.3);
  return p;
}

NamedCase model_head(std::string name, int head, bool cosine = false) {
  return {name, [name, head, cosine](std::mt19937_64& rng, const GradCheckOptions& o) {
            const ModelParams tmpl = random_model(rng, cosine);
            const Matrix x = normal_matrix(rng, pick(rng, 2, 6), 4);
            Matrix w;
            auto build = [&](Tape& t, std::span<const Var> in) {
              BoundModel m{&tmpl, std::vector<Var>(in.begin(), in.end())};
              Var z = embed(m, t.constant(x));
              if (head == 0) return ad::mean(z);
              Var out = head == 1 ? project(m, z) : classify(m, z);
              if (w.empty()) w = normal_matrix(rng, out.rows(), out.cols());
              return weighted(t, out, w);
            };
            return check_gradient(name, build, tensors_of(tmpl), o);
          }};
}

Batch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t k_old) {
  Batch batch;
  batch.view1 = normal_matrix(rng, b, 4);
  batch.view2 = normal_matrix(rng, b, 4);
  for (std::size_t i = 0; i < b; ++i) {
    const bool labeled = i < b / 2 + 1;
    batch.is_labeled.push_back(labeled ? 1 : 0);
    batch.labels.push_back(labeled ? static_cast<int>(i % k_old) : -1);
    batch.sample_ids.push_back(i);
  }
  return batch;
}

NamedCase composite_case(bool exact) {
  std::string name = exact ? "loss/total_exact_centroids" : "loss/total";
  return {name, [name, exact](std::mt19937_64& rng, const GradCheckOptions& o) {
            const ModelParams tmpl = random_model(rng);
            const std::size_t k_old = 2;
            const Batch batch = random_batch(rng, pick(rng, 3, 8), k_old);
            ClassCentroids centroids(4, k_old, 0.9);
            centroids.update(softmax_of(normal_matrix(rng, 2, 4, 2.0)), std::vector<int>{0, 1});
            LossConfig cfg;
            cfg.exact_centroids = exact;
            Matrix t1, t2;
            {
              Tape t;
              const StepGraph g = build_step_graph(bind(t, tmpl), batch, centroids, cfg);
              t1 = sharpen_rows(g.probs_view1.value(), cfg.tau_sharp);
              t2 = sharpen_rows(g.probs_view2.value(), cfg.tau_sharp);
            }
            return check_gradient(
                name,
                [&](Tape&, std::span<const Var> in) {
                  BoundModel m{&tmpl, std::vector<Var>(in.begin(), in.end())};
                  return build_step_graph(m, batch, centroids, cfg, &t1, &t2).terms.total;
                },
                tensors_of(tmpl), o);
          }};
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, std::size_t instances,
                                                const GradCheckOptions& options) {
  std::vector<NamedCase> cases = operator_cases();
  for (auto& c : loss_cases()) cases.push_back(std::move(c));
  cases.push_back(model_head("model/embed", 0));
  cases.push_back(model_head("model/project", 1));
  cases.push_back(model_head("model/classify", 2));
  cases.push_back(model_head("model/classify_cosine", 2, true));
  cases.push_back(composite_case(false));
  cases.push_back(composite_case(true));

  std::vector<GradCheckResult> results;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    std::mt19937_64 rng = seeded_rng(seed, 0x67726164ULL, ci);
    std::vector<GradCheckResult> parts;
    for (std::size_t i = 0; i < instances; ++i) parts.push_back(cases[ci].run(rng, options));
    results.push_back(merge_results(cases[ci].name, parts));
  }
  return results;
}

OracleCheckResult run_oracle_suite(std::uint64_t seed, std::size_t instances, double tol) {
  OracleCheckResult res;
  std::mt19937_64 rng = seeded_rng(seed, 0x6f7261636c65ULL);
  res.passed = true;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t k = pick(rng, 2, 5);
    const std::size_t classes = pick(rng, 1, std::min<std::size_t>(k, 3));
    const std::size_t n = pick(rng, classes, 10);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i < classes ? i : pick(rng, 0, classes - 1));
    std::shuffle(labels.begin(), labels.end(), rng);
    const Matrix preds = softmax_of(normal_matrix(rng, n, k, 1.5));

    CmiOracleResult routes;
    try {
      routes = oracle_cmi_routes(preds, labels);
    } catch (const std::logic_error&) {
      res.passed = false;
      res.max_route_gap = std::numeric_limits<double>::infinity();
      continue;
    }
    res.max_route_gap = std::max(res.max_route_gap, std::abs(routes.estimator - routes.joint_expansion));

    ClassCentroids centroids(k, classes, 0.0);
    centroids.set_exact(preds, labels);
    Tape tape;
    const double loss =
        loss_cmi(PredictionBatch::from_probs(tape.constant(preds)), labels, centroids, 0, 1e-12, CmiTarget::raw)
            .scalar();
    res.max_loss_gap = std::max(res.max_loss_gap, std::abs(loss - routes.estimator));
    ++res.instances;
  }
  res.passed = res.passed && res.max_route_gap <= tol && res.max_loss_gap <= tol;
  return res;
}

}  // namespace infosculpt
