#include "infosculpt/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "infosculpt/config_json.hpp"
#include "infosculpt/errors.hpp"

namespace infosculpt {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
  loss.validate();
  encoder.validate();
  augment.validate();
}

RunState init_run_state(const TrainConfig& config, std::size_t k_old) {
  RunState s;
  s.params = init_model(config.encoder);
  for (std::size_t i = 0; i < s.params.num_tensors(); ++i) {
    s.velocity.emplace_back(s.params.tensor(i).rows(), s.params.tensor(i).cols());
  }
  s.centroids = ClassCentroids(config.encoder.num_classes, k_old, config.loss.centroid_momentum);
  return s;
}

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (config.lr_schedule == LrSchedule::constant || total_steps == 0) return config.learning_rate;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

Var stack_labeled(Var a, Var b, const std::vector<std::size_t>& rows) {
  return ad::concat_rows(ad::select_rows(a, rows), ad::select_rows(b, rows));
}

Matrix select_matrix_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

void check_finite(const LossBreakdown& b, std::size_t step) {
  const std::pair<const char*, double> parts[] = {{"ce", b.ce},     {"cmi", b.cmi},     {"sep", b.sep},
                                                  {"inst", b.inst}, {"ent", b.ent},     {"con_l", b.con_l},
                                                  {"con_u", b.con_u}, {"cls", b.cls}, {"total", b.total}};
  std::string bad;
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) bad += (bad.empty() ? "" : ", ") + std::string(name);
  }
  if (bad.empty()) return;
  nlohmann::json dump = b;
  throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + " in [" + bad + "]: " + dump.dump());
}

}  // namespace

StepGraph build_step_graph(const BoundModel& model, const Batch& batch, const ClassCentroids& centroids,
                           const LossConfig& lc, const Matrix* inst_target1, const Matrix* inst_target2) {
  if (batch.size() == 0) throw ContractError("train_step: empty batch");
  Tape& tape = model.vars.front().tape();
  StepGraph g;
  g.labeled_rows = batch.labeled_rows();
  for (std::size_t r : g.labeled_rows) g.labels.push_back(batch.labels[r]);
  const auto& labeled = g.labeled_rows;

  const ForwardOutputs f1 = forward(model, tape.constant(batch.view1));
  const ForwardOutputs f2 = forward(model, tape.constant(batch.view2));

  LossInputs in;
  in.view1 = PredictionBatch::from_logits(f1.logits);
  in.view2 = PredictionBatch::from_logits(f2.logits);
  in.h_view1 = f1.h;
  in.h_view2 = f2.h;
  in.centroids = &centroids;
  in.num_old_classes = centroids.num_tracked();
  in.inst_target1 = inst_target1;
  in.inst_target2 = inst_target2;
  g.probs_view1 = in.view1.probs;
  g.probs_view2 = in.view2.probs;
  if (!labeled.empty()) {
    in.logits_labeled = stack_labeled(f1.logits, f2.logits, labeled);
    in.h_labeled = stack_labeled(f1.h, f2.h, labeled);
    in.labels_labeled = g.labels;
    in.labels_labeled.insert(in.labels_labeled.end(), g.labels.begin(), g.labels.end());
    in.labels_h = in.labels_labeled;
    g.labeled_probs_view1 = ad::select_rows(in.view1.probs, labeled);
  }
  if (lc.exact_centroids) {
    std::vector<std::size_t> observed;
    for (std::size_t y = 0; y < centroids.num_tracked(); ++y)
      if (centroids.observed(y)) observed.push_back(y);
    if (observed.size() >= 2) in.sep_centroids = tape.constant(select_matrix_rows(centroids.as_matrix(), observed));
  } else if (g.labeled_probs_view1.valid()) {
    in.sep_centroids = batch_centroids(centroids, g.labeled_probs_view1, g.labels);
  } else {
    in.sep_centroids = batch_centroids(centroids, tape.constant(Matrix(0, centroids.num_classes())), g.labels);
  }
  g.terms = loss_total(in, lc);
  return g;
}

StepResult train_step(RunState& state, const Batch& batch, const TrainConfig& config, std::size_t total_steps) {
  Tape tape;
  const BoundModel model = bind(tape, state.params);
  const StepGraph g = build_step_graph(model, batch, state.centroids, config.loss);
  check_finite(g.terms.breakdown, state.step);

  tape.backward(g.terms.total);
  const double lr = learning_rate_at(config, state.step, total_steps);
  for (std::size_t i = 0; i < state.params.num_tensors(); ++i) {
    auto v = state.velocity[i].data();
    auto theta = state.params.tensor(i).data();
    auto grad = model.vars[i].grad().data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = config.momentum * v[j] - lr * grad[j];
      theta[j] += v[j];
    }
  }

  // Centroids follow the parameter step, from the pre-step (detached) predictions.
  if (!config.loss.exact_centroids && g.labeled_probs_view1.valid()) {
    state.centroids.update(g.labeled_probs_view1.value(), g.labels);
  }
  if (g.labeled_rows.empty()) ++state.empty_labeled_batches;
  ++state.step;
  return {g.terms.breakdown, lr};
}

void refresh_exact_centroids(RunState& state, const TrainingView& view) {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (!view.is_labeled[i]) continue;
    rows.push_back(i);
    labels.push_back(view.visible_labels[i]);
  }
  if (rows.empty()) return;
  const Matrix x = select_matrix_rows(*view.features, rows);
  Tape tape;
  const BoundModel model = bind(tape, state.params, false);
  const Var probs = ad::softmax_rows(classify(model, embed(model, tape.constant(x))));
  state.centroids.set_exact(probs.value(), labels);
}

std::string step_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["ce"] = r.loss.ce;
  j["cmi"] = r.loss.cmi;
  j["sep"] = r.loss.sep;
  j["inst"] = r.loss.inst;
  j["ent"] = r.loss.ent;
  j["con_l"] = r.loss.con_l;
  j["con_u"] = r.loss.con_u;
  j["cls"] = r.loss.cls;
  j["total"] = r.loss.total;
  j["lr"] = r.lr;
  return j.dump();
}

std::string eval_json_line(const EvalRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["acc_all"] = r.report.acc_all;
  j["acc_old"] = r.report.acc_old;
  j["acc_new"] = r.report.acc_new;
  return j.dump();
}

TrainResult train(const TrainingView& view, const TrainConfig& config, const Evaluator& evaluate) {
  config.validate();
  if (view.features == nullptr) throw ContractError("train: empty training view");
  if (config.encoder.input_dim != view.features->cols()) {
    throw ConfigError("train: encoder input_dim " + std::to_string(config.encoder.input_dim) +
                      " != dataset feature width " + std::to_string(view.features->cols()));
  }
  if (config.encoder.num_classes != view.k_old + view.k_new) {
    throw ConfigError("train: encoder num_classes must equal k_old + k_new");
  }

  RunState state = init_run_state(config, view.k_old);
  const std::size_t per_epoch = (view.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = per_epoch * config.epochs;
  TrainResult result;

  auto run_eval = [&](std::size_t epoch) {
    EvalRecord rec{epoch, evaluate(state.params)};
    result.metrics.push_back(eval_json_line(rec));
    result.evals.push_back(std::move(rec));
  };

  for (std::size_t e = 0; e < config.epochs; ++e) {
    if (config.loss.exact_centroids) refresh_exact_centroids(state, view);
    for (const Batch& batch : make_batches(view, config.batch_size, config.augment, config.seed, e)) {
      const std::size_t step = state.step;
      const StepResult r = train_step(state, batch, config, total_steps);
      StepRecord rec{step, e, r.breakdown, r.lr};
      result.metrics.push_back(step_json_line(rec));
      result.steps.push_back(rec);
    }
    state.epoch = e + 1;
    if ((e + 1) % config.eval_every == 0 || e + 1 == config.epochs) run_eval(e + 1);
  }
  if (config.epochs == 0) run_eval(0);

  result.params = std::move(state.params);
  result.centroids = std::move(state.centroids);
  result.empty_labeled_batches = state.empty_labeled_batches;
  return result;
}

TrainResult train(const GcdDataset& dataset, const TrainConfig& config, const TrainOutputs& outputs) {
  const TrainingView view = training_view(dataset);
  TrainResult result = train(view, config, [&dataset](const ModelParams& p) { return evaluate_unlabeled(p, dataset); });
  if (outputs.metrics_path) {
    std::ofstream os(*outputs.metrics_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + outputs.metrics_path->string());
    for (const auto& line : result.metrics) os << line << '\n';
  }
  if (outputs.checkpoint_path) save_checkpoint(result.params, *outputs.checkpoint_path);
  return result;
}

std::vector<AblationRung> ablation_ladder(const TrainConfig& full) {
  std::vector<AblationRung> ladder;
  TrainConfig c = full;
  c.loss.lambda_cmi = c.loss.lambda_sep = c.loss.lambda_inst = c.loss.lambda_ent = 0.0;
  c.loss.alpha = 1.0;
  c.loss.beta = 1.0;
  ladder.push_back({"ce", c});
  c.loss.beta = full.loss.beta;
  ladder.push_back({"+rep", c});
  c.loss.alpha = full.loss.alpha;
  c.loss.lambda_ent = full.loss.lambda_ent;
  ladder.push_back({"+ent", c});
  c.loss.lambda_inst = full.loss.lambda_inst;
  ladder.push_back({"+inst", c});
  c.loss.lambda_cmi = full.loss.lambda_cmi;
  ladder.push_back({"+cmi", c});
  c.loss.lambda_sep = full.loss.lambda_sep;
  ladder.push_back({"+sep", c});
  return ladder;
}

}  // namespace infosculpt
