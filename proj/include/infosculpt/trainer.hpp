#pragma once

// Training loop: two augmented views per batch, one forward of the encoder
// per view, the composite objective, SGD with momentum, then an EMA update
// of the class centroids from the detached view-1 predictions.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "infosculpt/data.hpp"
#include "infosculpt/eval.hpp"
#include "infosculpt/losses.hpp"
#include "infosculpt/model.hpp"

namespace infosculpt {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  LrSchedule lr_schedule = LrSchedule::cosine;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  LossConfig loss;
  EncoderConfig encoder;
  AugmentConfig augment;

  void validate() const;
};

struct RunState {
  ModelParams params;
  std::vector<Matrix> velocity;  // mirrors params tensor shapes
  ClassCentroids centroids;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t empty_labeled_batches = 0;
};

/// Fresh parameters, zero velocity and uniform centroids for K_old classes.
RunState init_run_state(const TrainConfig& config, std::size_t k_old);

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct StepResult {
  LossBreakdown breakdown;
  double lr = 0.0;
};

/// The loss graph of one step on `model`'s tape: both views through the
/// encoder once, labeled terms on the labeled rows of both views.
struct StepGraph {
  LossTerms terms;
  Var probs_view1;
  Var probs_view2;
  Var labeled_probs_view1;  // invalid when the batch has no labeled rows
  std::vector<std::size_t> labeled_rows;
  std::vector<int> labels;
};

StepGraph build_step_graph(const BoundModel& model, const Batch& batch, const ClassCentroids& centroids,
                           const LossConfig& config, const Matrix* inst_target1 = nullptr,
                           const Matrix* inst_target2 = nullptr);

/// One optimization step. Throws NonFiniteLoss (naming the offending
/// components) before any state is modified if a loss term is not finite.
StepResult train_step(RunState& state, const Batch& batch, const TrainConfig& config, std::size_t total_steps);

/// Replaces the centroids with exact class means over all labeled samples.
void refresh_exact_centroids(RunState& state, const TrainingView& view);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

struct EvalRecord {
  std::size_t epoch = 0;
  EvalReport report;
};

struct TrainResult {
  ModelParams params;
  ClassCentroids centroids;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  /// JSONL lines in emission order (steps and evaluations interleaved).
  std::vector<std::string> metrics;
  std::size_t empty_labeled_batches = 0;
};

using Evaluator = std::function<EvalReport(const ModelParams&)>;

/// Core loop over a label-masked view; `evaluate` is the only route to the
/// hidden labels.
TrainResult train(const TrainingView& view, const TrainConfig& config, const Evaluator& evaluate);

struct TrainOutputs {
  std::optional<std::filesystem::path> metrics_path;
  std::optional<std::filesystem::path> checkpoint_path;
};

/// Trains on the dataset's training view and evaluates on its unlabeled part.
TrainResult train(const GcdDataset& dataset, const TrainConfig& config, const TrainOutputs& outputs = {});

std::string step_json_line(const StepRecord& r);
std::string eval_json_line(const EvalRecord& r);

struct AblationRung {
  std::string name;
  TrainConfig config;
};

/// ce, +rep, +ent, +inst, +cmi, +sep: weights switched on cumulatively from
/// the pure supervised baseline up to `full`.
std::vector<AblationRung> ablation_ladder(const TrainConfig& full);

}  // namespace infosculpt
