#pragma once

// Encoder E, projection head phi and classifier head psi.
//
//   z      = E(x)          MLP, ReLU between hidden layers, linear output
//   h      = phi(z)        d -> d, ReLU, -> d_h, then row-wise L2 normalization
//   logits = psi(z)        affine z W + b (or cosine head, see EncoderConfig)

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "infosculpt/autodiff.hpp"
#include "infosculpt/matrix.hpp"

namespace infosculpt {

struct EncoderConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t feature_dim = 32;
  std::size_t proj_dim = 16;
  std::size_t num_classes = 6;
  std::uint64_t seed = 0;
  /// Cosine classifier: logits = <z/|z|, w_k/|w_k|> / cosine_temperature, no bias.
  bool cosine_classifier = false;
  double cosine_temperature = 0.1;

  /// Throws ConfigError on zero dimensions, feature/proj dims below 2, or a
  /// nonpositive cosine temperature.
  void validate() const;
};

/// Named weight and bias tensors for all three networks, in a fixed order.
/// Weights are stored fan_in x fan_out so a layer is x * W + b.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(EncoderConfig config);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t num_tensors() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Matrix& tensor(std::size_t i) const { return tensors_.at(i); }
  Matrix& tensor(std::size_t i) { return tensors_.at(i); }
  const Matrix& get(std::string_view name) const;
  Matrix& get(std::string_view name);
  std::size_t index_of(std::string_view name) const;
  std::size_t num_encoder_layers() const noexcept { return config_.hidden_dims.size() + 1; }

  bool all_finite() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  void add(std::string name, std::size_t rows, std::size_t cols);

  EncoderConfig config_;
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases,
/// deterministic in config.seed.
ModelParams init_model(const EncoderConfig& config);

/// Parameters placed on a tape, one Var per tensor in ModelParams order.
struct BoundModel {
  const ModelParams* params = nullptr;
  std::vector<Var> vars;

  Var var(std::string_view name) const { return vars.at(params->index_of(name)); }
};

/// `trainable = false` binds the tensors as constants (inference).
BoundModel bind(Tape& tape, const ModelParams& params, bool trainable = true);

Var embed(const BoundModel& model, Var x);
Var project(const BoundModel& model, Var z);
Var classify(const BoundModel& model, Var z);

struct ForwardOutputs {
  Var z;
  Var h;
  Var logits;
};

/// One encoder pass feeding both heads.
ForwardOutputs forward(const BoundModel& model, Var x);

// Inference conveniences; no gradient bookkeeping survives the call.
Matrix embed(const ModelParams& params, const Matrix& x);
Matrix project(const ModelParams& params, const Matrix& z);
Matrix classify(const ModelParams& params, const Matrix& z);
/// Argmax of the classifier over each row of x, ties to the lower index.
std::vector<int> predict_clusters(const ModelParams& params, const Matrix& x);

// Checkpoint file, see docs/checkpoint_format.md.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace infosculpt
