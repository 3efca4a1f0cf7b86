#include "infosculpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "infosculpt/errors.hpp"

namespace infosculpt {

void EncoderConfig::validate() const {
  if (input_dim == 0 || feature_dim == 0 || proj_dim == 0 || num_classes == 0) {
    throw ConfigError("EncoderConfig: dimensions must be positive");
  }
  if (std::any_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t d) { return d == 0; })) {
    throw ConfigError("EncoderConfig: hidden dimensions must be positive");
  }
  if (feature_dim < 2) throw ConfigError("EncoderConfig: feature_dim must be >= 2");
  if (proj_dim < 2) throw ConfigError("EncoderConfig: proj_dim must be >= 2");
  if (cosine_classifier && !(cosine_temperature > 0.0)) {
    throw ConfigError("EncoderConfig: cosine_temperature must be positive");
  }
}

ModelParams::ModelParams(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t fan_in = config_.input_dim;
  const std::size_t layers = config_.hidden_dims.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t fan_out = l + 1 < layers ? config_.hidden_dims[l] : config_.feature_dim;
    add("encoder." + std::to_string(l) + ".weight", fan_in, fan_out);
    add("encoder." + std::to_string(l) + ".bias", 1, fan_out);
    fan_in = fan_out;
  }
  const std::size_t d = config_.feature_dim;
  add("proj.0.weight", d, d);
  add("proj.0.bias", 1, d);
  add("proj.1.weight", d, config_.proj_dim);
  add("proj.1.bias", 1, config_.proj_dim);
  add("cls.weight", d, config_.num_classes);
  if (!config_.cosine_classifier) add("cls.bias", 1, config_.num_classes);
}

void ModelParams::add(std::string name, std::size_t rows, std::size_t cols) {
  names_.push_back(std::move(name));
  tensors_.emplace_back(rows, cols);
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ContractError("ModelParams: no tensor named " + std::string(name));
}

const Matrix& ModelParams::get(std::string_view name) const { return tensors_[index_of(name)]; }
Matrix& ModelParams::get(std::string_view name) { return tensors_[index_of(name)]; }

bool ModelParams::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const Matrix& m) { return m.all_finite(); });
}

ModelParams init_model(const EncoderConfig& config) {
  ModelParams params(config);
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = 0; i < params.num_tensors(); ++i) {
    if (params.name(i).ends_with(".bias")) continue;
    Matrix& w = params.tensor(i);
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.data()) v = dist(rng);
  }
  return params;
}

BoundModel bind(Tape& tape, const ModelParams& params, bool trainable) {
  BoundModel m;
  m.params = &params;
  m.vars.reserve(params.num_tensors());
  for (std::size_t i = 0; i < params.num_tensors(); ++i) {
    m.vars.push_back(trainable ? tape.parameter(params.tensor(i)) : tape.constant(params.tensor(i)));
  }
  return m;
}

namespace {

Var linear(const BoundModel& m, Var x, const std::string& prefix) {
  return ad::add(ad::matmul(x, m.var(prefix + ".weight")), m.var(prefix + ".bias"));
}

}  // namespace

Var embed(const BoundModel& m, Var x) {
  const EncoderConfig& cfg = m.params->config();
  if (x.cols() != cfg.input_dim) {
    throw DimensionError("embed: expected " + std::to_string(cfg.input_dim) + " input columns, got " +
                         std::to_string(x.cols()));
  }
  const std::size_t layers = m.params->num_encoder_layers();
  Var a = x;
  for (std::size_t l = 0; l < layers; ++l) {
    a = linear(m, a, "encoder." + std::to_string(l));
    if (l + 1 < layers) a = ad::relu(a);
  }
  return a;
}

Var project(const BoundModel& m, Var z) {
  if (z.cols() != m.params->config().feature_dim) {
    throw DimensionError("project: feature width mismatch");
  }
  Var a = ad::relu(linear(m, z, "proj.0"));
  return ad::l2_normalize_rows(linear(m, a, "proj.1"));
}

Var classify(const BoundModel& m, Var z) {
  const EncoderConfig& cfg = m.params->config();
  if (z.cols() != cfg.feature_dim) throw DimensionError("classify: feature width mismatch");
  if (!cfg.cosine_classifier) return linear(m, z, "cls");
  Var w_cols = ad::transpose(ad::l2_normalize_rows(ad::transpose(m.var("cls.weight"))));
  return ad::scale(ad::matmul(ad::l2_normalize_rows(z), w_cols), 1.0 / cfg.cosine_temperature);
}

ForwardOutputs forward(const BoundModel& m, Var x) {
  ForwardOutputs out;
  out.z = embed(m, x);
  out.h = project(m, out.z);
  out.logits = classify(m, out.z);
  return out;
}

Matrix embed(const ModelParams& params, const Matrix& x) {
  Tape tape;
  BoundModel m = bind(tape, params, false);
  return embed(m, tape.constant(x)).value();
}

Matrix project(const ModelParams& params, const Matrix& z) {
  Tape tape;
  BoundModel m = bind(tape, params, false);
  return project(m, tape.constant(z)).value();
}

Matrix classify(const ModelParams& params, const Matrix& z) {
  Tape tape;
  BoundModel m = bind(tape, params, false);
  return classify(m, tape.constant(z)).value();
}

std::vector<int> predict_clusters(const ModelParams& params, const Matrix& x) {
  const Matrix logits = classify(params, embed(params, x));
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

}  // namespace infosculpt
