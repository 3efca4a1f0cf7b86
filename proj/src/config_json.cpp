#include "infosculpt/config_json.hpp"

#include "infosculpt/errors.hpp"

namespace infosculpt {
namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"input_dim", c.input_dim},
       {"hidden_dims", c.hidden_dims},
       {"feature_dim", c.feature_dim},
       {"proj_dim", c.proj_dim},
       {"num_classes", c.num_classes},
       {"seed", c.seed},
       {"cosine_classifier", c.cosine_classifier},
       {"cosine_temperature", c.cosine_temperature}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  read_opt(j, "input_dim", c.input_dim);
  read_opt(j, "hidden_dims", c.hidden_dims);
  read_opt(j, "feature_dim", c.feature_dim);
  read_opt(j, "proj_dim", c.proj_dim);
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "seed", c.seed);
  read_opt(j, "cosine_classifier", c.cosine_classifier);
  read_opt(j, "cosine_temperature", c.cosine_temperature);
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"lambda_cmi", c.lambda_cmi},
       {"lambda_sep", c.lambda_sep},
       {"lambda_inst", c.lambda_inst},
       {"lambda_ent", c.lambda_ent},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"tau_c", c.tau_c},
       {"tau_sep", c.tau_sep},
       {"tau_sharp", c.tau_sharp},
       {"topk", c.topk},
       {"eps_floor", c.eps_floor},
       {"centroid_momentum", c.centroid_momentum},
       {"exact_centroids", c.exact_centroids}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  read_opt(j, "lambda_cmi", c.lambda_cmi);
  read_opt(j, "lambda_sep", c.lambda_sep);
  read_opt(j, "lambda_inst", c.lambda_inst);
  read_opt(j, "lambda_ent", c.lambda_ent);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "beta", c.beta);
  read_opt(j, "tau_c", c.tau_c);
  read_opt(j, "tau_sep", c.tau_sep);
  read_opt(j, "tau_sharp", c.tau_sharp);
  read_opt(j, "topk", c.topk);
  read_opt(j, "eps_floor", c.eps_floor);
  read_opt(j, "centroid_momentum", c.centroid_momentum);
  read_opt(j, "exact_centroids", c.exact_centroids);
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"noise_sigma", c.noise_sigma}, {"mask_prob", c.mask_prob}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  read_opt(j, "noise_sigma", c.noise_sigma);
  read_opt(j, "mask_prob", c.mask_prob);
  read_opt(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"momentum", c.momentum},
       {"lr_schedule", c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"loss", c.loss},
       {"encoder", c.encoder},
       {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "momentum", c.momentum);
  if (auto it = j.find("lr_schedule"); it != j.end()) {
    const auto s = it->get<std::string>();
    if (s == "cosine") {
      c.lr_schedule = LrSchedule::cosine;
    } else if (s == "constant") {
      c.lr_schedule = LrSchedule::constant;
    } else {
      throw ConfigError("lr_schedule must be 'cosine' or 'constant', got '" + s + "'");
    }
  }
  read_opt(j, "seed", c.seed);
  read_opt(j, "eval_every", c.eval_every);
  if (auto it = j.find("loss"); it != j.end()) from_json(*it, c.loss);
  if (auto it = j.find("encoder"); it != j.end()) from_json(*it, c.encoder);
  if (auto it = j.find("augment"); it != j.end()) from_json(*it, c.augment);
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = {{"ce", b.ce},   {"cmi", b.cmi},     {"sep", b.sep},     {"inst", b.inst},   {"ent", b.ent},
       {"con_l", b.con_l}, {"con_u", b.con_u}, {"cls", b.cls}, {"total", b.total}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"acc_all", r.acc_all},   {"acc_old", r.acc_old},         {"acc_new", r.acc_new},
       {"mapping", r.mapping},   {"contingency", r.contingency}, {"num_samples", r.num_samples},
       {"num_old", r.num_old},   {"num_new", r.num_new}};
}

}  // namespace infosculpt
