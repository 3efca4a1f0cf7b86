#include "infosculpt/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <optional>
#include <string>

#include "infosculpt/config_json.hpp"
#include "infosculpt/data.hpp"
#include "infosculpt/errors.hpp"
#include "infosculpt/eval.hpp"
#include "infosculpt/gradcheck.hpp"
#include "infosculpt/model.hpp"
#include "infosculpt/trainer.hpp"

namespace infosculpt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exit code for bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenFlags {
  std::size_t k_old = 3;
  std::size_t k_new = 3;
  std::size_t per_class = 100;
  std::size_t dim = 16;
  double sep = 3.0;
};

// Training flags bound to a default TrainConfig; only flags the user gave
// are copied over the config file.
struct TrainFlags {
  TrainConfig defaults;
  TrainConfig values;
  std::string config_path;
  std::string lr_schedule = "cosine";
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> bound;

  template <class T>
  void add(CLI::App* app, const std::string& name, T TrainConfig::*field, const std::string& help) {
    bind_option(app, name, [field](TrainConfig& c) -> T& { return c.*field; }, help);
  }
  template <class T>
  void add_loss(CLI::App* app, const std::string& name, T LossConfig::*field, const std::string& help) {
    bind_option(app, name, [field](TrainConfig& c) -> T& { return c.loss.*field; }, help);
  }
  template <class T>
  void add_augment(CLI::App* app, const std::string& name, T AugmentConfig::*field, const std::string& help) {
    bind_option(app, name, [field](TrainConfig& c) -> T& { return c.augment.*field; }, help);
  }

  template <class Access>
  void bind_option(CLI::App* app, const std::string& name, Access access, const std::string& help) {
    auto& slot = access(values);
    CLI::Option* opt;
    if constexpr (std::is_same_v<std::remove_reference_t<decltype(slot)>, bool>) {
      opt = app->add_flag(name, slot, help + " [off]");
    } else {
      opt = app->add_option(name, slot, help)->capture_default_str();
    }
    bound.emplace_back(opt, [access, this](TrainConfig& c) { access(c) = access(values); });
  }

  void attach(CLI::App* app) {
    values = defaults;
    app->add_option("--config", config_path, "JSON config file; flags override it");
    add(app, "--epochs", &TrainConfig::epochs, "training epochs");
    add(app, "--batch-size", &TrainConfig::batch_size, "mini-batch size");
    add(app, "--lr", &TrainConfig::learning_rate, "learning rate");
    add(app, "--momentum", &TrainConfig::momentum, "SGD momentum");
    add(app, "--eval-every", &TrainConfig::eval_every, "evaluate every N epochs");
    lr_opt = app->add_option("--lr-schedule", lr_schedule, "cosine or constant")
                 ->check(CLI::IsMember({"cosine", "constant"}))
                 ->capture_default_str();
    add_loss(app, "--lambda-cmi", &LossConfig::lambda_cmi, "weight of the class-level CMI term");
    add_loss(app, "--lambda-sep", &LossConfig::lambda_sep, "weight of the centroid separation term");
    add_loss(app, "--lambda-inst", &LossConfig::lambda_inst, "weight of the instance-level CMI term");
    add_loss(app, "--lambda-ent", &LossConfig::lambda_ent, "weight of the marginal entropy term");
    add_loss(app, "--alpha", &LossConfig::alpha, "cross-entropy share of the classification loss");
    add_loss(app, "--beta", &LossConfig::beta, "supervised share of the contrastive loss");
    add_loss(app, "--tau-c", &LossConfig::tau_c, "contrastive temperature");
    add_loss(app, "--tau-sep", &LossConfig::tau_sep, "separation temperature");
    add_loss(app, "--tau-sharp", &LossConfig::tau_sharp, "sharpening temperature");
    add_loss(app, "--topk", &LossConfig::topk, "hard negatives zeroed in the refined target");
    add_loss(app, "--eps-floor", &LossConfig::eps_floor, "probability floor of the refined target");
    add_loss(app, "--centroid-momentum", &LossConfig::centroid_momentum, "EMA momentum of class centroids");
    add_loss(app, "--exact-centroids", &LossConfig::exact_centroids,
             "recompute centroids over all labeled data each epoch");
    add_augment(app, "--noise-sigma", &AugmentConfig::noise_sigma, "augmentation noise std");
    add_augment(app, "--mask-prob", &AugmentConfig::mask_prob, "augmentation feature drop probability");
  }

  TrainConfig resolve() const {
    TrainConfig c = defaults;
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw std::runtime_error("cannot read " + config_path);
      try {
        from_json(json::parse(is), c);
      } catch (const json::exception& e) {
        throw UsageError("config " + config_path + ": " + e.what());
      }
    }
    for (const auto& [opt, apply] : bound)
      if (opt->count() > 0) apply(c);
    if (lr_opt->count() > 0) c.lr_schedule = lr_schedule == "constant" ? LrSchedule::constant : LrSchedule::cosine;
    return c;
  }

  CLI::Option* lr_opt = nullptr;
};

struct SeedFlag {
  std::uint64_t seed = 0;
  CLI::Option* opt = nullptr;

  void attach(CLI::App* app) { opt = app->add_option("--seed", seed, "random seed")->capture_default_str(); }

  // INFOSCULPT_SEED wins over --seed.
  std::optional<std::uint64_t> resolve() const {
    if (const char* env = std::getenv("INFOSCULPT_SEED"); env && *env) {
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        return v;
      } catch (const std::exception&) {
        throw UsageError(std::string("INFOSCULPT_SEED is not an unsigned integer: ") + env);
      }
    }
    if (opt->count() > 0) return seed;
    return std::nullopt;
  }
  std::uint64_t value() const { return resolve().value_or(seed); }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

// Fits the encoder to the dataset and applies the seed to every stream.
TrainConfig finalize_config(TrainConfig c, const GcdDataset& ds, const SeedFlag& seed) {
  if (auto s = seed.resolve()) {
    c.seed = *s;
    c.encoder.seed = *s;
    c.augment.seed = *s;
  }
  c.encoder.input_dim = ds.input_dim();
  c.encoder.num_classes = ds.num_classes();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return c;
}

json run_header(const std::string& command, const std::string& data, const TrainConfig& c, const GcdDataset& ds) {
  json cfg;
  to_json(cfg, c);
  json header = {{"command", command},
                 {"data", data},
                 {"dataset", {{"n", ds.size()}, {"k_old", ds.k_old}, {"k_new", ds.k_new}, {"seed", ds.seed}}},
                 {"config", cfg}};
  return header;
}

json report_json(const EvalReport& r) {
  json j;
  to_json(j, r);
  return j;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"InfoSculpt generalized category discovery on synthetic benchmarks", "infosculpt"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);

  // gen-data
  GenFlags gen;
  SeedFlag gen_seed;
  std::string gen_out;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a Gaussian GCD dataset (CSV + manifest)");
  gen_cmd->add_option("--k-old", gen.k_old, "labeled (old) classes")->capture_default_str();
  gen_cmd->add_option("--k-new", gen.k_new, "novel classes")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "samples per class")->capture_default_str();
  gen_cmd->add_option("--dim", gen.dim, "input dimension")->capture_default_str();
  gen_cmd->add_option("--sep", gen.sep, "class mean separation")->capture_default_str();
  gen_seed.attach(gen_cmd);
  gen_cmd->add_option("--out", gen_out, "output CSV path")->required();

  // train
  TrainFlags train_flags;
  SeedFlag train_seed;
  std::string train_data, train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "train and write metrics, checkpoint and final evaluation");
  train_cmd->add_option("--data", train_data, "dataset CSV")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_seed.attach(train_cmd);
  train_flags.attach(train_cmd);

  // eval
  std::string eval_data, eval_ckpt, eval_out, eval_emb;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the unlabeled samples");
  eval_cmd->add_option("--data", eval_data, "dataset CSV")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "write the report JSON here");
  eval_cmd->add_option("--embeddings", eval_emb, "export encoder features as CSV");

  // ablate
  TrainFlags ablate_flags;
  SeedFlag ablate_seed;
  std::string ablate_data, ablate_out;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the ce, +rep, +ent, +inst, +cmi, +sep ladder");
  ablate_cmd->add_option("--data", ablate_data, "dataset CSV")->required();
  ablate_cmd->add_option("--out", ablate_out, "output CSV")->required();
  ablate_seed.attach(ablate_cmd);
  ablate_flags.attach(ablate_cmd);

  // gradcheck / oracle
  SeedFlag gc_seed;
  std::size_t gc_instances = 10;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every operator and loss");
  gc_seed.attach(gc_cmd);
  gc_cmd->add_option("--instances", gc_instances, "random points per check")->capture_default_str();

  SeedFlag oracle_seed;
  std::size_t oracle_instances = 100;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "CMI estimator against the exact joint-distribution oracle");
  oracle_seed.attach(oracle_cmd);
  oracle_cmd->add_option("--instances", oracle_instances, "random instances")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) {
      const std::uint64_t seed = gen_seed.value();
      GcdDataset ds;
      try {
        ds = generate_gaussian_gcd(gen.k_old, gen.k_new, gen.per_class, gen.dim, gen.sep, seed);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const fs::path csv = gen_out;
      if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
      save_dataset(ds, csv);
      // Record the generating flags next to what the loader needs.
      json manifest;
      {
        std::ifstream is(manifest_path(csv));
        manifest = json::parse(is);
      }
      manifest["flags"] = {{"k_old", gen.k_old}, {"k_new", gen.k_new}, {"per_class", gen.per_class},
                           {"dim", gen.dim},     {"sep", gen.sep},     {"seed", seed}};
      write_json(manifest_path(csv), manifest);
      out << "wrote " << ds.size() << " rows to " << csv.string() << '\n';
      return 0;
    }

    if (*train_cmd) {
      const GcdDataset ds = load_dataset(train_data);
      const TrainConfig cfg = finalize_config(train_flags.resolve(), ds, train_seed);
      const fs::path dir = train_out;
      fs::create_directories(dir);
      const json header = run_header("train", train_data, cfg, ds);
      write_json(dir / "run.json", header);
      out << header.dump() << '\n';
      const TrainResult res = train(ds, cfg, {dir / "metrics.jsonl", dir / "checkpoint.bin"});
      const json final_report = report_json(res.evals.back().report);
      write_json(dir / "eval.json", final_report);
      out << final_report.dump() << '\n';
      if (res.empty_labeled_batches > 0)
        err << "note: " << res.empty_labeled_batches << " batches had no labeled samples\n";
      return 0;
    }

    if (*eval_cmd) {
      const GcdDataset ds = load_dataset(eval_data);
      const ModelParams params = load_checkpoint(eval_ckpt);
      if (params.config().input_dim != ds.input_dim() || params.config().num_classes != ds.num_classes())
        throw UsageError("checkpoint does not match the dataset dimensions");
      const json report = report_json(evaluate_unlabeled(params, ds));
      if (!eval_out.empty()) write_json(eval_out, report);
      if (!eval_emb.empty()) export_embeddings(params, ds, eval_emb);
      out << report.dump() << '\n';
      return 0;
    }

    if (*ablate_cmd) {
      const GcdDataset ds = load_dataset(ablate_data);
      const TrainConfig cfg = finalize_config(ablate_flags.resolve(), ds, ablate_seed);
      const json header = run_header("ablate", ablate_data, cfg, ds);
      out << header.dump() << '\n';
      const fs::path csv = ablate_out;
      if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
      std::ofstream os(csv, std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write " + csv.string());
      os << "rung,acc_all,acc_old,acc_new\n" << std::setprecision(17);
      for (const AblationRung& rung : ablation_ladder(cfg)) {
        const EvalReport r = train(ds, rung.config).evals.back().report;
        os << rung.name << ',' << r.acc_all << ',' << r.acc_old << ',' << r.acc_new << '\n';
        out << std::setprecision(6) << rung.name << " acc_all=" << r.acc_all << " acc_old=" << r.acc_old
            << " acc_new=" << r.acc_new << '\n';
      }
      if (!os) throw std::runtime_error("write failed: " + csv.string());
      return 0;
    }

    if (*gc_cmd) {
      if (gc_instances == 0) throw UsageError("--instances must be positive");
      const auto results = run_gradient_suite(gc_seed.value(), gc_instances);
      bool ok = true;
      double worst = 0.0;
      for (const auto& r : results) {
        out << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(28) << r.name << " max_rel=" << std::scientific
            << std::setprecision(3) << r.max_rel_error << " max_abs=" << r.max_abs_error << std::defaultfloat
            << " entries=" << r.entries << '\n';
        ok = ok && r.passed;
        worst = std::max(worst, r.max_rel_error);
      }
      out << "max relative error " << std::scientific << std::setprecision(3) << worst << std::defaultfloat << " over "
          << results.size() << " checks: " << (ok ? "PASS" : "FAIL") << '\n';
      return ok ? 0 : 1;
    }

    if (*oracle_cmd) {
      if (oracle_instances == 0) throw UsageError("--instances must be positive");
      const OracleCheckResult r = run_oracle_suite(oracle_seed.value(), oracle_instances);
      out << "instances " << r.instances << '\n'
          << std::scientific << std::setprecision(3) << "max |estimator - joint expansion| " << r.max_route_gap << '\n'
          << "max |loss_cmi - oracle| " << r.max_loss_gap << std::defaultfloat << '\n'
          << (r.passed ? "PASS (<= 1e-10)" : "FAIL (> 1e-10)") << '\n';
      return r.passed ? 0 : 1;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NonFiniteLoss& e) {
    err << "aborted: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace infosculpt
