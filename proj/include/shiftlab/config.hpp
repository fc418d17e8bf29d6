#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "shiftlab/data.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/metrics.hpp"
#include "shiftlab/training.hpp"

namespace shiftlab {

// Experiment configuration, loadable from a nested JSON file. Every key is
// optional and falls back to the defaults below; unknown keys are rejected so
// typos fail loudly instead of silently running the wrong experiment.

struct TaskConfig {
  enum class Kind { Synthetic, Csv };
  Kind kind = Kind::Synthetic;
  TransferTaskParams synthetic;
  std::string source_train, source_eval, target_train, target_eval;
  std::string label_column = "label";

  void validate() const {
    if (kind == Kind::Synthetic) {
      const TransferTaskParams& p = synthetic;
      if (p.dim < 2) throw ConfigError("task.dim must be >= 2");
      if (p.target_classes < 2) throw ConfigError("task.target_classes must be >= 2");
      if (p.source_classes < p.target_classes ||
          p.source_classes % p.target_classes != 0)
        throw ConfigError("task.source_classes must be a multiple of task.target_classes");
      if (p.samples_per_class < 1)
        throw ConfigError("task.samples_per_class must be >= 1");
      if (!(p.noise > 0.0)) throw ConfigError("task.noise must be positive");
      if (!std::isfinite(p.rotation)) throw ConfigError("task.rotation must be finite");
    } else {
      const std::pair<const char*, const std::string*> required[] = {
          {"source_train", &source_train},
          {"source_eval", &source_eval},
          {"target_train", &target_train},
          {"target_eval", &target_eval}};
      for (const auto& [name, path] : required)
        if (path->empty())
          throw ConfigError(std::string("task.") + name + " is required for csv tasks");
    }
  }
};

struct PretrainConfig {
  std::size_t models = 5;
  std::size_t epochs = 15;
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double lr_final = 1e-3;

  void validate() const {
    if (models < 2) throw ConfigError("pretrain.models must be >= 2");
    if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (!(lr0 > 0.0) || !(lr_final > 0.0))
      throw ConfigError("pretrain learning rates must be positive");
  }
};

struct MetricsConfig {
  double rejection_threshold = 0.065;
  ScoreAggregation uncertainty_aggregation = ScoreAggregation::Mean;

  void validate() const {
    if (std::isnan(rejection_threshold))
      throw ConfigError("metrics.rejection_threshold must not be NaN");
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  std::vector<std::size_t> hidden = {32, 16};
  TaskConfig task;
  PretrainConfig pretrain;
  TrainConfig transfer = TrainConfig::defaults_for(Strategy::Combined);
  MetricsConfig metrics;

  void validate() const {
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    for (std::size_t width : hidden)
      if (width == 0) throw ConfigError("net.hidden widths must be >= 1");
    task.validate();
    pretrain.validate();
    metrics.validate();
    try {
      transfer.validate();
    } catch (const InputError& e) {
      throw ConfigError(std::string("transfer: ") + e.what());
    }
  }
};

// Command-line settings that take precedence over the config file.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<Strategy> strategy;
};

inline std::string to_string(ShiftInit s) {
  switch (s) {
    case ShiftInit::Zeros: return "zeros";
    case ShiftInit::Mean: return "mean";
    case ShiftInit::RandomBinary: return "random_binary";
  }
  throw InputError("unknown shift init");
}

inline std::string to_string(LossAggregation a) {
  return a == LossAggregation::Mean ? "mean" : "sum";
}

inline std::string to_string(ScoreAggregation a) {
  return a == ScoreAggregation::Mean ? "mean" : "max";
}

namespace detail {

inline void require_keys(const nlohmann::json& obj,
                         std::initializer_list<const char*> allowed,
                         const std::string& scope) {
  if (!obj.is_object()) throw ConfigError(scope + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* name : allowed)
      if (key == name) { known = true; break; }
    if (!known) throw ConfigError("unknown key '" + key + "' in " + scope);
  }
}

inline std::uint64_t get_u64(const nlohmann::json& j, const std::string& scope) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
    throw ConfigError(scope + " must be a non-negative integer");
  return j.get<std::uint64_t>();
}

inline std::size_t get_size(const nlohmann::json& j, const std::string& scope) {
  return static_cast<std::size_t>(get_u64(j, scope));
}

inline double get_double(const nlohmann::json& j, const std::string& scope) {
  if (!j.is_number()) throw ConfigError(scope + " must be a number");
  return j.get<double>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& scope) {
  if (!j.is_string()) throw ConfigError(scope + " must be a string");
  return j.get<std::string>();
}

inline ShiftInit shift_init_from_string(const std::string& s) {
  if (s == "zeros") return ShiftInit::Zeros;
  if (s == "mean") return ShiftInit::Mean;
  if (s == "random_binary") return ShiftInit::RandomBinary;
  throw ConfigError("transfer.shift_init must be zeros, mean, or random_binary");
}

inline LossAggregation loss_aggregation_from_string(const std::string& s) {
  if (s == "mean") return LossAggregation::Mean;
  if (s == "sum") return LossAggregation::Sum;
  throw ConfigError("transfer.loss_aggregation must be mean or sum");
}

inline ScoreAggregation score_aggregation_from_string(const std::string& s) {
  if (s == "mean") return ScoreAggregation::Mean;
  if (s == "max") return ScoreAggregation::Max;
  throw ConfigError("metrics.uncertainty_aggregation must be mean or max");
}

inline void parse_task(const nlohmann::json& j, TaskConfig& task) {
  require_keys(j, {"type", "dim", "source_classes", "target_classes",
                   "samples_per_class", "rotation", "noise", "source_train",
                   "source_eval", "target_train", "target_eval", "label_column"},
               "task");
  if (j.contains("type")) {
    const std::string type = get_string(j["type"], "task.type");
    if (type == "synthetic") task.kind = TaskConfig::Kind::Synthetic;
    else if (type == "csv") task.kind = TaskConfig::Kind::Csv;
    else throw ConfigError("task.type must be synthetic or csv");
  }
  if (j.contains("dim")) task.synthetic.dim = get_size(j["dim"], "task.dim");
  if (j.contains("source_classes"))
    task.synthetic.source_classes = get_size(j["source_classes"], "task.source_classes");
  if (j.contains("target_classes"))
    task.synthetic.target_classes = get_size(j["target_classes"], "task.target_classes");
  if (j.contains("samples_per_class"))
    task.synthetic.samples_per_class =
        get_size(j["samples_per_class"], "task.samples_per_class");
  if (j.contains("rotation")) task.synthetic.rotation = get_double(j["rotation"], "task.rotation");
  if (j.contains("noise")) task.synthetic.noise = get_double(j["noise"], "task.noise");
  if (j.contains("source_train")) task.source_train = get_string(j["source_train"], "task.source_train");
  if (j.contains("source_eval")) task.source_eval = get_string(j["source_eval"], "task.source_eval");
  if (j.contains("target_train")) task.target_train = get_string(j["target_train"], "task.target_train");
  if (j.contains("target_eval")) task.target_eval = get_string(j["target_eval"], "task.target_eval");
  if (j.contains("label_column")) task.label_column = get_string(j["label_column"], "task.label_column");
}

inline void parse_pretrain(const nlohmann::json& j, PretrainConfig& pre) {
  require_keys(j, {"models", "epochs", "batch_size", "lr0", "lr_final"}, "pretrain");
  if (j.contains("models")) pre.models = get_size(j["models"], "pretrain.models");
  if (j.contains("epochs")) pre.epochs = get_size(j["epochs"], "pretrain.epochs");
  if (j.contains("batch_size")) pre.batch_size = get_size(j["batch_size"], "pretrain.batch_size");
  if (j.contains("lr0")) pre.lr0 = get_double(j["lr0"], "pretrain.lr0");
  if (j.contains("lr_final")) pre.lr_final = get_double(j["lr_final"], "pretrain.lr_final");
}

// The fine-tuning epoch default depends on the strategy, and the strategy may
// itself be overridden on the command line, so defaults are materialized only
// after both sources have been read.
inline void parse_transfer(const nlohmann::json& j, TrainConfig& t,
                           std::optional<Strategy> cli_strategy) {
  require_keys(j, {"strategy", "total_epochs", "shift_epochs",
                   "finetune_epochs_per_model", "batch_size", "lr0", "lr_final",
                   "shift_init", "loss_aggregation", "post_head_phase_epochs"},
               "transfer");
  Strategy strategy = Strategy::Combined;
  if (j.contains("strategy")) {
    try {
      strategy = strategy_from_string(get_string(j["strategy"], "transfer.strategy"));
    } catch (const InputError& e) {
      throw ConfigError(std::string("transfer.strategy: ") + e.what());
    }
  }
  if (cli_strategy) strategy = *cli_strategy;
  t = TrainConfig::defaults_for(strategy);
  if (j.contains("total_epochs")) t.total_epochs = get_size(j["total_epochs"], "transfer.total_epochs");
  if (j.contains("shift_epochs")) t.shift_epochs = get_size(j["shift_epochs"], "transfer.shift_epochs");
  if (j.contains("finetune_epochs_per_model"))
    t.finetune_epochs_per_model =
        get_size(j["finetune_epochs_per_model"], "transfer.finetune_epochs_per_model");
  if (j.contains("batch_size")) t.batch_size = get_size(j["batch_size"], "transfer.batch_size");
  if (j.contains("lr0")) t.lr0 = get_double(j["lr0"], "transfer.lr0");
  if (j.contains("lr_final")) t.lr_final = get_double(j["lr_final"], "transfer.lr_final");
  if (j.contains("shift_init"))
    t.shift_init = shift_init_from_string(get_string(j["shift_init"], "transfer.shift_init"));
  if (j.contains("loss_aggregation"))
    t.loss_aggregation =
        loss_aggregation_from_string(get_string(j["loss_aggregation"], "transfer.loss_aggregation"));
  if (j.contains("post_head_phase_epochs"))
    t.post_head_phase_epochs =
        get_size(j["post_head_phase_epochs"], "transfer.post_head_phase_epochs");
}

inline void parse_metrics(const nlohmann::json& j, MetricsConfig& m) {
  require_keys(j, {"rejection_threshold", "uncertainty_aggregation"}, "metrics");
  if (j.contains("rejection_threshold"))
    m.rejection_threshold = get_double(j["rejection_threshold"], "metrics.rejection_threshold");
  if (j.contains("uncertainty_aggregation"))
    m.uncertainty_aggregation = score_aggregation_from_string(
        get_string(j["uncertainty_aggregation"], "metrics.uncertainty_aggregation"));
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j,
                                         const CliOverrides& cli = {}) {
  detail::require_keys(j, {"seed", "out_dir", "net", "task", "pretrain",
                           "transfer", "metrics"},
                       "config");
  ExperimentConfig cfg;
  if (j.contains("seed")) cfg.seed = detail::get_u64(j["seed"], "seed");
  if (j.contains("out_dir")) cfg.out_dir = detail::get_string(j["out_dir"], "out_dir");
  if (j.contains("net")) {
    detail::require_keys(j["net"], {"hidden"}, "net");
    if (j["net"].contains("hidden")) {
      const nlohmann::json& h = j["net"]["hidden"];
      if (!h.is_array()) throw ConfigError("net.hidden must be an array");
      cfg.hidden.clear();
      for (const auto& x : h) cfg.hidden.push_back(detail::get_size(x, "net.hidden"));
    }
  }
  if (j.contains("task")) detail::parse_task(j["task"], cfg.task);
  if (j.contains("pretrain")) detail::parse_pretrain(j["pretrain"], cfg.pretrain);
  detail::parse_transfer(j.contains("transfer") ? j["transfer"] : nlohmann::json::object(),
                         cfg.transfer, cli.strategy);
  if (j.contains("metrics")) detail::parse_metrics(j["metrics"], cfg.metrics);

  if (cli.seed) cfg.seed = *cli.seed;
  if (cli.out_dir) cfg.out_dir = *cli.out_dir;
  cfg.transfer.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path,
                                    const CliOverrides& cli = {}) {
  std::ifstream file(path);
  if (!file) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, cli);
}

inline ExperimentConfig default_config(const CliOverrides& cli = {}) {
  return config_from_json(nlohmann::json::object(), cli);
}

// Full echo of the resolved configuration; parsing it back reproduces the run.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["net"]["hidden"] = cfg.hidden;
  nlohmann::json& task = j["task"];
  if (cfg.task.kind == TaskConfig::Kind::Synthetic) {
    task["type"] = "synthetic";
    task["dim"] = cfg.task.synthetic.dim;
    task["source_classes"] = cfg.task.synthetic.source_classes;
    task["target_classes"] = cfg.task.synthetic.target_classes;
    task["samples_per_class"] = cfg.task.synthetic.samples_per_class;
    task["rotation"] = cfg.task.synthetic.rotation;
    task["noise"] = cfg.task.synthetic.noise;
  } else {
    task["type"] = "csv";
    task["source_train"] = cfg.task.source_train;
    task["source_eval"] = cfg.task.source_eval;
    task["target_train"] = cfg.task.target_train;
    task["target_eval"] = cfg.task.target_eval;
    task["label_column"] = cfg.task.label_column;
  }
  nlohmann::json& pre = j["pretrain"];
  pre["models"] = cfg.pretrain.models;
  pre["epochs"] = cfg.pretrain.epochs;
  pre["batch_size"] = cfg.pretrain.batch_size;
  pre["lr0"] = cfg.pretrain.lr0;
  pre["lr_final"] = cfg.pretrain.lr_final;
  nlohmann::json& tr = j["transfer"];
  tr["strategy"] = to_string(cfg.transfer.strategy);
  tr["total_epochs"] = cfg.transfer.total_epochs;
  tr["shift_epochs"] = cfg.transfer.shift_epochs;
  tr["finetune_epochs_per_model"] = cfg.transfer.finetune_epochs_per_model;
  tr["batch_size"] = cfg.transfer.batch_size;
  tr["lr0"] = cfg.transfer.lr0;
  tr["lr_final"] = cfg.transfer.lr_final;
  tr["shift_init"] = to_string(cfg.transfer.shift_init);
  tr["loss_aggregation"] = to_string(cfg.transfer.loss_aggregation);
  tr["post_head_phase_epochs"] = cfg.transfer.post_head_phase_epochs;
  nlohmann::json& met = j["metrics"];
  met["rejection_threshold"] = cfg.metrics.rejection_threshold;
  met["uncertainty_aggregation"] = to_string(cfg.metrics.uncertainty_aggregation);
  return j;
}

}  // namespace shiftlab
