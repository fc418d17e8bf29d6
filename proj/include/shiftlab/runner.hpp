#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <future>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/checkpoint.hpp"
#include "shiftlab/config.hpp"
#include "shiftlab/data.hpp"
#include "shiftlab/ensemble.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/metrics.hpp"
#include "shiftlab/nn.hpp"
#include "shiftlab/report.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/training.hpp"

namespace shiftlab {

struct LoadedTask {
  Dataset source_train, source_eval, target_train, target_eval;
};

inline LoadedTask load_task(const ExperimentConfig& cfg) {
  if (cfg.task.kind == TaskConfig::Kind::Synthetic) {
    TaskPair pair = gen_transfer_pair(cfg.seed, cfg.task.synthetic);
    return {std::move(pair.source_train), std::move(pair.source_eval),
            std::move(pair.target_train), std::move(pair.target_eval)};
  }
  LoadedTask task{
      load_csv(cfg.task.source_train, cfg.task.label_column, Split::Train),
      load_csv(cfg.task.source_eval, cfg.task.label_column, Split::Eval),
      load_csv(cfg.task.target_train, cfg.task.label_column, Split::Train),
      load_csv(cfg.task.target_eval, cfg.task.label_column, Split::Eval)};
  const std::size_t dim = task.source_train.features.cols;
  for (const Dataset* ds : {&task.source_eval, &task.target_train, &task.target_eval})
    if (ds->features.cols != dim)
      throw InputError("csv task: feature dimension differs across files");
  if (task.source_eval.num_classes != task.source_train.num_classes)
    throw InputError("csv task: source splits disagree on class count");
  if (task.target_eval.num_classes != task.target_train.num_classes)
    throw InputError("csv task: target splits disagree on class count");
  return task;
}

namespace detail {

inline NetSpec spec_for(const ExperimentConfig& cfg, std::size_t input_dim,
                        std::size_t classes) {
  NetSpec spec;
  spec.layer_sizes.reserve(cfg.hidden.size() + 2);
  spec.layer_sizes.push_back(input_dim);
  for (std::size_t w : cfg.hidden) spec.layer_sizes.push_back(w);
  spec.layer_sizes.push_back(classes);
  spec.validate();
  return spec;
}

// Head weights drawn the same way init_params draws them, biases zero; the
// stream is independent of the encoder initialization.
inline ParamVector init_head(const NetSpec& spec, std::uint64_t seed) {
  const std::size_t layer = spec.num_layers() - 1;
  const std::size_t fan_in = spec.layer_in(layer);
  const std::size_t fan_out = spec.layer_out(layer);
  std::vector<double> values(spec.layer_param_count(layer), 0.0);
  rng::SplitMix64 stream(seed);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < fan_in * fan_out; ++i)
    values[i] = stream.next_normal() * std_dev;
  return ParamVector(std::move(values));
}

inline std::string checkpoint_dir(const ExperimentConfig& cfg) {
  return (std::filesystem::path(cfg.out_dir) / "checkpoints").string();
}

inline std::vector<ParamVector> member_params(const std::vector<Model>& members) {
  std::vector<ParamVector> fulls;
  fulls.reserve(members.size());
  for (const Model& m : members) fulls.push_back(m.full());
  return fulls;
}

}  // namespace detail

inline NetSpec source_spec(const ExperimentConfig& cfg, const LoadedTask& task) {
  return detail::spec_for(cfg, task.source_train.features.cols,
                          task.source_train.num_classes);
}

inline NetSpec target_spec(const ExperimentConfig& cfg, const LoadedTask& task) {
  return detail::spec_for(cfg, task.target_train.features.cols,
                          task.target_train.num_classes);
}

struct PretrainResult {
  std::vector<Model> models;
  TrainLog log;
  std::vector<std::string> checkpoint_paths;
};

// Trains n independently initialized source-task models and writes one
// checkpoint per model under <out_dir>/checkpoints/.
inline PretrainResult pretrain(const ExperimentConfig& cfg) {
  const LoadedTask task = load_task(cfg);
  const NetSpec spec = source_spec(cfg, task);

  PretrainResult result;
  result.models.reserve(cfg.pretrain.models);
  for (std::size_t i = 0; i < cfg.pretrain.models; ++i) {
    ParamVector full = init_params(spec, rng::derive(cfg.seed, rng::Purpose::WeightInit, i));
    result.models.push_back(make_model(spec, full));
  }

  TrainConfig pre_cfg = TrainConfig::defaults_for(Strategy::Finetune);
  pre_cfg.finetune_epochs_per_model = cfg.pretrain.epochs;
  pre_cfg.batch_size = cfg.pretrain.batch_size;
  pre_cfg.lr0 = cfg.pretrain.lr0;
  pre_cfg.lr_final = cfg.pretrain.lr_final;
  pre_cfg.seed = rng::derive(cfg.seed, rng::Purpose::Pretrain);
  result.log = train_finetune(result.models, task.source_train, task.source_eval, pre_cfg);

  const std::string dir = detail::checkpoint_dir(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("pretrain: cannot create " + dir + ": " + ec.message());
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    const std::string path =
        (std::filesystem::path(dir) / ("model_" + std::to_string(i) + ".json")).string();
    save_checkpoint(result.models[i], path);
    result.checkpoint_paths.push_back(path);
  }
  return result;
}

namespace detail {

struct MetricsBundle {
  DiversityReport diversity;
  double ensemble_accuracy = 0.0;
  RejectionSection rejection;
};

inline MetricsBundle evaluate_members(const NetSpec& spec,
                                      const std::vector<Model>& members,
                                      const Dataset& eval,
                                      const MetricsConfig& mcfg) {
  const PredictionSet ps =
      build_prediction_set(spec, member_params(members), eval);
  MetricsBundle out;
  out.diversity = diversity_report(ps);
  const EnsemblePrediction ens = ensemble_predict(ps);
  out.ensemble_accuracy = accuracy(ens.labels, ps.true_labels);

  const std::vector<double> scores =
      uncertainty_scores(ps, mcfg.uncertainty_aggregation);
  out.rejection.threshold = mcfg.rejection_threshold;
  out.rejection.aggregation = mcfg.uncertainty_aggregation;
  out.rejection.num_classes = ps.classes();
  try {
    const RejectionReport rej =
        reject_and_rescore(ps, scores, mcfg.rejection_threshold);
    out.rejection.retained = rej.retained;
    out.rejection.accuracy_before = rej.accuracy_before;
    out.rejection.accuracy_after = rej.accuracy_after;
    out.rejection.delta = rej.delta;
  } catch (const EmptyRetentionError&) {
    out.rejection.empty_retention = true;
    out.rejection.retained = 0;
    out.rejection.accuracy_before = out.ensemble_accuracy;
  }
  return out;
}

inline void write_run_outputs(const ExperimentConfig& cfg,
                              const ExperimentReport& report,
                              const std::vector<Model>& members,
                              const ShiftedEnsemble* ensemble) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("run: cannot create " + cfg.out_dir + ": " + ec.message());
  write_report(report, (std::filesystem::path(cfg.out_dir) / "report.json").string());
  if (!report.rel_l2_trajectory.empty())
    write_rel_l2_svg(report.rel_l2_trajectory,
                     (std::filesystem::path(cfg.out_dir) / "rel_l2.svg").string());
  const std::filesystem::path final_dir = std::filesystem::path(cfg.out_dir) / "final";
  std::filesystem::create_directories(final_dir, ec);
  if (ec) throw IoError("run: cannot create " + final_dir.string() + ": " + ec.message());
  if (ensemble != nullptr)
    save_checkpoint(*ensemble, (final_dir / "ensemble.json").string());
  for (std::size_t i = 0; i < members.size(); ++i)
    save_checkpoint(members[i],
                    (final_dir / ("model_" + std::to_string(i) + ".json")).string());
}

}  // namespace detail

// Runs the configured transfer strategy on the target task, starting from the
// given source-task checkpoints, and writes report + final checkpoints under
// cfg.out_dir.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const std::vector<std::string>& checkpoint_paths) {
  const auto t0 = std::chrono::steady_clock::now();
  if (checkpoint_paths.size() < 2)
    throw InputError("run: need at least 2 checkpoints, got " +
                     std::to_string(checkpoint_paths.size()));
  const LoadedTask task = load_task(cfg);
  const NetSpec src_spec = source_spec(cfg, task);
  const NetSpec tgt_spec = target_spec(cfg, task);
  const std::size_t n = checkpoint_paths.size();

  std::vector<ParamVector> encoders;
  encoders.reserve(n);
  for (const std::string& path : checkpoint_paths)
    encoders.push_back(load_model_checkpoint(path, &src_spec).encoder_params);
  std::vector<ParamVector> heads;
  heads.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    heads.push_back(detail::init_head(tgt_spec, rng::derive(cfg.seed, rng::Purpose::HeadInit, i)));

  std::vector<Model> members;
  ShiftedEnsemble ensemble;
  TrainLog log;
  const bool shifted = cfg.transfer.strategy != Strategy::Finetune;
  if (shifted) {
    ensemble.spec = tgt_spec;
    ensemble.base_encoders = encoders;
    ensemble.shift = init_shift(cfg.transfer.shift_init, encoders,
                                rng::derive(cfg.seed, rng::Purpose::ShiftInit));
    ensemble.heads = std::move(heads);
    ensemble.validate();
  }
  switch (cfg.transfer.strategy) {
    case Strategy::Finetune:
      for (std::size_t i = 0; i < n; ++i)
        members.push_back(Model{tgt_spec, encoders[i], heads[i]});
      log = train_finetune(members, task.target_train, task.target_eval, cfg.transfer);
      break;
    case Strategy::ShiftRandom:
      log = train_shift_random(ensemble, task.target_train, task.target_eval, cfg.transfer);
      members = materialize(ensemble);
      break;
    case Strategy::ShiftSum:
      log = train_shift_sum(ensemble, task.target_train, task.target_eval, cfg.transfer);
      members = materialize(ensemble);
      break;
    case Strategy::Combined: {
      CombinedResult result =
          train_combined(ensemble, task.target_train, task.target_eval, cfg.transfer);
      members = std::move(result.models);
      log = std::move(result.log);
      break;
    }
  }

  const detail::MetricsBundle metrics =
      detail::evaluate_members(tgt_spec, members, task.target_eval, cfg.metrics);

  ExperimentReport report;
  report.strategy = to_string(cfg.transfer.strategy);
  report.seed = cfg.seed;
  report.config_echo = config_to_json(cfg);
  report.per_model_accuracy = metrics.diversity.per_model_accuracy;
  report.ensemble_accuracy = metrics.ensemble_accuracy;
  report.disagreement = metrics.diversity.disagreement;
  report.mean_disagreement = metrics.diversity.mean_pairwise;
  report.rejection = metrics.rejection;
  for (const EpochRecord& rec : log.epochs)
    if (rec.rel_l2) report.rel_l2_trajectory.push_back(*rec.rel_l2);
  report.budget_model_epochs = compute_budget(cfg.transfer, n);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const bool final_is_ensemble =
      cfg.transfer.strategy == Strategy::ShiftRandom ||
      cfg.transfer.strategy == Strategy::ShiftSum;
  detail::write_run_outputs(cfg, report, members,
                            final_is_ensemble ? &ensemble : nullptr);
  return report;
}

// Evaluation without training: target-spec model checkpoints (or one ensemble
// checkpoint) are scored directly; source-spec model checkpoints get fresh
// seeded heads first, which matches a zero-epoch fine-tuning run bitwise.
inline ExperimentReport evaluate(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& checkpoint_paths) {
  const auto t0 = std::chrono::steady_clock::now();
  if (checkpoint_paths.empty()) throw InputError("evaluate: no checkpoints given");
  const LoadedTask task = load_task(cfg);
  const NetSpec src_spec = source_spec(cfg, task);
  const NetSpec tgt_spec = target_spec(cfg, task);

  std::vector<Model> members;
  if (checkpoint_paths.size() == 1) {
    Checkpoint ckpt = load_checkpoint(checkpoint_paths.front());
    if (const ShiftedEnsemble* ens = std::get_if<ShiftedEnsemble>(&ckpt)) {
      if (!(ens->spec == tgt_spec))
        throw ParseError("evaluate: ensemble checkpoint spec does not match the target task");
      members = materialize(*ens);
    }
  }
  if (members.empty()) {
    if (checkpoint_paths.size() < 2)
      throw InputError("evaluate: need an ensemble checkpoint or at least 2 model checkpoints");
    for (std::size_t i = 0; i < checkpoint_paths.size(); ++i) {
      Model m = load_model_checkpoint(checkpoint_paths[i]);
      if (m.spec == tgt_spec) {
        members.push_back(std::move(m));
      } else if (m.spec == src_spec) {
        members.push_back(Model{tgt_spec, std::move(m.encoder_params),
                                detail::init_head(tgt_spec, rng::derive(cfg.seed, rng::Purpose::HeadInit, i))});
      } else {
        throw ParseError("evaluate: checkpoint spec matches neither source nor target task: " +
                         checkpoint_paths[i]);
      }
    }
  }

  const detail::MetricsBundle metrics =
      detail::evaluate_members(tgt_spec, members, task.target_eval, cfg.metrics);

  ExperimentReport report;
  report.strategy = "evaluate";
  report.seed = cfg.seed;
  report.config_echo = config_to_json(cfg);
  report.per_model_accuracy = metrics.diversity.per_model_accuracy;
  report.ensemble_accuracy = metrics.ensemble_accuracy;
  report.disagreement = metrics.diversity.disagreement;
  report.mean_disagreement = metrics.diversity.mean_pairwise;
  report.rejection = metrics.rejection;
  report.budget_model_epochs = 0;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("evaluate: cannot create " + cfg.out_dir + ": " + ec.message());
  write_report(report, (std::filesystem::path(cfg.out_dir) / "report.json").string());
  return report;
}

// Per-strategy schedules that all consume the same model-epoch budget as the
// configured transfer run.
inline std::vector<std::pair<std::string, TrainConfig>> budget_matched_configs(
    const TrainConfig& base, std::size_t n) {
  const std::size_t budget = compute_budget(base, n);
  if (budget == 0) throw ConfigError("compare: budget is zero");
  if (budget % n != 0)
    throw ConfigError("compare: budget " + std::to_string(budget) +
                      " is not divisible by " + std::to_string(n) + " models");
  const std::size_t per_model = budget / n;
  if (base.shift_epochs >= per_model)
    throw ConfigError("compare: shift_epochs must stay below " +
                      std::to_string(per_model) + " to leave fine-tuning room");

  std::vector<std::pair<std::string, TrainConfig>> out;
  TrainConfig combined = base;
  combined.strategy = Strategy::Combined;
  combined.finetune_epochs_per_model = per_model - base.shift_epochs;
  out.emplace_back(to_string(Strategy::Combined), combined);

  TrainConfig finetune = base;
  finetune.strategy = Strategy::Finetune;
  finetune.finetune_epochs_per_model = per_model;
  out.emplace_back(to_string(Strategy::Finetune), finetune);

  TrainConfig shift_random = base;
  shift_random.strategy = Strategy::ShiftRandom;
  shift_random.total_epochs = budget;
  out.emplace_back(to_string(Strategy::ShiftRandom), shift_random);

  TrainConfig shift_sum = base;
  shift_sum.strategy = Strategy::ShiftSum;
  shift_sum.total_epochs = per_model;
  out.emplace_back(to_string(Strategy::ShiftSum), shift_sum);
  return out;
}

// Pretrains once, then runs all four strategies at the shared budget, each in
// its own subdirectory. Runs are independent, so they execute in parallel;
// each loads its own copy of the checkpoints. Reports come back in strategy
// name order and are also written as a one-row-per-strategy summary table.
inline std::vector<ExperimentReport> compare(const ExperimentConfig& cfg) {
  const PretrainResult pre = pretrain(cfg);
  const auto configs = budget_matched_configs(cfg.transfer, pre.models.size());

  std::vector<std::future<ExperimentReport>> futures;
  futures.reserve(configs.size());
  for (const auto& [name, train_cfg] : configs) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.transfer = train_cfg;
    run_cfg.out_dir = (std::filesystem::path(cfg.out_dir) / name).string();
    futures.push_back(std::async(std::launch::async, [run_cfg, &pre]() {
      return run_experiment(run_cfg, pre.checkpoint_paths);
    }));
  }
  std::vector<ExperimentReport> reports;
  reports.reserve(futures.size());
  for (auto& f : futures) reports.push_back(f.get());

  write_summary(reports, (std::filesystem::path(cfg.out_dir) / "summary.csv").string());
  return reports;
}

// Analytic-vs-finite-difference sweep over small random networks; returns the
// worst relative error seen.
//
// Central differences at eps = 1e-6 carry roundoff noise of order 1e-11 in
// each numeric derivative, so the comparison is only meaningful on instances
// where it can be: every hidden pre-activation well away from the ReLU kink
// (a sample sitting on the kink makes the two one-sided derivatives differ)
// and every gradient coordinate above the noise floor. Instances are drawn
// with nonzero biases, inputs bounded away from zero, damped weights, and a
// single-sample batch, then redrawn deterministically until they satisfy
// those two conditions; the analytic gradient only supplies magnitudes for
// the conditioning test and is still fully checked against the numeric one.
inline double gradcheck_max_error(std::uint64_t seed, std::size_t count) {
  constexpr double kMinPreActivation = 1e-3;
  constexpr double kMinGradMagnitude = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt == 1000)
        throw InputError("gradcheck: no well-conditioned instance found");
      rng::SplitMix64 stream(rng::derive(seed, rng::Purpose::Instance, k, attempt));
      const std::size_t n_layers = 2 + stream.next_below(3);
      NetSpec spec;
      for (std::size_t l = 0; l < n_layers; ++l)
        spec.layer_sizes.push_back(2 + stream.next_below(15));
      spec.validate();

      ParamVector params = init_params(spec, stream.next());
      for (double& w : params.values) w *= 0.5;
      for (std::size_t l = 0; l < spec.num_layers(); ++l)
        for (double& b : layer_biases(spec, params, l)) {
          const double sign = stream.next_below(2) == 0 ? -1.0 : 1.0;
          b = sign * (0.1 + 0.2 * stream.next_double());
        }

      Matrix features(1, spec.input_dim());
      for (double& x : features.data) {
        const double sign = stream.next_below(2) == 0 ? -1.0 : 1.0;
        x = sign * (0.5 + stream.next_double());
      }
      const std::vector<int> labels = {
          static_cast<int>(stream.next_below(spec.output_dim()))};

      const ForwardTrace trace = forward(spec, params, features);
      bool conditioned = true;
      for (std::size_t l = 0; l + 1 < spec.num_layers() && conditioned; ++l)
        for (double pre : trace.pre[l].data)
          if (std::fabs(pre) < kMinPreActivation) { conditioned = false; break; }
      if (conditioned) {
        const LossAndGrad lg = softmax_cross_entropy(trace.logits(), labels);
        const ParamVector analytic = backward(spec, params, trace, lg.dlogits);
        for (double g : analytic.values)
          if (std::fabs(g) < kMinGradMagnitude) { conditioned = false; break; }
      }
      if (!conditioned) continue;

      worst = std::max(worst, grad_check(spec, params, features, labels));
      break;
    }
  }
  return worst;
}

}  // namespace shiftlab
