#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shiftlab/data.hpp"
#include "shiftlab/ensemble.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/metrics.hpp"
#include "shiftlab/nn.hpp"

namespace shiftlab {

enum class Strategy { Finetune, ShiftRandom, ShiftSum, Combined };
enum class LossAggregation { Mean, Sum };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Finetune: return "finetune";
    case Strategy::ShiftRandom: return "shift_random";
    case Strategy::ShiftSum: return "shift_sum";
    case Strategy::Combined: return "combined";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& name) {
  if (name == "finetune") return Strategy::Finetune;
  if (name == "shift_random") return Strategy::ShiftRandom;
  if (name == "shift_sum") return Strategy::ShiftSum;
  if (name == "combined") return Strategy::Combined;
  throw InputError("unknown strategy '" + name + "'");
}

struct TrainConfig {
  Strategy strategy = Strategy::Combined;
  std::size_t total_epochs = 50;             // shift_random / shift_sum
  std::size_t shift_epochs = 10;             // combined, phase 1
  std::size_t finetune_epochs_per_model = 8; // finetune and combined phase 2
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double lr_final = 1e-3;
  std::uint64_t seed = 42;
  ShiftInit shift_init = ShiftInit::Zeros;
  LossAggregation loss_aggregation = LossAggregation::Mean;
  std::size_t post_head_phase_epochs = 0;

  // The standalone fine-tuning default (18 epochs/model) matches the combined
  // schedule's budget: 10 + 8 epochs across 5 models lands on the same 90
  // model-epochs as 18 epochs on each of 5 models.
  static TrainConfig defaults_for(Strategy s) {
    TrainConfig cfg;
    cfg.strategy = s;
    cfg.finetune_epochs_per_model = (s == Strategy::Combined) ? 8 : 18;
    return cfg;
  }

  // Strict, user-facing validation; the train_* entry points themselves accept
  // degenerate zero-epoch phases.
  void validate() const {
    if (batch_size == 0) throw InputError("TrainConfig: batch_size must be >= 1");
    if (!(lr0 > 0.0) || !(lr_final > 0.0))
      throw InputError("TrainConfig: learning rates must be positive");
    if (strategy == Strategy::Combined &&
        (shift_epochs < 1 || finetune_epochs_per_model < 1))
      throw InputError(
          "TrainConfig: combined requires shift_epochs >= 1 and "
          "finetune_epochs_per_model >= 1");
  }
};

enum class TrainPhase { Shift, Finetune, HeadOnly };

inline std::string to_string(TrainPhase p) {
  switch (p) {
    case TrainPhase::Shift: return "shift";
    case TrainPhase::Finetune: return "finetune";
    case TrainPhase::HeadOnly: return "head_only";
  }
  return "?";
}

struct EpochRecord {
  std::size_t epoch = 0;  // global index within the log
  TrainPhase phase = TrainPhase::Shift;
  std::optional<std::size_t> model_index;  // set for fine-tuning entries
  std::vector<double> per_model_loss;      // mean batch loss, where all models run
  double mean_loss = 0.0;
  double lr = 0.0;
  std::optional<double> rel_l2;            // shift phases only
  std::vector<double> eval_accuracy;
  std::size_t cumulative_units = 0;        // model-epochs, non-decreasing
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  std::size_t units() const {
    return epochs.empty() ? 0 : epochs.back().cumulative_units;
  }

  void append(TrainLog&& tail) {
    const std::size_t base_units = units();
    const std::size_t base_epoch = epochs.size();
    for (EpochRecord& r : tail.epochs) {
      r.epoch += base_epoch;
      r.cumulative_units += base_units;
      epochs.push_back(std::move(r));
    }
  }
};

inline double model_eval_accuracy(const NetSpec& spec, const ParamVector& full,
                                  const Dataset& eval) {
  return accuracy(predict_labels(spec, full, eval.features), eval.labels);
}

inline std::vector<double> ensemble_eval_accuracy(const ShiftedEnsemble& ens,
                                                  const Dataset& eval) {
  std::vector<double> acc;
  acc.reserve(ens.size());
  for (std::size_t i = 0; i < ens.size(); ++i)
    acc.push_back(model_eval_accuracy(ens.spec, effective_full(ens, i), eval));
  return acc;
}

inline double aggregate_losses(const std::vector<double>& losses,
                               LossAggregation agg) {
  double acc = 0.0;
  for (double l : losses) acc += l;
  if (agg == LossAggregation::Mean && !losses.empty())
    acc /= static_cast<double>(losses.size());
  return acc;
}

// One batch of the sum-loss step: every model forwards at w_i0 + v, each head
// gets the gradient of its own loss, and the shift gradient is the per-model
// encoder gradients accumulated in ascending model order, scaled by 1/n for
// mean aggregation. The accumulation order is part of the determinism
// contract.
struct EnsembleBatchGrads {
  std::vector<double> losses;
  std::vector<ParamVector> head_grads;
  ParamVector shift_grad;
};

inline EnsembleBatchGrads ensemble_batch_gradients(const ShiftedEnsemble& ens,
                                                   const Matrix& batch,
                                                   const std::vector<int>& labels,
                                                   LossAggregation agg) {
  EnsembleBatchGrads out;
  out.shift_grad = ParamVector::zeros(ens.shift.size());
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const ParamVector full = effective_full(ens, i);
    const ForwardTrace trace = forward(ens.spec, full, batch);
    const LossAndGrad lg = softmax_cross_entropy(trace.logits(), labels);
    const ParamVector grad = backward(ens.spec, full, trace, lg.dlogits);
    auto [enc_grad, head_grad] = split(grad, ens.spec);
    out.losses.push_back(lg.loss);
    out.head_grads.push_back(std::move(head_grad));
    for (std::size_t j = 0; j < out.shift_grad.size(); ++j)
      out.shift_grad[j] += enc_grad[j];
  }
  if (agg == LossAggregation::Mean) {
    const double inv_n = 1.0 / static_cast<double>(ens.size());
    for (double& g : out.shift_grad) g *= inv_n;
  }
  return out;
}

namespace detail {

// Optional trailing phase: freeze v, train every head on its own loss.
inline void run_head_phase(ShiftedEnsemble& ens, const Dataset& train,
                           const Dataset& eval, const TrainConfig& cfg,
                           TrainLog& log) {
  const std::size_t phase_epochs = cfg.post_head_phase_epochs;
  for (std::size_t epoch = 0; epoch < phase_epochs; ++epoch) {
    const double lr = schedule_lr(epoch, phase_epochs, cfg.lr0, cfg.lr_final);
    const auto batches = make_batches(
        train, cfg.batch_size,
        rng::derive(cfg.seed, rng::Purpose::HeadPhaseShuffle), epoch);
    std::vector<double> loss_sums(ens.size(), 0.0);
    for (const auto& idx : batches) {
      const Matrix x = gather_rows(train.features, idx);
      const std::vector<int> y = gather(train.labels, idx);
      EnsembleBatchGrads grads =
          ensemble_batch_gradients(ens, x, y, cfg.loss_aggregation);
      for (std::size_t i = 0; i < ens.size(); ++i) {
        ens.heads[i] = sgd_step(ens.heads[i], grads.head_grads[i], lr);
        loss_sums[i] += grads.losses[i];
      }
    }
    EpochRecord rec;
    rec.epoch = log.epochs.size();
    rec.phase = TrainPhase::HeadOnly;
    rec.lr = lr;
    for (double s : loss_sums)
      rec.per_model_loss.push_back(s / static_cast<double>(batches.size()));
    rec.mean_loss = aggregate_losses(rec.per_model_loss, cfg.loss_aggregation);
    rec.rel_l2 = relative_l2(ens.shift, ens.base_encoders);
    rec.eval_accuracy = ensemble_eval_accuracy(ens, eval);
    rec.cumulative_units = log.units() + ens.size();
    log.epochs.push_back(std::move(rec));
  }
}

}  // namespace detail

// Every model's full parameter vector trained independently by SGD on its own
// loss, with per-model seeded batch shuffles. Models are visited in index
// order; the log holds one entry per (model, epoch).
inline TrainLog train_finetune(std::vector<Model>& models, const Dataset& train,
                               const Dataset& eval, const TrainConfig& cfg) {
  if (train.dim() != eval.dim())
    throw ShapeError("train_finetune: train/eval dimension mismatch");
  TrainLog log;
  const std::size_t epochs = cfg.finetune_epochs_per_model;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].spec.input_dim() != train.dim() ||
        models[i].spec.output_dim() != train.num_classes)
      throw ShapeError("train_finetune: model spec does not match data");
    if (epochs == 0) continue;
    ParamVector full = models[i].full();
    const std::uint64_t shuffle_seed =
        rng::derive(cfg.seed, rng::Purpose::FinetuneShuffle, i);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      const double lr = schedule_lr(epoch, epochs, cfg.lr0, cfg.lr_final);
      const auto batches = make_batches(train, cfg.batch_size, shuffle_seed, epoch);
      double loss_sum = 0.0;
      for (const auto& idx : batches) {
        const Matrix x = gather_rows(train.features, idx);
        const std::vector<int> y = gather(train.labels, idx);
        const ForwardTrace trace = forward(models[i].spec, full, x);
        const LossAndGrad lg = softmax_cross_entropy(trace.logits(), y);
        const ParamVector grad = backward(models[i].spec, full, trace, lg.dlogits);
        full = sgd_step(full, grad, lr);
        loss_sum += lg.loss;
      }
      EpochRecord rec;
      rec.epoch = log.epochs.size();
      rec.phase = TrainPhase::Finetune;
      rec.model_index = i;
      rec.mean_loss = loss_sum / static_cast<double>(batches.size());
      rec.lr = lr;
      rec.eval_accuracy = {model_eval_accuracy(models[i].spec, full, eval)};
      rec.cumulative_units = log.units() + 1;
      log.epochs.push_back(std::move(rec));
    }
    models[i] = make_model(models[i].spec, full);
  }
  return log;
}

// Per batch, one model is drawn uniformly from the seeded stream; only that
// model's head and the shared shift are updated. Bases stay frozen.
inline TrainLog train_shift_random(ShiftedEnsemble& ens, const Dataset& train,
                                   const Dataset& eval, const TrainConfig& cfg) {
  ens.validate();
  TrainLog log;
  rng::SplitMix64 choice(rng::derive(cfg.seed, rng::Purpose::ModelChoice));
  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = schedule_lr(epoch, cfg.total_epochs, cfg.lr0, cfg.lr_final);
    const auto batches = make_batches(train, cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (const auto& idx : batches) {
      const std::size_t i = static_cast<std::size_t>(choice.next_below(ens.size()));
      const Matrix x = gather_rows(train.features, idx);
      const std::vector<int> y = gather(train.labels, idx);
      const ParamVector full = effective_full(ens, i);
      const ForwardTrace trace = forward(ens.spec, full, x);
      const LossAndGrad lg = softmax_cross_entropy(trace.logits(), y);
      const ParamVector grad = backward(ens.spec, full, trace, lg.dlogits);
      auto [enc_grad, head_grad] = split(grad, ens.spec);
      ens.heads[i] = sgd_step(ens.heads[i], head_grad, lr);
      ens.shift = sgd_step(ens.shift, enc_grad, lr);
      loss_sum += lg.loss;
    }
    EpochRecord rec;
    rec.epoch = log.epochs.size();
    rec.phase = TrainPhase::Shift;
    rec.mean_loss = loss_sum / static_cast<double>(batches.size());
    rec.lr = lr;
    rec.rel_l2 = relative_l2(ens.shift, ens.base_encoders);
    rec.eval_accuracy = ensemble_eval_accuracy(ens, eval);
    rec.cumulative_units = log.units() + 1;
    log.epochs.push_back(std::move(rec));
  }
  detail::run_head_phase(ens, train, eval, cfg, log);
  return log;
}

// Per batch, all models forward at w_i0 + v on the same samples; heads update
// from their own losses and v from the aggregated encoder gradient. All
// gradients are taken at the pre-step parameters, then applied together.
inline TrainLog train_shift_sum(ShiftedEnsemble& ens, const Dataset& train,
                                const Dataset& eval, const TrainConfig& cfg) {
  ens.validate();
  TrainLog log;
  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = schedule_lr(epoch, cfg.total_epochs, cfg.lr0, cfg.lr_final);
    const auto batches = make_batches(train, cfg.batch_size, cfg.seed, epoch);
    std::vector<double> loss_sums(ens.size(), 0.0);
    for (const auto& idx : batches) {
      const Matrix x = gather_rows(train.features, idx);
      const std::vector<int> y = gather(train.labels, idx);
      EnsembleBatchGrads grads =
          ensemble_batch_gradients(ens, x, y, cfg.loss_aggregation);
      for (std::size_t i = 0; i < ens.size(); ++i) {
        ens.heads[i] = sgd_step(ens.heads[i], grads.head_grads[i], lr);
        loss_sums[i] += grads.losses[i];
      }
      ens.shift = sgd_step(ens.shift, grads.shift_grad, lr);
    }
    EpochRecord rec;
    rec.epoch = log.epochs.size();
    rec.phase = TrainPhase::Shift;
    for (double s : loss_sums)
      rec.per_model_loss.push_back(s / static_cast<double>(batches.size()));
    rec.mean_loss = aggregate_losses(rec.per_model_loss, cfg.loss_aggregation);
    rec.lr = lr;
    rec.rel_l2 = relative_l2(ens.shift, ens.base_encoders);
    rec.eval_accuracy = ensemble_eval_accuracy(ens, eval);
    rec.cumulative_units = log.units() + ens.size();
    log.epochs.push_back(std::move(rec));
  }
  detail::run_head_phase(ens, train, eval, cfg, log);
  return log;
}

struct CombinedResult {
  std::vector<Model> models;
  TrainLog log;
};

// Sum-loss shift training for shift_epochs, bake v into each encoder, then
// fine-tune every materialized model independently. Each phase anneals its
// own lr0 -> lr_final schedule over its own length.
inline CombinedResult train_combined(ShiftedEnsemble& ens, const Dataset& train,
                                     const Dataset& eval, const TrainConfig& cfg) {
  CombinedResult result;
  if (cfg.shift_epochs > 0) {
    TrainConfig phase1 = cfg;
    phase1.strategy = Strategy::ShiftSum;
    phase1.total_epochs = cfg.shift_epochs;
    phase1.post_head_phase_epochs = 0;
    result.log = train_shift_sum(ens, train, eval, phase1);
  }
  result.models = materialize(ens);
  TrainConfig phase2 = cfg;
  phase2.strategy = Strategy::Finetune;
  result.log.append(train_finetune(result.models, train, eval, phase2));
  return result;
}

// Budget currency: one model trained for one epoch. shift_random forwards a
// single model per batch, so an epoch of it costs one unit; an epoch of
// shift_sum runs all n models and costs n.
inline std::size_t compute_budget(const TrainConfig& cfg, std::size_t n_models) {
  if (n_models < 1) throw InputError("compute_budget: need at least one model");
  switch (cfg.strategy) {
    case Strategy::Finetune:
      return cfg.finetune_epochs_per_model * n_models;
    case Strategy::ShiftSum:
      return cfg.total_epochs * n_models;
    case Strategy::ShiftRandom:
      return cfg.total_epochs;
    case Strategy::Combined:
      return (cfg.shift_epochs + cfg.finetune_epochs_per_model) * n_models;
  }
  throw InputError("compute_budget: unknown strategy");
}

}  // namespace shiftlab
