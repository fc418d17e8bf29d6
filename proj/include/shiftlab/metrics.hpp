#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "shiftlab/data.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/linalg.hpp"
#include "shiftlab/nn.hpp"

namespace shiftlab {

// Per-member class probabilities and predicted labels on one evaluation set.
struct PredictionSet {
  std::vector<Matrix> probabilities;          // n members, each N x C
  std::vector<std::vector<int>> predicted;    // argmax labels, lowest index on ties
  std::vector<int> true_labels;

  std::size_t members() const { return probabilities.size(); }
  std::size_t samples() const { return true_labels.size(); }
  std::size_t classes() const {
    return probabilities.empty() ? 0 : probabilities.front().cols;
  }

  static PredictionSet from_probabilities(std::vector<Matrix> probs,
                                          std::vector<int> truth) {
    if (probs.empty()) throw InputError("PredictionSet: no members");
    PredictionSet ps;
    for (const Matrix& p : probs) {
      if (p.rows != truth.size() || p.cols != probs.front().cols)
        throw ShapeError("PredictionSet: member shapes disagree");
      for (std::size_t s = 0; s < p.rows; ++s) {
        double sum = 0.0;
        for (std::size_t c = 0; c < p.cols; ++c) {
          if (p(s, c) < 0.0 || p(s, c) > 1.0)
            throw InputError("PredictionSet: probability outside [0,1]");
          sum += p(s, c);
        }
        if (std::fabs(sum - 1.0) > 1e-9)
          throw InputError("PredictionSet: probability row does not sum to 1");
      }
    }
    ps.probabilities = std::move(probs);
    ps.true_labels = std::move(truth);
    ps.predicted.reserve(ps.probabilities.size());
    for (const Matrix& p : ps.probabilities) {
      std::vector<int> labels(p.rows);
      for (std::size_t s = 0; s < p.rows; ++s) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < p.cols; ++c)
          if (p(s, c) > p(s, best)) best = c;
        labels[s] = static_cast<int>(best);
      }
      ps.predicted.push_back(std::move(labels));
    }
    return ps;
  }
};

inline Matrix predict_probabilities(const NetSpec& spec, const ParamVector& params,
                                    const Matrix& features) {
  return softmax(forward(spec, params, features).logits());
}

// Argmax of logits per row, lowest index on ties; matches the probability
// argmax since softmax is monotone.
inline std::vector<int> predict_labels(const NetSpec& spec, const ParamVector& params,
                                       const Matrix& features) {
  const Matrix logits = forward(spec, params, features).logits();
  std::vector<int> labels(logits.rows);
  for (std::size_t s = 0; s < logits.rows; ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (logits(s, c) > logits(s, best)) best = c;
    labels[s] = static_cast<int>(best);
  }
  return labels;
}

inline PredictionSet build_prediction_set(const NetSpec& spec,
                                          const std::vector<ParamVector>& members,
                                          const Dataset& eval) {
  std::vector<Matrix> probs;
  probs.reserve(members.size());
  for (const ParamVector& p : members)
    probs.push_back(predict_probabilities(spec, p, eval.features));
  return PredictionSet::from_probabilities(std::move(probs), eval.labels);
}

inline double accuracy(const std::vector<int>& predicted,
                       const std::vector<int>& truth) {
  if (predicted.size() != truth.size())
    throw ShapeError("accuracy: length mismatch");
  if (truth.empty()) throw InputError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// D_ij = (1 / (N * (0.5 A_i + 0.5 A_j))) * sum_n [y_i(x_n) != y_j(x_n)].
// Values above 1 are legal when both accuracies are low.
inline double pairwise_disagreement(const std::vector<int>& preds_i,
                                    const std::vector<int>& preds_j,
                                    const std::vector<int>& truth) {
  if (preds_i.size() != truth.size() || preds_j.size() != truth.size())
    throw ShapeError("pairwise_disagreement: length mismatch");
  if (truth.empty()) throw InputError("pairwise_disagreement: empty input");
  const double a_i = accuracy(preds_i, truth);
  const double a_j = accuracy(preds_j, truth);
  const double denom =
      static_cast<double>(truth.size()) * (0.5 * a_i + 0.5 * a_j);
  if (denom <= 0.0)
    throw DenominatorError("pairwise_disagreement: both accuracies are zero");
  std::size_t mismatches = 0;
  for (std::size_t n = 0; n < truth.size(); ++n)
    if (preds_i[n] != preds_j[n]) ++mismatches;
  return static_cast<double>(mismatches) / denom;
}

// Symmetric n x n matrix with zero diagonal.
inline Matrix disagreement_matrix(const PredictionSet& ps) {
  const std::size_t n = ps.members();
  Matrix d(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v =
          pairwise_disagreement(ps.predicted[i], ps.predicted[j], ps.true_labels);
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

// Mean of D_ij over the n(n-1)/2 unordered pairs.
inline double mean_disagreement(const PredictionSet& ps) {
  const std::size_t n = ps.members();
  if (n < 2) throw InputError("mean_disagreement: need at least 2 members");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      acc += pairwise_disagreement(ps.predicted[i], ps.predicted[j], ps.true_labels);
  return acc / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

// Per-model accuracies, pairwise disagreement matrix, and its mean.
struct DiversityReport {
  std::vector<double> per_model_accuracy;
  Matrix disagreement;
  double mean_pairwise = 0.0;
  std::optional<double> rel_l2;  // filled by callers that track a shift vector
};

inline DiversityReport diversity_report(const PredictionSet& ps) {
  DiversityReport report;
  report.per_model_accuracy.reserve(ps.members());
  for (const auto& preds : ps.predicted)
    report.per_model_accuracy.push_back(accuracy(preds, ps.true_labels));
  report.disagreement = disagreement_matrix(ps);
  report.mean_pairwise = mean_disagreement(ps);
  return report;
}

struct EnsemblePrediction {
  Matrix mean_probabilities;
  std::vector<int> labels;
};

// Probability averaging; label = argmax with lowest index on ties.
inline EnsemblePrediction ensemble_predict(const PredictionSet& ps) {
  if (ps.members() == 0) throw InputError("ensemble_predict: no members");
  const std::size_t n_samples = ps.samples();
  const std::size_t n_classes = ps.classes();
  EnsemblePrediction out;
  out.mean_probabilities = Matrix(n_samples, n_classes, 0.0);
  const double inv_n = 1.0 / static_cast<double>(ps.members());
  for (const Matrix& p : ps.probabilities)
    for (std::size_t i = 0; i < p.data.size(); ++i)
      out.mean_probabilities.data[i] += p.data[i];
  for (double& x : out.mean_probabilities.data) x *= inv_n;

  out.labels.resize(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (out.mean_probabilities(s, c) > out.mean_probabilities(s, best)) best = c;
    out.labels[s] = static_cast<int>(best);
  }
  return out;
}

enum class ScoreAggregation { Mean, Max };

// Per sample: population standard deviation of each class probability across
// members, collapsed to one score by mean (default) or max over classes.
inline std::vector<double> uncertainty_scores(const PredictionSet& ps,
                                              ScoreAggregation agg = ScoreAggregation::Mean) {
  if (ps.members() == 0) throw InputError("uncertainty_scores: no members");
  const std::size_t n_samples = ps.samples();
  const std::size_t n_classes = ps.classes();
  const double inv_m = 1.0 / static_cast<double>(ps.members());

  std::vector<double> scores(n_samples, 0.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    double acc = 0.0;
    double max_sd = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      double mean = 0.0;
      for (const Matrix& p : ps.probabilities) mean += p(s, c);
      mean *= inv_m;
      double var = 0.0;
      for (const Matrix& p : ps.probabilities) {
        const double d = p(s, c) - mean;
        var += d * d;
      }
      var *= inv_m;  // population variance: well-defined for a single member
      const double sd = std::sqrt(var);
      acc += sd;
      max_sd = std::max(max_sd, sd);
    }
    scores[s] = agg == ScoreAggregation::Mean
                    ? acc / static_cast<double>(n_classes)
                    : max_sd;
  }
  return scores;
}

struct RejectionReport {
  double threshold = 0.0;
  std::size_t retained = 0;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  double delta = 0.0;
};

// Keep samples with score <= threshold, re-measure ensemble accuracy on the
// retained set. Rejecting everything is an error, never a silent zero.
inline RejectionReport reject_and_rescore(const PredictionSet& ps,
                                          const std::vector<double>& scores,
                                          double threshold) {
  if (!std::isfinite(threshold) && threshold != std::numeric_limits<double>::infinity())
    throw InputError("reject_and_rescore: threshold must not be NaN");
  if (scores.size() != ps.samples())
    throw ShapeError("reject_and_rescore: score count does not match samples");

  const EnsemblePrediction ens = ensemble_predict(ps);
  RejectionReport report;
  report.threshold = threshold;
  report.accuracy_before = accuracy(ens.labels, ps.true_labels);

  std::size_t retained = 0, hits = 0;
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s] <= threshold) {
      ++retained;
      if (ens.labels[s] == ps.true_labels[s]) ++hits;
    }
  }
  if (retained == 0)
    throw EmptyRetentionError("reject_and_rescore: every sample rejected at threshold " +
                              std::to_string(threshold));
  report.retained = retained;
  report.accuracy_after = static_cast<double>(hits) / static_cast<double>(retained);
  report.delta = report.accuracy_after - report.accuracy_before;
  return report;
}

inline double l2_norm(const ParamVector& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// ||v|| divided by the mean encoder norm: how large the shared shift is
// relative to the encoders it modifies.
inline double relative_l2(const ParamVector& v,
                          const std::vector<ParamVector>& encoders) {
  if (encoders.empty()) throw InputError("relative_l2: need at least one encoder");
  for (const ParamVector& w : encoders)
    if (w.size() != v.size()) throw ShapeError("relative_l2: length mismatch");
  double mean_norm = 0.0;
  for (const ParamVector& w : encoders) mean_norm += l2_norm(w);
  mean_norm /= static_cast<double>(encoders.size());
  if (mean_norm <= 0.0)
    throw DenominatorError("relative_l2: mean encoder norm is zero");
  return l2_norm(v) / mean_norm;
}

}  // namespace shiftlab
