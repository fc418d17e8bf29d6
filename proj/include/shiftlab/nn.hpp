#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "shiftlab/errors.hpp"
#include "shiftlab/linalg.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Dense feedforward network: ReLU on hidden layers, raw logits on the output
// layer (softmax lives inside the loss).
struct NetSpec {
  // input dim, hidden dims..., class count
  std::vector<std::size_t> layer_sizes;

  void validate() const {
    if (layer_sizes.size() < 2)
      throw InputError("NetSpec: need at least input and output sizes");
    for (std::size_t s : layer_sizes)
      if (s < 1) throw InputError("NetSpec: all layer sizes must be >= 1");
  }

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t layer_in(std::size_t l) const { return layer_sizes[l]; }
  std::size_t layer_out(std::size_t l) const { return layer_sizes[l + 1]; }

  // in*out weights followed by out biases
  std::size_t layer_param_count(std::size_t l) const {
    return layer_in(l) * layer_out(l) + layer_out(l);
  }

  std::size_t layer_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < l; ++k) off += layer_param_count(k);
    return off;
  }

  std::size_t param_count() const { return layer_offset(num_layers()); }

  // Everything except the last (head) layer.
  std::size_t encoder_param_count() const {
    return param_count() - layer_param_count(num_layers() - 1);
  }

  bool operator==(const NetSpec&) const = default;
};

// Flat, deterministically ordered parameter vector. Layout is layer-major;
// within a layer, weights row-major (out x in) then biases.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}
  static ParamVector zeros(std::size_t n) { return ParamVector(std::vector<double>(n, 0.0)); }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  auto begin() { return values.begin(); }
  auto end() { return values.end(); }
  auto begin() const { return values.begin(); }
  auto end() const { return values.end(); }

  bool operator==(const ParamVector&) const = default;
};

inline ParamVector concat(const ParamVector& a, const ParamVector& b) {
  ParamVector out;
  out.values.reserve(a.size() + b.size());
  out.values.insert(out.values.end(), a.values.begin(), a.values.end());
  out.values.insert(out.values.end(), b.values.begin(), b.values.end());
  return out;
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw ShapeError("add: length mismatch");
  ParamVector out = a;
  for (std::size_t i = 0; i < b.size(); ++i) out[i] += b[i];
  return out;
}

// Weight/bias views into a flat vector, given the spec.
inline std::span<double> layer_weights(const NetSpec& spec, ParamVector& p, std::size_t l) {
  return {p.data() + spec.layer_offset(l), spec.layer_in(l) * spec.layer_out(l)};
}
inline std::span<const double> layer_weights(const NetSpec& spec, const ParamVector& p,
                                             std::size_t l) {
  return {p.data() + spec.layer_offset(l), spec.layer_in(l) * spec.layer_out(l)};
}
inline std::span<double> layer_biases(const NetSpec& spec, ParamVector& p, std::size_t l) {
  return {p.data() + spec.layer_offset(l) + spec.layer_in(l) * spec.layer_out(l),
          spec.layer_out(l)};
}
inline std::span<const double> layer_biases(const NetSpec& spec, const ParamVector& p,
                                            std::size_t l) {
  return {p.data() + spec.layer_offset(l) + spec.layer_in(l) * spec.layer_out(l),
          spec.layer_out(l)};
}

// He-normal weights, zero biases; one seeded stream consumed in layout order.
inline ParamVector init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p = ParamVector::zeros(spec.param_count());
  rng::SplitMix64 stream(seed);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(spec.layer_in(l)));
    for (double& w : layer_weights(spec, p, l)) w = scale * stream.next_normal();
  }
  return p;
}

// Per-layer pre-activations and activations for one batch.
// act[0] is the input batch; act[l+1] is layer l's output; logits = act.back().
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> act;

  const Matrix& logits() const { return act.back(); }
};

// Losses observed in one optimizer step.
struct StepTrace {
  std::vector<double> per_model_loss;
  double aggregate_loss = 0.0;
  double lr = 0.0;
};

inline ForwardTrace forward(const NetSpec& spec, const ParamVector& params,
                            const Matrix& batch) {
  spec.validate();
  if (params.size() != spec.param_count())
    throw ShapeError("forward: parameter length does not match spec");
  if (batch.cols != spec.input_dim())
    throw ShapeError("forward: batch column count does not match input dim");

  ForwardTrace trace;
  trace.act.reserve(spec.num_layers() + 1);
  trace.pre.reserve(spec.num_layers());
  trace.act.push_back(batch);

  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Matrix& in = trace.act.back();
    const std::size_t n_in = spec.layer_in(l);
    const std::size_t n_out = spec.layer_out(l);
    const auto w = layer_weights(spec, params, l);
    const auto b = layer_biases(spec, params, l);

    Matrix z(in.rows, n_out);
    for (std::size_t s = 0; s < in.rows; ++s) {
      for (std::size_t o = 0; o < n_out; ++o) {
        double acc = b[o];
        const double* wo = w.data() + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) acc += wo[i] * in(s, i);
        z(s, o) = acc;
      }
    }
    trace.pre.push_back(z);
    if (l + 1 < spec.num_layers()) {
      for (double& x : z.data) x = std::max(x, 0.0);  // ReLU on hidden layers
    }
    trace.act.push_back(std::move(z));
  }
  return trace;
}

// Row-wise stabilized softmax.
inline Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t s = 0; s < logits.rows; ++s) {
    double m = logits(s, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, logits(s, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      p(s, c) = std::exp(logits(s, c) - m);
      sum += p(s, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) p(s, c) /= sum;
  }
  return p;
}

struct LossAndGrad {
  double loss = 0.0;
  Matrix dlogits;
};

// Mean cross-entropy over the batch. dlogits = (softmax - onehot) / batch_size,
// so gradients are batch-size independent.
inline LossAndGrad softmax_cross_entropy(const Matrix& logits,
                                         const std::vector<int>& labels) {
  if (labels.size() != logits.rows)
    throw ShapeError("softmax_cross_entropy: label count does not match batch");
  if (logits.rows == 0) throw InputError("softmax_cross_entropy: empty batch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw InputError("softmax_cross_entropy: label out of range");

  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  LossAndGrad out;
  out.dlogits = Matrix(logits.rows, logits.cols);
  double loss = 0.0;
  for (std::size_t s = 0; s < logits.rows; ++s) {
    double m = logits(s, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, logits(s, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(logits(s, c) - m);
    const double log_z = m + std::log(sum);
    loss += log_z - logits(s, static_cast<std::size_t>(labels[s]));
    for (std::size_t c = 0; c < logits.cols; ++c) {
      double p = std::exp(logits(s, c) - m) / sum;
      out.dlogits(s, c) = (p - (static_cast<std::size_t>(labels[s]) == c ? 1.0 : 0.0)) * inv_b;
    }
  }
  out.loss = loss * inv_b;
  return out;
}

// Exact analytic gradient of the loss behind dlogits w.r.t. every parameter,
// in ParamVector layout.
inline ParamVector backward(const NetSpec& spec, const ParamVector& params,
                            const ForwardTrace& trace, const Matrix& dlogits) {
  spec.validate();
  if (params.size() != spec.param_count())
    throw ShapeError("backward: parameter length does not match spec");
  if (trace.act.size() != spec.num_layers() + 1 ||
      trace.pre.size() != spec.num_layers())
    throw ShapeError("backward: trace does not match spec");
  const std::size_t batch = trace.act.front().rows;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    if (trace.act[l].cols != spec.layer_in(l) || trace.act[l].rows != batch ||
        trace.pre[l].cols != spec.layer_out(l) || trace.pre[l].rows != batch)
      throw ShapeError("backward: trace shapes inconsistent with spec");
  }
  if (dlogits.rows != batch || dlogits.cols != spec.output_dim())
    throw ShapeError("backward: dlogits shape mismatch");

  ParamVector grad = ParamVector::zeros(spec.param_count());
  Matrix delta = dlogits;
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const Matrix& in = trace.act[l];
    const std::size_t n_in = spec.layer_in(l);
    const std::size_t n_out = spec.layer_out(l);
    auto gw = layer_weights(spec, grad, l);
    auto gb = layer_biases(spec, grad, l);
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t o = 0; o < n_out; ++o) {
        const double d = delta(s, o);
        double* gwo = gw.data() + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) gwo[i] += d * in(s, i);
        gb[o] += d;
      }
    }
    if (l > 0) {
      const auto w = layer_weights(spec, params, l);
      Matrix prev(batch, n_in, 0.0);
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t o = 0; o < n_out; ++o) {
          const double d = delta(s, o);
          const double* wo = w.data() + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) prev(s, i) += d * wo[i];
        }
        for (std::size_t i = 0; i < n_in; ++i) {
          if (trace.pre[l - 1](s, i) <= 0.0) prev(s, i) = 0.0;  // ReLU gate
        }
      }
      delta = std::move(prev);
    }
  }
  return grad;
}

inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad,
                            double lr) {
  if (params.size() != grad.size()) throw ShapeError("sgd_step: length mismatch");
  if (!(lr > 0.0)) throw InputError("sgd_step: lr must be positive");
  ParamVector out = params;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr * grad[i];
  return out;
}

// Per-epoch geometric interpolation from lr0 to lr_final; both endpoints hit
// exactly. A single-epoch schedule returns lr0.
inline double schedule_lr(std::size_t epoch, std::size_t total_epochs, double lr0,
                          double lr_final) {
  if (total_epochs == 0 || epoch >= total_epochs)
    throw InputError("schedule_lr: epoch out of range");
  if (!(lr0 > 0.0) || !(lr_final > 0.0))
    throw InputError("schedule_lr: learning rates must be positive");
  if (total_epochs == 1) return lr0;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return lr0 * std::pow(lr_final / lr0, t);
}

// Max relative error between the analytic gradient and central finite
// differences, coordinate-wise, denominator max(|a|, |b|, 1e-12).
inline double grad_check(const NetSpec& spec, const ParamVector& params,
                         const Matrix& batch, const std::vector<int>& labels,
                         double eps = 1e-6) {
  if (!(eps > 0.0)) throw InputError("grad_check: eps must be positive");
  ForwardTrace trace = forward(spec, params, batch);
  LossAndGrad lg = softmax_cross_entropy(trace.logits(), labels);
  ParamVector analytic = backward(spec, params, trace, lg.dlogits);

  double max_rel = 0.0;
  ParamVector probe = params;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double f_plus =
        softmax_cross_entropy(forward(spec, probe, batch).logits(), labels).loss;
    probe[i] = saved - eps;
    const double f_minus =
        softmax_cross_entropy(forward(spec, probe, batch).logits(), labels).loss;
    probe[i] = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-12});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace shiftlab
