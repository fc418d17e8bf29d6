#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "shiftlab/errors.hpp"
#include "shiftlab/nn.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Encoder/head split of one network. The head is always exactly the last
// layer; the encoder is everything before it.
struct Model {
  NetSpec spec;
  ParamVector encoder_params;
  ParamVector head_params;

  ParamVector full() const { return concat(encoder_params, head_params); }
};

inline std::pair<ParamVector, ParamVector> split(const ParamVector& full,
                                                 const NetSpec& spec) {
  spec.validate();
  if (full.size() != spec.param_count())
    throw ShapeError("split: parameter length does not match spec");
  const std::size_t enc = spec.encoder_param_count();
  ParamVector encoder(std::vector<double>(full.values.begin(),
                                          full.values.begin() + static_cast<std::ptrdiff_t>(enc)));
  ParamVector head(std::vector<double>(full.values.begin() + static_cast<std::ptrdiff_t>(enc),
                                       full.values.end()));
  return {std::move(encoder), std::move(head)};
}

inline Model make_model(const NetSpec& spec, const ParamVector& full) {
  auto [encoder, head] = split(full, spec);
  return Model{spec, std::move(encoder), std::move(head)};
}

// n frozen base encoders w_i0, one trainable shift v shared by all of them,
// and n trainable heads. Training code never writes base_encoders.
struct ShiftedEnsemble {
  NetSpec spec;
  std::vector<ParamVector> base_encoders;
  ParamVector shift;
  std::vector<ParamVector> heads;

  std::size_t size() const { return base_encoders.size(); }

  void validate() const {
    spec.validate();
    if (base_encoders.size() < 2)
      throw InputError("ShiftedEnsemble: need at least 2 models");
    if (heads.size() != base_encoders.size())
      throw ShapeError("ShiftedEnsemble: head count does not match encoder count");
    const std::size_t enc = spec.encoder_param_count();
    const std::size_t head = spec.param_count() - enc;
    if (shift.size() != enc)
      throw ShapeError("ShiftedEnsemble: shift length does not match encoders");
    for (const ParamVector& b : base_encoders)
      if (b.size() != enc)
        throw ShapeError("ShiftedEnsemble: encoder length does not match spec");
    for (const ParamVector& h : heads)
      if (h.size() != head)
        throw ShapeError("ShiftedEnsemble: head length does not match spec");
  }
};

enum class ShiftInit { Zeros, Mean, RandomBinary };

// zeros: identity-preserving start. mean: v = (1/n) sum of the bases.
// random_binary: each entry 0 or 1 from the seeded stream.
inline ParamVector init_shift(ShiftInit strategy,
                              const std::vector<ParamVector>& base_encoders,
                              std::uint64_t seed) {
  if (base_encoders.empty()) throw InputError("init_shift: empty ensemble");
  const std::size_t len = base_encoders.front().size();
  for (const ParamVector& b : base_encoders)
    if (b.size() != len) throw ShapeError("init_shift: encoder lengths differ");

  ParamVector v = ParamVector::zeros(len);
  switch (strategy) {
    case ShiftInit::Zeros:
      break;
    case ShiftInit::Mean: {
      const double inv_n = 1.0 / static_cast<double>(base_encoders.size());
      for (std::size_t j = 0; j < len; ++j) {
        double acc = 0.0;
        for (const ParamVector& b : base_encoders) acc += b[j];
        v[j] = acc * inv_n;
      }
      break;
    }
    case ShiftInit::RandomBinary: {
      rng::SplitMix64 stream(seed);
      for (std::size_t j = 0; j < len; ++j)
        v[j] = static_cast<double>(stream.next_below(2));
      break;
    }
  }
  return v;
}

// w_i0 + v, computed fresh from the frozen base each time; never mutates ens.
inline ParamVector effective_encoder(const ShiftedEnsemble& ens, std::size_t i) {
  if (i >= ens.size()) throw InputError("effective_encoder: model index out of range");
  return add(ens.base_encoders[i], ens.shift);
}

inline ParamVector effective_full(const ShiftedEnsemble& ens, std::size_t i) {
  return concat(effective_encoder(ens, i), ens.heads[i]);
}

// Bake v into each encoder; the returned models are independent copies, so
// mutating them leaves the ensemble untouched.
inline std::vector<Model> materialize(const ShiftedEnsemble& ens) {
  std::vector<Model> models;
  models.reserve(ens.size());
  for (std::size_t i = 0; i < ens.size(); ++i)
    models.push_back(Model{ens.spec, effective_encoder(ens, i), ens.heads[i]});
  return models;
}

}  // namespace shiftlab
