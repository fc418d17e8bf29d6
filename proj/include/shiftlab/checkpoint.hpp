#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "shiftlab/ensemble.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/nn.hpp"

namespace shiftlab {

// Checkpoints are versioned JSON: layer sizes, encoder/head split boundary,
// and flat parameter arrays. Doubles are emitted in shortest round-trip form,
// so save/load is bitwise exact.
inline constexpr int kCheckpointFormatVersion = 1;

using Checkpoint = std::variant<Model, ShiftedEnsemble>;

namespace detail {

inline nlohmann::json params_to_json(const ParamVector& p) {
  return nlohmann::json(p.values);
}

inline ParamVector params_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("checkpoint: parameter field is not an array");
  std::vector<double> values;
  values.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError("checkpoint: non-numeric parameter");
    values.push_back(x.get<double>());
  }
  return ParamVector(std::move(values));
}

inline nlohmann::json load_checkpoint_json(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint: corrupt file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("checkpoint: corrupt file " + path);
  if (!j.contains("format_version") || !j["format_version"].is_number_integer())
    throw ParseError("checkpoint: missing format_version in " + path);
  if (j["format_version"].get<int>() != kCheckpointFormatVersion)
    throw ParseError("checkpoint: unsupported format_version " +
                     j["format_version"].dump() + " in " + path);
  if (!j.contains("kind") || !j["kind"].is_string())
    throw ParseError("checkpoint: missing kind in " + path);
  return j;
}

inline NetSpec spec_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.contains("layer_sizes") || !j["layer_sizes"].is_array())
    throw ParseError("checkpoint: missing layer_sizes in " + path);
  NetSpec spec;
  for (const auto& x : j["layer_sizes"]) {
    if (!x.is_number_unsigned() && !x.is_number_integer())
      throw ParseError("checkpoint: bad layer size in " + path);
    spec.layer_sizes.push_back(x.get<std::size_t>());
  }
  try {
    spec.validate();
  } catch (const InputError& e) {
    throw ParseError("checkpoint: invalid spec in " + path + ": " + e.what());
  }
  if (!j.contains("head_split") ||
      j["head_split"].get<std::size_t>() != spec.encoder_param_count())
    throw ParseError("checkpoint: head_split does not match spec in " + path);
  return spec;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  if (const Model* model = std::get_if<Model>(&ckpt)) {
    j["kind"] = "model";
    j["layer_sizes"] = model->spec.layer_sizes;
    j["head_split"] = model->spec.encoder_param_count();
    j["params"] = detail::params_to_json(model->full());
  } else {
    const ShiftedEnsemble& ens = std::get<ShiftedEnsemble>(ckpt);
    j["kind"] = "ensemble";
    j["layer_sizes"] = ens.spec.layer_sizes;
    j["head_split"] = ens.spec.encoder_param_count();
    nlohmann::json bases = nlohmann::json::array();
    for (const ParamVector& b : ens.base_encoders)
      bases.push_back(detail::params_to_json(b));
    j["base_encoders"] = std::move(bases);
    j["shift"] = detail::params_to_json(ens.shift);
    nlohmann::json heads = nlohmann::json::array();
    for (const ParamVector& h : ens.heads)
      heads.push_back(detail::params_to_json(h));
    j["heads"] = std::move(heads);
  }
  std::ofstream file(path);
  if (!file) throw IoError("checkpoint: cannot write " + path);
  file << j.dump(2) << '\n';
  if (!file) throw IoError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const nlohmann::json j = detail::load_checkpoint_json(path);
  const NetSpec spec = detail::spec_from_json(j, path);
  const std::string kind = j["kind"].get<std::string>();

  if (kind == "model") {
    if (!j.contains("params"))
      throw ParseError("checkpoint: missing params in " + path);
    ParamVector full = detail::params_from_json(j["params"]);
    if (full.size() != spec.param_count())
      throw ParseError("checkpoint: parameter count does not match spec in " + path);
    return make_model(spec, full);
  }
  if (kind == "ensemble") {
    for (const char* key : {"base_encoders", "shift", "heads"})
      if (!j.contains(key))
        throw ParseError(std::string("checkpoint: missing ") + key + " in " + path);
    ShiftedEnsemble ens;
    ens.spec = spec;
    for (const auto& b : j["base_encoders"])
      ens.base_encoders.push_back(detail::params_from_json(b));
    ens.shift = detail::params_from_json(j["shift"]);
    for (const auto& h : j["heads"])
      ens.heads.push_back(detail::params_from_json(h));
    try {
      ens.validate();
    } catch (const std::exception& e) {
      throw ParseError("checkpoint: inconsistent ensemble in " + path + ": " + e.what());
    }
    return ens;
  }
  throw ParseError("checkpoint: unknown kind '" + kind + "' in " + path);
}

// Typed loader used where an experiment expects a plain model; a spec given
// by the caller must match exactly.
inline Model load_model_checkpoint(const std::string& path,
                                   const NetSpec* expected_spec = nullptr) {
  Checkpoint ckpt = load_checkpoint(path);
  Model* model = std::get_if<Model>(&ckpt);
  if (model == nullptr)
    throw ParseError("checkpoint: expected a model checkpoint in " + path);
  if (expected_spec != nullptr && !(model->spec == *expected_spec))
    throw ParseError("checkpoint: spec mismatch in " + path);
  return std::move(*model);
}

}  // namespace shiftlab
