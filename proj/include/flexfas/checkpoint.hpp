#pragma once

// Versioned JSON checkpoints: model config, named parameter arrays,
// batch-norm running statistics, the run config echo and the trainer's
// data-order RNG state.

#include <optional>
#include <string>

#include "flexfas/config.hpp"

namespace flexfas {

inline constexpr std::string_view kCheckpointFormat = "flexfas-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model_config;
  std::optional<ProtocolId> protocol;  // SEPARATE models only
  ModalitySet trained_modalities = ModalitySet::all();
  std::string config_hash;
  json config_echo = json::object();
  std::vector<double> loss_trace;
  std::string rng_state;
  json tensors;  // params + stats, kept as JSON until applied to a model
};

inline json model_config_to_json(const ModelConfig& c) {
  return {{"arch", to_string(c.branch.arch)},
          {"shared", c.branch.shared},
          {"feature_channels", c.branch.feature_channels},
          {"patch_size", c.branch.patch_size},
          {"fusion", to_string(c.fusion)},
          {"se_reduction", c.se_reduction},
          {"head", to_string(c.head.kind)},
          {"input_size", {c.input_height, c.input_width}}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.branch.arch = parse_arch(j.at("arch").get<std::string>());
  c.branch.shared = j.at("shared").get<bool>();
  c.branch.feature_channels = j.at("feature_channels").get<std::size_t>();
  c.branch.patch_size = j.at("patch_size").get<std::size_t>();
  c.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
  c.se_reduction = j.at("se_reduction").get<std::size_t>();
  c.head.kind = parse_head_kind(j.at("head").get<std::string>());
  c.input_height = j.at("input_size").at(0).get<std::size_t>();
  c.input_width = j.at("input_size").at(1).get<std::size_t>();
  return c;
}

namespace detail {
inline json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

inline void tensor_from_json(const json& j, Tensor& dst, const std::string& name) {
  const auto shape = j.at("shape").get<Shape>();
  if (shape != dst.shape()) {
    throw Error(ErrorCode::kCheckpointIncompatible, name + ": checkpoint shape " + shape_to_string(shape) +
                                                        " vs model " + shape_to_string(dst.shape()));
  }
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != dst.size()) throw Error(ErrorCode::kCheckpointIncompatible, name + ": wrong element count");
  std::copy(data.begin(), data.end(), dst.storage().begin());
}
}  // namespace detail

inline json checkpoint_to_json(const FlexModel& model, const TrainedModel* trained, const RunConfig* rc) {
  json params = json::object(), stats = json::object();
  for (const auto& [name, v] : model.store().params()) params[name] = detail::tensor_to_json(v->value);
  for (const auto& [name, s] : model.store().stats()) {
    stats[name] = {{"running_mean", detail::tensor_to_json(s->running_mean)},
                   {"running_var", detail::tensor_to_json(s->running_var)}};
  }
  json j = {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"model", model_config_to_json(model.config())},
            {"params", params},
            {"stats", stats},
            {"protocol", nullptr},
            {"trained_modalities", ModalitySet::all().to_string()},
            {"loss_trace", json::array()},
            {"rng_state", ""},
            {"config_hash", rc ? rc->config_hash : ""},
            {"config", rc ? rc->source : json::object()}};
  if (trained) {
    if (trained->protocol) j["protocol"] = to_string(*trained->protocol);
    j["trained_modalities"] = trained->trained_modalities.to_string();
    j["loss_trace"] = trained->trace.epoch_loss;
    j["rng_state"] = trained->trace.rng_state;
  }
  return j;
}

inline void save_checkpoint(const fs::path& path, const FlexModel& model, const TrainedModel* trained = nullptr,
                            const RunConfig* rc = nullptr) {
  write_file_atomic(path, checkpoint_to_json(model, trained, rc).dump(1));
}

namespace detail {
inline ModalitySet parse_modality_set(const std::string& s) {
  ModalitySet set;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto plus = s.find('+', start);
    set.insert(parse_modality(s.substr(start, plus == std::string::npos ? std::string::npos : plus - start)));
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return set;
}
}  // namespace detail

inline Checkpoint checkpoint_from_json(const json& j) {
  auto incompatible = [](const std::string& msg) { throw Error(ErrorCode::kCheckpointIncompatible, msg); };
  if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat) incompatible("not a flexfas checkpoint");
  if (j.value("version", -1) != kCheckpointVersion) {
    incompatible("checkpoint version " + j.value("version", json()).dump() + ", expected " +
                 std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  try {
    c.model_config = model_config_from_json(j.at("model"));
    if (!j.at("protocol").is_null()) c.protocol = parse_protocol(j["protocol"].get<std::string>());
    c.trained_modalities = detail::parse_modality_set(j.at("trained_modalities").get<std::string>());
    c.config_hash = j.value("config_hash", std::string());
    c.config_echo = j.value("config", json::object());
    c.loss_trace = j.value("loss_trace", std::vector<double>{});
    c.rng_state = j.value("rng_state", std::string());
    c.tensors = {{"params", j.at("params")}, {"stats", j.at("stats")}};
  } catch (const json::exception& e) {
    incompatible(std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    incompatible(e.what());
  }
  return c;
}

/// Rebuilds the model and copies every parameter and statistic. Names and
/// shapes must match exactly.
inline FlexModel instantiate(const Checkpoint& c) {
  FlexModel model(c.model_config, 0);
  const json& params = c.tensors.at("params");
  const json& stats = c.tensors.at("stats");
  if (params.size() != model.store().params().size() || stats.size() != model.store().stats().size()) {
    throw Error(ErrorCode::kCheckpointIncompatible, "parameter set does not match the model config");
  }
  for (const auto& [name, v] : model.store().params()) {
    if (!params.contains(name)) throw Error(ErrorCode::kCheckpointIncompatible, "missing parameter " + name);
    detail::tensor_from_json(params[name], v->value, name);
  }
  for (const auto& [name, s] : model.store().stats()) {
    if (!stats.contains(name)) throw Error(ErrorCode::kCheckpointIncompatible, "missing statistics " + name);
    detail::tensor_from_json(stats[name].at("running_mean"), s->running_mean, name + ".running_mean");
    detail::tensor_from_json(stats[name].at("running_var"), s->running_var, name + ".running_var");
  }
  return model;
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kFileNotFound, "checkpoint " + path.string() + " not found");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kCheckpointIncompatible, path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace flexfas
