#pragma once

// Run configuration files (JSON) and their published schema.
//
// The schema is a JSON Schema document; validate_against_schema() checks the
// subset of keywords it uses and reports the first offending key path.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexfas/io.hpp"
#include "flexfas/protocols.hpp"
#include "flexfas/synthgen.hpp"

namespace flexfas {

using json = nlohmann::json;

inline const json& run_config_schema() {
  static const json schema = json::parse(R"({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "flexfas run configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "mode": {"type": "string", "enum": ["unified", "separate"]},
    "protocols": {"type": "array", "minItems": 1, "uniqueItems": true,
                  "items": {"type": "string", "enum": ["P1", "P2", "P3", "P4"]}},
    "manifests": {"type": "array", "items": {"type": "string"}},
    "synth": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "n_subjects": {"type": "integer", "minimum": 1},
        "frames_per_subject": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "width": {"type": "integer", "minimum": 1},
        "separability": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "rgb": {"type": "number", "minimum": 0},
            "depth": {"type": "number", "minimum": 0},
            "ir": {"type": "number", "minimum": 0}
          }
        },
        "noise_sigma": {"type": "number", "exclusiveMinimum": 0},
        "attack_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "pai_types": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "dataset_id": {"type": "string"},
        "split_fractions": {"type": "array", "minItems": 3, "maxItems": 3,
                            "items": {"type": "number", "minimum": 0}},
        "pixel_scale": {"type": "number", "exclusiveMinimum": 0}
      }
    },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "arch": {"type": "string", "enum": ["toy_cnn", "toy_resnet", "toy_vit"]},
        "shared": {"type": "boolean"},
        "feature_channels": {"type": "integer", "minimum": 2},
        "patch_size": {"type": "integer", "minimum": 1},
        "fusion": {"type": "string", "enum": ["concat", "se", "cross_attention"]},
        "se_reduction": {"type": "integer", "minimum": 1},
        "head": {"type": "string", "enum": ["binary_logit", "binary_map"]},
        "input_size": {"type": "array", "minItems": 2, "maxItems": 2,
                       "items": {"type": "integer", "minimum": 1}}
      }
    },
    "trainer": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "optimizer": {"type": "string", "enum": ["adam", "adamw"]},
        "learning_rate": {"type": "number", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "lr_halving_epoch": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "grad_clip": {"type": "number", "minimum": 0},
        "weight_decay": {"type": "number", "minimum": 0}
      }
    },
    "dropmodal": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "enabled": {"type": "boolean"},
        "p_depth": {"type": "number", "minimum": 0, "maximum": 1},
        "p_ir": {"type": "number", "minimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0}
      }
    }
  }
})");
  return schema;
}

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline bool matches_type(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  return false;
}

inline void schema_check(const json& v, const json& schema, const std::string& path) {
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::kConfigError, (path.empty() ? std::string("<root>") : path) + ": " + msg);
  };
  if (auto t = schema.find("type"); t != schema.end() && !matches_type(v, t->get<std::string>())) {
    fail("expected " + t->get<std::string>() + ", got " + std::string(v.type_name()));
  }
  if (auto e = schema.find("enum"); e != schema.end()) {
    bool ok = false;
    for (const auto& option : *e) ok = ok || option == v;
    if (!ok) fail("value " + v.dump() + " not one of " + e->dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (auto m = schema.find("minimum"); m != schema.end() && x < m->get<double>()) fail("must be >= " + m->dump());
    if (auto m = schema.find("maximum"); m != schema.end() && x > m->get<double>()) fail("must be <= " + m->dump());
    if (auto m = schema.find("exclusiveMinimum"); m != schema.end() && x <= m->get<double>()) {
      fail("must be > " + m->dump());
    }
    if (auto m = schema.find("exclusiveMaximum"); m != schema.end() && x >= m->get<double>()) {
      fail("must be < " + m->dump());
    }
  }
  if (v.is_object()) {
    const auto props = schema.value("properties", json::object());
    for (const auto& [key, child] : v.items()) {
      const auto p = props.find(key);
      if (p == props.end()) {
        if (schema.value("additionalProperties", true) == false) {
          throw Error(ErrorCode::kConfigError, join_path(path, key) + ": unknown key");
        }
        continue;
      }
      schema_check(child, *p, join_path(path, key));
    }
    for (const auto& req : schema.value("required", json::array())) {
      if (!v.contains(req.get<std::string>())) {
        throw Error(ErrorCode::kConfigError, join_path(path, req.get<std::string>()) + ": required key missing");
      }
    }
  }
  if (v.is_array()) {
    if (auto m = schema.find("minItems"); m != schema.end() && v.size() < m->get<std::size_t>()) {
      fail("needs at least " + m->dump() + " items");
    }
    if (auto m = schema.find("maxItems"); m != schema.end() && v.size() > m->get<std::size_t>()) {
      fail("allows at most " + m->dump() + " items");
    }
    if (schema.value("uniqueItems", false)) {
      for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size(); ++j)
          if (v[i] == v[j]) fail("duplicate item " + v[i].dump());
    }
    if (auto items = schema.find("items"); items != schema.end()) {
      for (std::size_t i = 0; i < v.size(); ++i) schema_check(v[i], *items, path + "[" + std::to_string(i) + "]");
    }
  }
}

}  // namespace detail

/// Throws CONFIG_ERROR naming the first key that violates the schema.
inline void validate_against_schema(const json& config) { detail::schema_check(config, run_config_schema(), ""); }

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  fs::path synth_output_dir = "out/data";
  RunMode mode = RunMode::kUnified;
  std::vector<ProtocolId> protocols{ProtocolId::kP1, ProtocolId::kP2, ProtocolId::kP3, ProtocolId::kP4};
  std::vector<fs::path> manifests;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig trainer;
  std::string config_hash;  // hex FNV-1a of the canonical config text
  json source;              // config as loaded, after the seed override

  RunPlan plan() const {
    RunPlan p;
    p.mode = mode;
    p.protocols.clear();
    for (auto id : protocols) p.protocols.push_back(protocol_spec(id));
    p.model = model;
    p.trainer = trainer;
    p.model_seed = seed;
    return p;
  }
};

/// Canonical text: keys sorted, no whitespace.
inline std::string canonical_json(const json& j) { return j.dump(); }

/// Builds a RunConfig from parsed JSON. Relative paths resolve against
/// `base_dir`. `seed_override` replaces the top-level seed before hashing.
inline RunConfig run_config_from_json(json j, const fs::path& base_dir = {},
                                      std::optional<std::uint64_t> seed_override = std::nullopt) {
  validate_against_schema(j);
  if (seed_override) j["seed"] = *seed_override;

  RunConfig rc;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  rc.seed = j.value("seed", std::uint64_t{0});
  rc.output_dir = resolve(j.value("output_dir", std::string("out")));
  if (j.contains("mode")) rc.mode = parse_run_mode(j["mode"].get<std::string>());
  if (j.contains("protocols")) {
    rc.protocols.clear();
    for (const auto& p : j["protocols"]) rc.protocols.push_back(parse_protocol(p.get<std::string>()));
  }
  for (const auto& m : j.value("manifests", json::array())) rc.manifests.push_back(resolve(m.get<std::string>()));

  const json s = j.value("synth", json::object());
  SynthConfig& sc = rc.synth;
  rc.synth_output_dir = s.contains("output_dir") ? resolve(s["output_dir"].get<std::string>()) : rc.output_dir / "data";
  sc.seed = s.value("seed", rc.seed);
  sc.n_subjects = s.value("n_subjects", sc.n_subjects);
  sc.frames_per_subject = s.value("frames_per_subject", sc.frames_per_subject);
  sc.height = s.value("height", sc.height);
  sc.width = s.value("width", sc.width);
  if (s.contains("separability")) {
    for (auto m : kAllModalities)
      sc.separability[index_of(m)] = s["separability"].value(std::string(to_string(m)), sc.separability[index_of(m)]);
  }
  sc.noise_sigma = s.value("noise_sigma", sc.noise_sigma);
  sc.attack_ratio = s.value("attack_ratio", sc.attack_ratio);
  if (s.contains("pai_types")) sc.pai_types = s["pai_types"].get<std::vector<std::string>>();
  sc.dataset_id = s.value("dataset_id", sc.dataset_id);
  if (s.contains("split_fractions")) {
    const auto f = s["split_fractions"].get<std::vector<double>>();
    sc.split_fractions = {f[0], f[1], f[2]};
  }
  sc.pixel_scale = s.value("pixel_scale", sc.pixel_scale);

  const json m = j.value("model", json::object());
  ModelConfig& mc = rc.model;
  if (m.contains("arch")) mc.branch.arch = parse_arch(m["arch"].get<std::string>());
  mc.branch.shared = m.value("shared", mc.branch.shared);
  mc.branch.feature_channels = m.value("feature_channels", mc.branch.feature_channels);
  mc.branch.patch_size = m.value("patch_size", mc.branch.patch_size);
  if (m.contains("fusion")) mc.fusion = parse_fusion_kind(m["fusion"].get<std::string>());
  mc.se_reduction = m.value("se_reduction", mc.se_reduction);
  if (m.contains("head")) mc.head.kind = parse_head_kind(m["head"].get<std::string>());
  if (m.contains("input_size")) {
    mc.input_height = m["input_size"][0].get<std::size_t>();
    mc.input_width = m["input_size"][1].get<std::size_t>();
  }

  // The toy transformer defaults to AdamW at a lower rate.
  const json t = j.value("trainer", json::object());
  TrainConfig& tc = rc.trainer;
  if (mc.branch.arch == Arch::kToyVit) {
    tc.optimizer = OptimizerKind::kAdamW;
    tc.learning_rate = 1e-4;
  }
  if (t.contains("optimizer")) tc.optimizer = parse_optimizer(t["optimizer"].get<std::string>());
  tc.learning_rate = t.value("learning_rate", tc.learning_rate);
  tc.epochs = t.value("epochs", tc.epochs);
  tc.lr_halving_epoch = t.value("lr_halving_epoch", std::min(tc.lr_halving_epoch, tc.epochs));
  tc.batch_size = t.value("batch_size", tc.batch_size);
  tc.grad_clip_norm = t.value("grad_clip", tc.grad_clip_norm);
  tc.weight_decay = t.value("weight_decay", tc.weight_decay);
  tc.seed = rc.seed;

  const json d = j.value("dropmodal", json::object());
  if (d.value("enabled", false)) {
    DropModalConfig dc;
    dc.p_depth = d.value("p_depth", dc.p_depth);
    dc.p_ir = d.value("p_ir", dc.p_ir);
    dc.seed = d.value("seed", rc.seed);
    tc.dropmodal = dc;
  }

  try {
    sc.validate();
    mc.validate();
    tc.validate();
    rc.plan().validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }

  rc.source = j;
  rc.config_hash = hex64(fnv1a64(canonical_json(j)));
  return rc;
}

/// Reads FLEXFAS_SEED if set; CONFIG_ERROR if it is not a non-negative integer.
inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("FLEXFAS_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const std::string s(v);
    if (s.front() == '-') throw std::invalid_argument("negative");
    const auto seed = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return seed;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kConfigError, "FLEXFAS_SEED: expected a non-negative integer, got '" + std::string(v) + "'");
  }
}

inline RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!fs::exists(path)) throw Error(ErrorCode::kFileNotFound, "config " + path.string() + " not found");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  return run_config_from_json(std::move(j), path.parent_path(), seed_override);
}

}  // namespace flexfas
