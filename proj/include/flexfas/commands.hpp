#pragma once

// The synth / train / eval / cost / metrics commands, callable without the
// argument parser. Every file is written atomically; JSON outputs carry the
// config hash.
//
// Output layout under RunConfig::output_dir:
//
//   checkpoints/unified.json | checkpoints/P1.json ...
//   logs/<model>.loss.log
//   reports/<protocol>/<set>.json, <set>.test.tsv, <set>.val.tsv
//   reports/summary.json
//   cost.json

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "flexfas/checkpoint.hpp"
#include "flexfas/report.hpp"

namespace flexfas {

struct SynthSummary {
  fs::path manifest;
  std::size_t n_samples = 0;
};

inline SynthSummary cmd_synth(const RunConfig& rc) {
  const SynthOutput out = generate(rc.synth);
  SynthSummary s;
  s.manifest = write_synth_dataset(out, rc.synth_output_dir);
  s.n_samples = out.samples.size();
  const json stamp = {{"config_hash", rc.config_hash},
                      {"n_samples", s.n_samples},
                      {"manifest_fnv1a64", hex64(fnv1a64(read_file(s.manifest)))}};
  write_file_atomic(rc.synth_output_dir / "synth.json", stamp.dump(2) + "\n");
  return s;
}

/// Manifests listed in the config, or the synth output when none are listed.
inline std::vector<fs::path> manifest_paths(const RunConfig& rc) {
  if (!rc.manifests.empty()) return rc.manifests;
  return {rc.synth_output_dir / "manifest.csv"};
}

inline Dataset load_run_dataset(const RunConfig& rc) {
  Dataset all;
  std::set<std::string> ids;
  for (const auto& path : manifest_paths(rc)) {
    Dataset d = load_dataset(load_manifest(path));
    for (auto& s : d) {
      if (!ids.insert(s.sample.sample_id).second) {
        throw Error(ErrorCode::kDuplicateId, path.string() + ": sample_id '" + s.sample.sample_id +
                                                 "' already listed by another manifest");
      }
      all.push_back(std::move(s));
    }
  }
  return all;
}

inline std::string model_file_stem(const TrainedModel& m) {
  return m.protocol ? std::string(to_string(*m.protocol)) : std::string("unified");
}

inline std::string format_loss_log(const TrainResult& r) {
  std::string out = "epoch\tlr\tloss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
    out += std::to_string(e + 1) + '\t' + format_double(r.epoch_lr[e]) + '\t' + format_double(r.epoch_loss[e]) + '\n';
  return out;
}

/// Trains per the plan and writes one checkpoint per model; returns their paths.
inline std::vector<fs::path> cmd_train(const RunConfig& rc, std::ostream* log = nullptr) {
  const Dataset data = load_run_dataset(rc);
  const auto models = train_plan(rc.plan(), data);
  std::vector<fs::path> written;
  for (const auto& m : models) {
    const std::string stem = model_file_stem(m);
    const fs::path ckpt = rc.output_dir / "checkpoints" / (stem + ".json");
    save_checkpoint(ckpt, *m.model, &m, &rc);
    write_file_atomic(rc.output_dir / "logs" / (stem + ".loss.log"), format_loss_log(m.trace));
    if (log) *log << "trained " << stem << ": final loss " << m.trace.epoch_loss.back() << "\n";
    written.push_back(ckpt);
  }
  return written;
}

/// Checkpoints cmd_train would have written for this config.
inline std::vector<fs::path> default_checkpoints(const RunConfig& rc) {
  std::vector<fs::path> out;
  if (rc.mode == RunMode::kUnified) {
    out.push_back(rc.output_dir / "checkpoints" / "unified.json");
  } else {
    for (auto id : rc.protocols) out.push_back(rc.output_dir / "checkpoints" / (std::string(to_string(id)) + ".json"));
  }
  return out;
}

inline std::string set_file_stem(const std::string& set_name) {
  std::string s = set_name;
  for (auto& c : s)
    if (c == ':' || c == '/' || c == '\\') c = '_';
  return s;
}

/// Evaluation phase only: loads checkpoints, scores every configured protocol
/// and writes reports and raw score files. Returns the summary JSON.
inline json cmd_eval(const RunConfig& rc, std::vector<fs::path> checkpoints, std::ostream* log = nullptr) {
  if (checkpoints.empty()) checkpoints = default_checkpoints(rc);
  std::vector<TrainedModel> models;
  for (const auto& path : checkpoints) {
    const Checkpoint c = load_checkpoint(path);
    if (!(c.model_config == rc.model)) {
      throw Error(ErrorCode::kCheckpointIncompatible,
                  path.string() + ": model config " + model_config_to_json(c.model_config).dump() +
                      " differs from the run config " + model_config_to_json(rc.model).dump());
    }
    TrainedModel tm;
    tm.protocol = c.protocol;
    tm.trained_modalities = c.trained_modalities;
    tm.model = std::make_unique<FlexModel>(instantiate(c));
    models.push_back(std::move(tm));
  }
  const Dataset data = load_run_dataset(rc);
  const auto evaluations = evaluate_plan(rc.plan().protocols, models, data);

  json summary = {{"config_hash", rc.config_hash}, {"protocols", json::object()}};
  for (const auto& [id, ev] : evaluations) {
    const std::string pname(to_string(id));
    const fs::path dir = rc.output_dir / "reports" / pname;
    for (const auto& set : ev.sets) {
      const std::string stem = set_file_stem(set.name);
      const json rep = report_to_json(set.report, rc.config_hash);
      write_file_atomic(dir / (stem + ".json"), rep.dump(2) + "\n");
      write_scores(dir / (stem + ".test.tsv"), set.test_scores);
      if (set.rule == ThresholdRule::kEerOnValidation) write_scores(dir / (stem + ".val.tsv"), set.val_scores);
      summary["protocols"][pname][set.name] = rep;
      if (log) *log << pname << " " << set.name << ": acer " << set.report.acer << "\n";
    }
  }
  write_file_atomic(rc.output_dir / "reports" / "summary.json", summary.dump(2) + "\n");
  return summary;
}

/// Cost of one model built from the config. SEPARATE runs hold one such model
/// per protocol, which `total_params` accounts for.
inline json cmd_cost(const RunConfig& rc) {
  const FlexModel model(rc.model, rc.seed);
  const CostReport cost = count_cost(model);
  json j = cost_to_json(cost, rc.config_hash);
  const std::size_t n_models = rc.mode == RunMode::kUnified ? 1 : rc.protocols.size();
  j["mode"] = to_string(rc.mode);
  j["n_models"] = n_models;
  j["total_params"] = cost.params * n_models;
  write_file_atomic(rc.output_dir / "cost.json", j.dump(2) + "\n");
  return j;
}

/// Recomputes a report from score files.
inline EvalReport cmd_metrics(const fs::path& test_scores, const std::optional<fs::path>& val_scores,
                              ThresholdRule rule) {
  const auto test = read_scores(test_scores);
  const auto val = val_scores ? read_scores(*val_scores) : std::vector<ScoreRecord>{};
  if (rule == ThresholdRule::kEerOnValidation && !val_scores) {
    throw Error(ErrorCode::kInvalidArgument, "rule eer_on_validation needs validation scores");
  }
  return build_report(val, test, rule);
}

}  // namespace flexfas
