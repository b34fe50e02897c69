#pragma once

// Flexible-modal evaluation protocols and the two training regimes.
//
//   protocol  eval modalities     (training always sees RGB+Depth+IR under UNIFIED)
//   P1        RGB
//   P2        RGB+Depth
//   P3        RGB+IR
//   P4        RGB+Depth+IR
//
// UNIFIED trains one tri-modal model and evaluates it under every protocol,
// zero-blocking the missing modalities. SEPARATE trains one model per
// protocol on that protocol's modalities only.
//
// Test rows from datasets seen in training are scored intra-dataset with the
// threshold at the validation EER; test rows from unseen datasets are scored
// cross-dataset at a fixed 0.5 threshold.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "flexfas/augment.hpp"
#include "flexfas/backbones.hpp"
#include "flexfas/manifest.hpp"
#include "flexfas/metrics.hpp"
#include "flexfas/trainer.hpp"

namespace flexfas {

enum class ProtocolId { kP1 = 1, kP2 = 2, kP3 = 3, kP4 = 4 };

constexpr std::string_view to_string(ProtocolId p) {
  switch (p) {
    case ProtocolId::kP1: return "P1";
    case ProtocolId::kP2: return "P2";
    case ProtocolId::kP3: return "P3";
    case ProtocolId::kP4: return "P4";
  }
  return "?";
}

inline ProtocolId parse_protocol(std::string_view s) {
  if (s == "P1") return ProtocolId::kP1;
  if (s == "P2") return ProtocolId::kP2;
  if (s == "P3") return ProtocolId::kP3;
  if (s == "P4") return ProtocolId::kP4;
  throw Error(ErrorCode::kInvalidArgument, "unknown protocol '" + std::string(s) + "'");
}

struct ProtocolSpec {
  ProtocolId id = ProtocolId::kP4;
  ModalitySet train_modalities = ModalitySet::all();
  ModalitySet eval_modalities = ModalitySet::all();

  friend bool operator==(const ProtocolSpec&, const ProtocolSpec&) = default;
};

inline ProtocolSpec protocol_spec(ProtocolId id) {
  switch (id) {
    case ProtocolId::kP1: return {id, ModalitySet::all(), {ModalityId::kRgb}};
    case ProtocolId::kP2: return {id, ModalitySet::all(), {ModalityId::kRgb, ModalityId::kDepth}};
    case ProtocolId::kP3: return {id, ModalitySet::all(), {ModalityId::kRgb, ModalityId::kIr}};
    case ProtocolId::kP4: return {id, ModalitySet::all(), ModalitySet::all()};
  }
  throw Error(ErrorCode::kInvalidArgument, "bad protocol id");
}

inline std::vector<ProtocolSpec> all_protocols() {
  return {protocol_spec(ProtocolId::kP1), protocol_spec(ProtocolId::kP2), protocol_spec(ProtocolId::kP3),
          protocol_spec(ProtocolId::kP4)};
}

enum class RunMode { kSeparate, kUnified };

constexpr std::string_view to_string(RunMode m) { return m == RunMode::kUnified ? "unified" : "separate"; }

inline RunMode parse_run_mode(std::string_view s) {
  if (s == "unified") return RunMode::kUnified;
  if (s == "separate") return RunMode::kSeparate;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + std::string(s) + "'");
}

struct RunPlan {
  RunMode mode = RunMode::kUnified;
  std::vector<ProtocolSpec> protocols = all_protocols();
  ModelConfig model;
  TrainConfig trainer;
  std::uint64_t model_seed = 0;

  void validate() const {
    if (protocols.empty()) throw Error(ErrorCode::kInvalidArgument, "run plan needs at least one protocol");
    for (const auto& p : protocols) {
      if (p.train_modalities != ModalitySet::all())
        throw Error(ErrorCode::kInvalidArgument, "every protocol trains on rgb+depth+ir");
      if (!p.eval_modalities.contains(ModalityId::kRgb))
        throw Error(ErrorCode::kMissingRgb, std::string(to_string(p.id)) + " eval set lacks rgb");
    }
    model.validate();
    trainer.validate();
  }
};

struct TrainedModel {
  std::optional<ProtocolId> protocol;  // set for SEPARATE models
  ModalitySet trained_modalities = ModalitySet::all();
  std::unique_ptr<FlexModel> model;
  TrainResult trace;
};

struct EvalSetResult {
  std::string name;  // "intra" or "cross:<dataset_id>"
  ThresholdRule rule = ThresholdRule::kEerOnValidation;
  std::vector<ScoreRecord> val_scores;
  std::vector<ScoreRecord> test_scores;
  EvalReport report;
};

struct ProtocolEvaluation {
  ProtocolSpec protocol;
  std::vector<EvalSetResult> sets;

  const EvalSetResult* find(std::string_view name) const {
    for (const auto& s : sets)
      if (s.name == name) return &s;
    return nullptr;
  }
};

struct RunOutcome {
  std::vector<TrainedModel> models;
  std::map<ProtocolId, ProtocolEvaluation> evaluations;

  std::map<ProtocolId, EvalReport> intra_reports() const {
    std::map<ProtocolId, EvalReport> out;
    for (const auto& [id, ev] : evaluations)
      if (const auto* s = ev.find("intra")) out[id] = s->report;
    return out;
  }
};

/// Scores samples with every modality outside `active` zero-blocked before
/// encoding (the inactive arrays are never read).
inline std::vector<ScoreRecord> score_samples(const FlexModel& model, std::span<const ModalitySample* const> samples,
                                              ModalitySet active, std::size_t batch_size = 64) {
  std::vector<ScoreRecord> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    Batch batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) {
      batch.samples.push_back(samples[i]);
      batch.active.push_back(active);
    }
    const auto scores = model.predict(batch);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto* s = batch.samples[i];
      out.push_back({s->sample_id, scores[i], s->label, s->pai});
    }
  }
  return out;
}

/// Evaluates one protocol. `train_datasets` decides intra vs cross rows.
inline ProtocolEvaluation evaluate_protocol(const FlexModel& model, const Dataset& data, const ProtocolSpec& protocol,
                                            const std::set<std::string>& train_datasets) {
  ProtocolEvaluation ev;
  ev.protocol = protocol;
  std::vector<const ModalitySample*> intra_val, intra_test;
  std::map<std::string, std::vector<const ModalitySample*>> cross_test;
  for (const auto& s : data) {
    const bool intra = train_datasets.count(s.sample.dataset_id) > 0;
    if (s.split == Split::kVal && intra) intra_val.push_back(&s.sample);
    if (s.split == Split::kTest) (intra ? intra_test : cross_test[s.sample.dataset_id]).push_back(&s.sample);
  }
  if (!intra_test.empty()) {
    EvalSetResult r;
    r.name = "intra";
    r.rule = ThresholdRule::kEerOnValidation;
    r.val_scores = score_samples(model, intra_val, protocol.eval_modalities);
    r.test_scores = score_samples(model, intra_test, protocol.eval_modalities);
    r.report = build_report(r.val_scores, r.test_scores, r.rule);
    ev.sets.push_back(std::move(r));
  }
  for (const auto& [dataset, rows] : cross_test) {
    EvalSetResult r;
    r.name = "cross:" + dataset;
    r.rule = ThresholdRule::kFixedHalf;
    r.test_scores = score_samples(model, rows, protocol.eval_modalities);
    r.report = build_report({}, r.test_scores, r.rule);
    ev.sets.push_back(std::move(r));
  }
  return ev;
}

/// Training phase of a plan: one model (UNIFIED) or one per protocol (SEPARATE).
inline std::vector<TrainedModel> train_plan(const RunPlan& plan, const Dataset& data) {
  plan.validate();
  const auto train_rows = select(data, Split::kTrain);
  std::vector<TrainedModel> out;
  if (plan.mode == RunMode::kUnified) {
    TrainedModel tm;
    tm.model = std::make_unique<FlexModel>(plan.model, plan.model_seed);
    tm.trace = train(*tm.model, train_rows, plan.trainer, ModalitySet::all());
    out.push_back(std::move(tm));
  } else {
    for (const auto& p : plan.protocols) {
      TrainedModel tm;
      tm.protocol = p.id;
      tm.trained_modalities = p.eval_modalities;
      tm.model = std::make_unique<FlexModel>(plan.model, plan.model_seed + static_cast<std::uint64_t>(p.id));
      tm.trace = train(*tm.model, train_rows, plan.trainer, p.eval_modalities);
      out.push_back(std::move(tm));
    }
  }
  return out;
}

/// Evaluation phase: each protocol is scored by the model trained for it
/// (SEPARATE) or by the single unified model.
inline std::map<ProtocolId, ProtocolEvaluation> evaluate_plan(const std::vector<ProtocolSpec>& protocols,
                                                              const std::vector<TrainedModel>& models,
                                                              const Dataset& data) {
  const auto train_datasets = dataset_ids(data, Split::kTrain);
  std::map<ProtocolId, ProtocolEvaluation> out;
  for (const auto& p : protocols) {
    const TrainedModel* chosen = nullptr;
    for (const auto& m : models)
      if (!m.protocol || *m.protocol == p.id) {
        chosen = &m;
        if (m.protocol) break;
      }
    if (!chosen) throw Error(ErrorCode::kInvalidArgument, "no model for protocol " + std::string(to_string(p.id)));
    out[p.id] = evaluate_protocol(*chosen->model, data, p, train_datasets);
  }
  return out;
}

inline RunOutcome run_unified(const RunPlan& plan, const Dataset& data) {
  if (plan.mode != RunMode::kUnified) throw Error(ErrorCode::kInvalidArgument, "run_unified needs a UNIFIED plan");
  RunOutcome out;
  out.models = train_plan(plan, data);
  out.evaluations = evaluate_plan(plan.protocols, out.models, data);
  return out;
}

inline RunOutcome run_separate(const RunPlan& plan, const Dataset& data) {
  if (plan.mode != RunMode::kSeparate) throw Error(ErrorCode::kInvalidArgument, "run_separate needs a SEPARATE plan");
  RunOutcome out;
  out.models = train_plan(plan, data);
  out.evaluations = evaluate_plan(plan.protocols, out.models, data);
  return out;
}

}  // namespace flexfas
