#pragma once

// Parameter and FLOP accounting. FLOPs follow the 2 x MAC convention for
// convolutions, linear layers and attention products; elementwise work
// (activations, additions, gating, softmax) costs 1 per output element and
// batch/layer normalization 2 per element (scale + shift). Counting is done by
// running one inference pass with a FlopCounter installed, so the numbers are
// exactly the work the forward code performs.

#include <cstdint>
#include <map>
#include <string>

#include "flexfas/backbones.hpp"

namespace flexfas {

struct ModuleCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;

  friend bool operator==(const ModuleCost&, const ModuleCost&) = default;
};

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::map<std::string, ModuleCost> breakdown;  // "encoder", "fusion", "head"

  friend bool operator==(const CostReport&, const CostReport&) = default;
};

inline std::string top_level_module(const std::string& param_name) { return param_name.substr(0, param_name.find('.')); }

/// Learnable scalar count of a store, grouped by top-level module.
inline CostReport count_params(const ParameterStore& store) {
  CostReport rep;
  for (const auto& [name, v] : store.params()) {
    rep.breakdown[top_level_module(name)].params += v->value.size();
    rep.params += v->value.size();
  }
  return rep;
}

inline CostReport count_params(const FlexModel& model) { return count_params(model.store()); }

/// FLOPs of one single-sample inference pass at input size height x width.
/// The model must have been built for that size.
inline CostReport count_flops(const FlexModel& model, std::size_t height, std::size_t width) {
  const auto& cfg = model.config();
  if (height != cfg.input_height || width != cfg.input_width) {
    throw Error(ErrorCode::kShapeInvalid, "model built for " + std::to_string(cfg.input_height) + "x" +
                                              std::to_string(cfg.input_width) + ", asked to cost " +
                                              std::to_string(height) + "x" + std::to_string(width));
  }
  std::array<Var, kNumModalities> inputs;
  for (auto& in : inputs) in = constant(Tensor({1, 3, height, width}));
  FlopCounter counter;
  {
    NoGradGuard no_grad;
    FlopCounting counting(counter);
    model.head_output(model.encode_inputs(inputs, Mode::kInfer), Mode::kInfer);
  }
  CostReport rep;
  for (const auto& [scope, flops] : counter.by_scope()) {
    rep.breakdown[scope].flops += flops;
    rep.flops += flops;
  }
  return rep;
}

/// Parameters and FLOPs merged into one report.
inline CostReport count_cost(const FlexModel& model) {
  CostReport rep = count_params(model);
  const CostReport f = count_flops(model, model.config().input_height, model.config().input_width);
  rep.flops = f.flops;
  for (const auto& [k, v] : f.breakdown) rep.breakdown[k].flops = v.flops;
  return rep;
}

}  // namespace flexfas
