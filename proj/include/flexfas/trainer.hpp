#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flexfas/augment.hpp"
#include "flexfas/backbones.hpp"
#include "flexfas/manifest.hpp"

namespace flexfas {

enum class OptimizerKind { kAdam, kAdamW };

constexpr std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "adamw"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "adamw") return OptimizerKind::kAdamW;
  throw Error(ErrorCode::kInvalidArgument, "unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t lr_halving_epoch = 7;  // 1-based; this epoch and later run at half rate
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<DropModalConfig> dropmodal;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  double weight_decay = 0.01;   // adamw only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, "trainer: " + msg); };
    if (epochs < 1) bad("epochs must be >= 1");
    if (lr_halving_epoch < 1 || lr_halving_epoch > epochs) bad("lr_halving_epoch must lie in [1, epochs]");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be finite and >= 0");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (grad_clip_norm < 0.0) bad("grad_clip_norm must be >= 0");
    if (dropmodal) dropmodal->validate();
  }

  double lr_at_epoch(std::size_t epoch) const { return epoch >= lr_halving_epoch ? 0.5 * learning_rate : learning_rate; }
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean loss per epoch
  std::vector<double> epoch_lr;
  std::string rng_state;           // data-order generator after the last epoch
};

/// Adam with optional decoupled weight decay (AdamW).
class AdamOptimizer {
 public:
  AdamOptimizer(ParameterStore& store, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& [name, v] : store.params()) slots_.push_back({v, Tensor(v->value.shape()), Tensor(v->value.shape())});
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
      if (s.param->grad.size() != s.param->value.size()) continue;
      auto& p = s.param->value;
      const auto& g = s.param->grad;
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1, vhat = s.v[i] / bc2;
        if (cfg_.optimizer == OptimizerKind::kAdamW) p[i] -= lr * cfg_.weight_decay * p[i];
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

 private:
  struct Slot {
    Var param;
    Tensor m;
    Tensor v;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  std::uint64_t t_ = 0;
};

/// Rescales all gradients so their global L2 norm is at most max_norm.
inline double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, v] : store.params())
    for (double g : v->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, v] : store.params())
      for (auto& g : v->grad.storage()) g *= s;
  }
  return norm;
}

/// Minibatch training on `samples`. Inputs outside `allowed` are zeroed for
/// every sample; DropModal, when configured, additionally drops Depth/IR per
/// sample. Deterministic given the config seeds.
inline TrainResult train(FlexModel& model, std::span<const ModalitySample* const> samples, const TrainConfig& cfg,
                         ModalitySet allowed = ModalitySet::all()) {
  cfg.validate();
  if (!allowed.contains(ModalityId::kRgb)) throw Error(ErrorCode::kMissingRgb, "training modalities must include rgb");
  bool has_bona = false, has_attack = false;
  for (const auto* s : samples) (s->label == Label::kBonafide ? has_bona : has_attack) = true;
  if (!has_bona || !has_attack) throw Error(ErrorCode::kOneClassOnly, "training split needs both classes");

  Rng order_rng(cfg.seed);
  std::mt19937_64 drop_rng = cfg.dropmodal ? dropmodal_stream(*cfg.dropmodal) : std::mt19937_64(0);
  AdamOptimizer opt(model.store(), cfg);
  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      Batch batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.samples.push_back(samples[order[i]]);
        ModalitySet active = allowed;
        if (cfg.dropmodal) active = active.intersect(draw_dropmodal(*cfg.dropmodal, drop_rng));
        active.insert(ModalityId::kRgb);
        batch.active.push_back(active);
      }
      model.store().zero_grad();
      const Var loss = model.loss(batch, Mode::kTrain);
      const double value = loss->value[0];
      if (!std::isfinite(value)) {
        throw Error(ErrorCode::kNonfiniteLoss,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index));
      }
      backward(loss);
      if (cfg.grad_clip_norm > 0.0) clip_grad_norm(model.store(), cfg.grad_clip_norm);
      opt.step(lr);
      loss_sum += value * static_cast<double>(batch.samples.size());
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(samples.size()));
    result.epoch_lr.push_back(lr);
  }
  model.store().zero_grad();
  std::ostringstream state;
  state << order_rng;
  result.rng_state = state.str();
  return result;
}

}  // namespace flexfas
