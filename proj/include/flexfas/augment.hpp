#pragma once

#include <cstdint>
#include <random>

#include "flexfas/core.hpp"

namespace flexfas {

/// Random zeroing of Depth and IR inputs during training. RGB is never dropped.
struct DropModalConfig {
  double p_depth = 0.3;
  double p_ir = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(p_depth >= 0.0 && p_depth <= 1.0) || !(p_ir >= 0.0 && p_ir <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "dropmodal probabilities must lie in [0,1]");
    }
  }

  friend bool operator==(const DropModalConfig&, const DropModalConfig&) = default;
};

/// Independent stream for data worker `worker` (seed + worker index).
inline std::mt19937_64 dropmodal_stream(const DropModalConfig& cfg, std::uint64_t worker = 0) {
  return std::mt19937_64(cfg.seed + worker);
}

namespace detail {
inline void zero_image(std::optional<Tensor>& img) {
  if (img) img->fill(0.0);
}
}  // namespace detail

/// Draws which modalities survive for one sample: Depth with probability
/// 1 - p_depth, IR with probability 1 - p_ir, independently.
inline ModalitySet draw_dropmodal(const DropModalConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ModalitySet keep = ModalitySet::all();
  if (u(rng) < cfg.p_depth) keep.erase(ModalityId::kDepth);
  if (u(rng) < cfg.p_ir) keep.erase(ModalityId::kIr);
  return keep;
}

inline ModalitySample mask_modalities(const ModalitySample& s, ModalitySet active) {
  if (!active.contains(ModalityId::kRgb)) throw Error(ErrorCode::kMissingRgb, "active set must contain rgb");
  ModalitySample out = s;
  for (auto m : kAllModalities)
    if (!active.contains(m)) detail::zero_image(out.image(m));
  return out;
}

inline ModalitySample drop_modal(const ModalitySample& s, const DropModalConfig& cfg, std::mt19937_64& rng) {
  return mask_modalities(s, draw_dropmodal(cfg, rng));
}

}  // namespace flexfas
