#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "flexfas/autograd.hpp"
#include "flexfas/error.hpp"
#include "flexfas/tensor.hpp"

namespace flexfas {

using Rng = std::mt19937_64;

/// RGB is the anchor modality; it is present in every deployment scenario.
enum class ModalityId : std::uint8_t { kRgb = 0, kDepth = 1, kIr = 2 };

inline constexpr std::array<ModalityId, 3> kAllModalities{ModalityId::kRgb, ModalityId::kDepth, ModalityId::kIr};
inline constexpr std::size_t kNumModalities = 3;

constexpr std::size_t index_of(ModalityId m) { return static_cast<std::size_t>(m); }

constexpr std::string_view to_string(ModalityId m) {
  switch (m) {
    case ModalityId::kRgb: return "rgb";
    case ModalityId::kDepth: return "depth";
    case ModalityId::kIr: return "ir";
  }
  return "?";
}

inline ModalityId parse_modality(std::string_view s) {
  if (s == "rgb" || s == "RGB") return ModalityId::kRgb;
  if (s == "depth" || s == "DEPTH" || s == "Depth") return ModalityId::kDepth;
  if (s == "ir" || s == "IR") return ModalityId::kIr;
  throw Error(ErrorCode::kInvalidArgument, "unknown modality '" + std::string(s) + "'");
}

/// Small value set over the three modalities.
class ModalitySet {
 public:
  constexpr ModalitySet() = default;
  constexpr ModalitySet(std::initializer_list<ModalityId> ms) {
    for (auto m : ms) insert(m);
  }

  static constexpr ModalitySet all() { return {ModalityId::kRgb, ModalityId::kDepth, ModalityId::kIr}; }

  constexpr bool contains(ModalityId m) const { return (bits_ >> index_of(m)) & 1U; }
  constexpr void insert(ModalityId m) { bits_ |= static_cast<std::uint8_t>(1U << index_of(m)); }
  constexpr void erase(ModalityId m) { bits_ &= static_cast<std::uint8_t>(~(1U << index_of(m))); }
  constexpr std::size_t size() const { return (bits_ & 1U) + ((bits_ >> 1) & 1U) + ((bits_ >> 2) & 1U); }
  constexpr std::uint8_t bits() const { return bits_; }

  constexpr ModalitySet intersect(ModalitySet o) const {
    ModalitySet r;
    r.bits_ = bits_ & o.bits_;
    return r;
  }

  std::string to_string() const {
    std::string s;
    for (auto m : kAllModalities)
      if (contains(m)) s += (s.empty() ? "" : "+") + std::string(flexfas::to_string(m));
    return s;
  }

  friend constexpr bool operator==(ModalitySet, ModalitySet) = default;

 private:
  std::uint8_t bits_ = 0;
};

enum class Label : std::uint8_t { kBonafide, kAttack };

constexpr std::string_view to_string(Label l) { return l == Label::kBonafide ? "bonafide" : "attack"; }

inline Label parse_label(std::string_view s) {
  if (s == "bonafide" || s == "BONAFIDE") return Label::kBonafide;
  if (s == "attack" || s == "ATTACK") return Label::kAttack;
  throw Error(ErrorCode::kInvalidArgument, "unknown label '" + std::string(s) + "'");
}

/// One capture. Arrays are [C, H, W] with values in [0,1]; RGB has C=3, the
/// other modalities C=1 (or 3). Absent modalities are treated as zeros.
struct ModalitySample {
  std::string sample_id;
  std::array<std::optional<Tensor>, kNumModalities> images;
  Label label = Label::kBonafide;
  std::optional<std::string> pai;
  std::string subject_id;
  std::string dataset_id;

  const std::optional<Tensor>& image(ModalityId m) const { return images[index_of(m)]; }
  std::optional<Tensor>& image(ModalityId m) { return images[index_of(m)]; }
  bool has(ModalityId m) const { return images[index_of(m)].has_value(); }
};

struct ScoreRecord {
  std::string sample_id;
  double score = 0.0;  // higher = more bonafide
  Label label = Label::kBonafide;
  std::optional<std::string> pai;
};

/// Per-modality feature maps [B, C', H', W'], all with one shape.
struct FeatureBundle {
  std::array<Var, kNumModalities> features;

  const Var& operator[](ModalityId m) const { return features[index_of(m)]; }
  Var& operator[](ModalityId m) { return features[index_of(m)]; }

  void check_shapes() const {
    for (auto m : kAllModalities) {
      if (!features[index_of(m)]) throw Error(ErrorCode::kShapeMismatch, "feature bundle missing " + std::string(to_string(m)));
    }
    const auto& s0 = features[0]->value.shape();
    if (s0.size() != 4) throw Error(ErrorCode::kShapeMismatch, "features must be [B,C,H,W], got " + shape_to_string(s0));
    for (auto m : kAllModalities) {
      const auto& s = features[index_of(m)]->value.shape();
      if (s != s0) {
        throw Error(ErrorCode::kShapeMismatch, std::string(to_string(m)) + " features " + shape_to_string(s) +
                                                   " differ from rgb " + shape_to_string(s0));
      }
    }
  }
};

struct ValidationError {
  ErrorCode code;
  std::string message;
};

/// Returns nothing when every sample invariant holds, otherwise the first
/// violated invariant. Check order: RGB presence, shapes, values.
inline std::optional<ValidationError> validate_sample(const ModalitySample& s) {
  if (!s.has(ModalityId::kRgb)) return ValidationError{ErrorCode::kMissingRgb, s.sample_id + ": rgb array absent"};
  const Tensor& rgb = *s.image(ModalityId::kRgb);
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    return ValidationError{ErrorCode::kShapeMismatch, s.sample_id + ": rgb must be [3,H,W], got " + shape_to_string(rgb.shape())};
  }
  for (auto m : {ModalityId::kDepth, ModalityId::kIr}) {
    if (!s.has(m)) continue;
    const Tensor& t = *s.image(m);
    if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3) || t.dim(1) != rgb.dim(1) || t.dim(2) != rgb.dim(2)) {
      return ValidationError{ErrorCode::kShapeMismatch, s.sample_id + ": " + std::string(to_string(m)) + " shape " +
                                                            shape_to_string(t.shape()) + " incompatible with rgb " +
                                                            shape_to_string(rgb.shape())};
    }
  }
  for (auto m : kAllModalities) {
    if (!s.has(m)) continue;
    for (double v : s.image(m)->data()) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        return ValidationError{ErrorCode::kValueRange,
                               s.sample_id + ": " + std::string(to_string(m)) + " value outside [0,1]"};
      }
    }
  }
  return std::nullopt;
}

inline void require_valid(const ModalitySample& s) {
  if (auto err = validate_sample(s)) throw Error(err->code, err->message);
}

inline void validate_score(const ScoreRecord& r) {
  if (!std::isfinite(r.score) || r.score < 0.0 || r.score > 1.0) {
    throw Error(ErrorCode::kValueRange, r.sample_id + ": score " + std::to_string(r.score) + " outside [0,1]");
  }
}

}  // namespace flexfas
