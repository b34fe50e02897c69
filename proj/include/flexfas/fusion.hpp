#pragma once

// Feature-level fusion of the three modality feature maps into one map that
// feeds the prediction head. Three operators are provided:
//
//   concat           ReLU(BN(Conv1x1(Concat(F_rgb, F_depth, F_ir))))
//   squeeze-excite   each F_m gated channel-wise by sigmoid(FC(ReLU(FC(AvgPool(F_m))))),
//                    then aggregated as in concat
//   cross-attention  F^CA_m = Softmax(vec(F_m) vec(F_rgb)^T) vec(F_rgb) for m in {depth, ir},
//                    reshaped back to [C', H', W'];
//                    ReLU(BN(Conv1x1(F_rgb + F^CA_depth + F^CA_ir)))
//
// The attention logits are not scaled or temperature-adjusted.

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

#include "flexfas/core.hpp"
#include "flexfas/layers.hpp"

namespace flexfas {

enum class FusionKind { kConcat, kSe, kCrossAttention };

constexpr std::string_view to_string(FusionKind k) {
  switch (k) {
    case FusionKind::kConcat: return "concat";
    case FusionKind::kSe: return "se";
    case FusionKind::kCrossAttention: return "cross_attention";
  }
  return "?";
}

inline FusionKind parse_fusion_kind(std::string_view s) {
  if (s == "concat") return FusionKind::kConcat;
  if (s == "se") return FusionKind::kSe;
  if (s == "cross_attention" || s == "ca") return FusionKind::kCrossAttention;
  throw Error(ErrorCode::kInvalidArgument, "unknown fusion kind '" + std::string(s) + "'");
}

struct FusionConfig {
  FusionKind kind = FusionKind::kConcat;
  std::size_t in_channels = 16;
  std::size_t out_channels = 0;  // 0 means in_channels
  std::size_t se_reduction = 8;
  double bn_eps = 1e-5;

  std::size_t resolved_out_channels() const { return out_channels == 0 ? in_channels : out_channels; }
  /// Intermediate SE width, floor(C'/reduction) clamped to at least one unit.
  std::size_t se_width() const { return std::max<std::size_t>(1, in_channels / se_reduction); }
  std::size_t conv_in_channels() const {
    return kind == FusionKind::kCrossAttention ? in_channels : kNumModalities * in_channels;
  }

  void validate() const {
    if (in_channels == 0) throw Error(ErrorCode::kInvalidArgument, "fusion in_channels must be >= 1");
    if (se_reduction == 0) throw Error(ErrorCode::kInvalidArgument, "fusion se_reduction must be >= 1");
    if (bn_eps < 0.0) throw Error(ErrorCode::kInvalidArgument, "fusion bn_eps must be >= 0");
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

class Fusion {
 public:
  Fusion() = default;
  Fusion(ParameterStore& store, const std::string& prefix, FusionConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t out = cfg_.resolved_out_channels();
    conv_ = Conv2d(store, prefix + ".conv", cfg_.conv_in_channels(), out, 1, {1, 0}, rng);
    bn_ = BatchNorm2d(store, prefix + ".bn", out, cfg_.bn_eps);
    if (cfg_.kind == FusionKind::kSe) {
      for (auto m : kAllModalities) {
        const std::string base = prefix + ".se." + std::string(to_string(m));
        se_[index_of(m)].fc1 = Linear(store, base + ".fc1", cfg_.in_channels, cfg_.se_width(), rng);
        se_[index_of(m)].fc2 = Linear(store, base + ".fc2", cfg_.se_width(), cfg_.in_channels, rng);
      }
    }
  }

  const FusionConfig& config() const { return cfg_; }
  const Conv2d& conv() const { return conv_; }
  const BatchNorm2d& bn() const { return bn_; }
  const Linear& se_fc1(ModalityId m) const { return se_[index_of(m)].fc1; }
  const Linear& se_fc2(ModalityId m) const { return se_[index_of(m)].fc2; }

  Var operator()(const FeatureBundle& b, Mode mode) const {
    switch (cfg_.kind) {
      case FusionKind::kConcat: return fuse_concat(b, mode);
      case FusionKind::kSe: return fuse_se(b, mode);
      case FusionKind::kCrossAttention: return fuse_cross_attention(b, mode);
    }
    throw Error(ErrorCode::kInvalidArgument, "bad fusion kind");
  }

  Var fuse_concat(const FeatureBundle& b, Mode mode) const {
    require_kind(FusionKind::kConcat);
    b.check_shapes();
    return aggregate(concat_channels({b[ModalityId::kRgb], b[ModalityId::kDepth], b[ModalityId::kIr]}), mode);
  }

  Var fuse_se(const FeatureBundle& b, Mode mode) const {
    require_kind(FusionKind::kSe);
    b.check_shapes();
    std::vector<Var> refined;
    for (auto m : kAllModalities) refined.push_back(se_refine(m, b[m]));
    return aggregate(concat_channels(refined), mode);
  }

  Var fuse_cross_attention(const FeatureBundle& b, Mode mode) const {
    require_kind(FusionKind::kCrossAttention);
    return aggregate(cross_attention_sum(b), mode);
  }

  /// Channel gate in (0,1) for one modality's features: [B, C'].
  Var se_gate(ModalityId m, const Var& features) const {
    require_kind(FusionKind::kSe);
    const auto& unit = se_[index_of(m)];
    return sigmoid(unit.fc2(relu(unit.fc1(global_avg_pool(features)))));
  }

  /// F_m scaled by its gate, broadcast over spatial positions.
  Var se_refine(ModalityId m, const Var& features) const { return channel_scale(features, se_gate(m, features)); }

  /// Row-softmax of query_tokens * key_tokens^T, both [B, N, C'] -> [B, N, N].
  static Var cross_attention_map(const Var& query_tokens, const Var& key_tokens) {
    return softmax_last(bmm(query_tokens, transpose_last2(key_tokens)));
  }

  /// Cross-attended features for one query modality, reshaped back to [B, C', H', W'].
  static Var cross_attend(const Var& query, const Var& rgb) {
    const auto& s = rgb->value.shape();
    const Var rgb_tokens = spatial_to_tokens(rgb);
    const Var attn = cross_attention_map(spatial_to_tokens(query), rgb_tokens);
    return tokens_to_spatial(bmm(attn, rgb_tokens), s[2], s[3]);
  }

  /// F_rgb + F^CA_depth + F^CA_ir, the input of the aggregation convolution.
  static Var cross_attention_sum(const FeatureBundle& b) {
    b.check_shapes();
    const Var& rgb = b[ModalityId::kRgb];
    return add(add(rgb, cross_attend(b[ModalityId::kDepth], rgb)), cross_attend(b[ModalityId::kIr], rgb));
  }

 private:
  struct SeUnit {
    Linear fc1;
    Linear fc2;
  };

  void require_kind(FusionKind k) const {
    if (cfg_.kind != k) {
      throw Error(ErrorCode::kInvalidArgument, "fusion configured as " + std::string(to_string(cfg_.kind)) +
                                                   ", called as " + std::string(to_string(k)));
    }
  }

  Var aggregate(const Var& x, Mode mode) const { return relu(bn_(conv_(x), mode)); }

  FusionConfig cfg_;
  Conv2d conv_;
  BatchNorm2d bn_;
  std::array<SeUnit, kNumModalities> se_;
};

}  // namespace flexfas
