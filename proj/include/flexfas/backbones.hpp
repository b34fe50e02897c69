#pragma once

// Modality-branch encoders, prediction heads and the assembled flexible-modal
// network. The encoders are desk-scale stand-ins for the large backbones:
//
//   toy_cnn     three conv3x3/stride-2 + BN + ReLU blocks
//   toy_resnet  conv stem + two stride-2 residual blocks with projection shortcuts
//   toy_vit     patch embedding + learned positions + two pre-norm encoder layers
//
// All of them reduce a [B, 3, H, W] input to [B, C', H', W']; fusion happens
// after the last encoder stage.

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flexfas/augment.hpp"
#include "flexfas/core.hpp"
#include "flexfas/fusion.hpp"
#include "flexfas/layers.hpp"

namespace flexfas {

enum class Arch { kToyCnn, kToyResnet, kToyVit };

constexpr std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::kToyCnn: return "toy_cnn";
    case Arch::kToyResnet: return "toy_resnet";
    case Arch::kToyVit: return "toy_vit";
  }
  return "?";
}

inline Arch parse_arch(std::string_view s) {
  if (s == "toy_cnn") return Arch::kToyCnn;
  if (s == "toy_resnet") return Arch::kToyResnet;
  if (s == "toy_vit") return Arch::kToyVit;
  throw Error(ErrorCode::kInvalidArgument, "unknown arch '" + std::string(s) + "'");
}

enum class HeadKind { kBinaryLogit, kBinaryMap };

constexpr std::string_view to_string(HeadKind k) { return k == HeadKind::kBinaryLogit ? "binary_logit" : "binary_map"; }

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "binary_logit") return HeadKind::kBinaryLogit;
  if (s == "binary_map") return HeadKind::kBinaryMap;
  throw Error(ErrorCode::kInvalidArgument, "unknown head '" + std::string(s) + "'");
}

struct BranchConfig {
  Arch arch = Arch::kToyCnn;
  bool shared = true;
  std::size_t feature_channels = 16;
  std::size_t patch_size = 8;  // toy_vit only

  friend bool operator==(const BranchConfig&, const BranchConfig&) = default;
};

struct HeadConfig {
  HeadKind kind = HeadKind::kBinaryLogit;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct ModelConfig {
  BranchConfig branch;
  FusionKind fusion = FusionKind::kConcat;
  std::size_t se_reduction = 8;
  HeadConfig head;
  std::size_t input_height = 32;
  std::size_t input_width = 32;

  FusionConfig fusion_config() const {
    return FusionConfig{.kind = fusion, .in_channels = branch.feature_channels, .out_channels = 0,
                        .se_reduction = se_reduction, .bn_eps = 1e-5};
  }

  /// Spatial grid (H', W') of the encoder output.
  std::pair<std::size_t, std::size_t> feature_grid() const {
    if (branch.arch == Arch::kToyVit) return {input_height / branch.patch_size, input_width / branch.patch_size};
    auto halve3 = [](std::size_t n) {
      for (int i = 0; i < 3; ++i) n = (n + 1) / 2;
      return n;
    };
    return {halve3(input_height), halve3(input_width)};
  }

  void validate() const {
    if (branch.feature_channels < 2) throw Error(ErrorCode::kInvalidArgument, "feature_channels must be >= 2");
    if (input_height == 0 || input_width == 0) throw Error(ErrorCode::kShapeInvalid, "input size must be positive");
    if (branch.arch == Arch::kToyVit) {
      if (branch.patch_size == 0 || input_height % branch.patch_size || input_width % branch.patch_size) {
        throw Error(ErrorCode::kShapeInvalid, "toy_vit input size must be a multiple of patch_size");
      }
    }
    fusion_config().validate();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Encoders

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Var operator()(const Var& x, Mode mode) const = 0;
};

class ToyCnnEncoder final : public Encoder {
 public:
  ToyCnnEncoder(ParameterStore& store, const std::string& prefix, std::size_t channels, Rng& rng) {
    const std::size_t widths[] = {3, std::max<std::size_t>(4, channels / 2), channels, channels};
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string name = prefix + ".block" + std::to_string(i + 1);
      convs_[i] = Conv2d(store, name + ".conv", widths[i], widths[i + 1], 3, {2, 1}, rng);
      bns_[i] = BatchNorm2d(store, name + ".bn", widths[i + 1]);
    }
  }

  Var operator()(const Var& x, Mode mode) const override {
    Var h = x;
    for (std::size_t i = 0; i < 3; ++i) h = relu(bns_[i](convs_[i](h), mode));
    return h;
  }

 private:
  std::array<Conv2d, 3> convs_;
  std::array<BatchNorm2d, 3> bns_;
};

class ToyResNetEncoder final : public Encoder {
 public:
  ToyResNetEncoder(ParameterStore& store, const std::string& prefix, std::size_t channels, Rng& rng) {
    const std::size_t stem = std::max<std::size_t>(4, channels / 2);
    stem_conv_ = Conv2d(store, prefix + ".stem.conv", 3, stem, 3, {2, 1}, rng);
    stem_bn_ = BatchNorm2d(store, prefix + ".stem.bn", stem);
    blocks_[0] = Block(store, prefix + ".block1", stem, channels, rng);
    blocks_[1] = Block(store, prefix + ".block2", channels, channels, rng);
  }

  Var operator()(const Var& x, Mode mode) const override {
    Var h = relu(stem_bn_(stem_conv_(x), mode));
    for (const auto& b : blocks_) h = b(h, mode);
    return h;
  }

 private:
  struct Block {
    Block() = default;
    Block(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : conv1(store, name + ".conv1", in, out, 3, {2, 1}, rng),
          bn1(store, name + ".bn1", out),
          conv2(store, name + ".conv2", out, out, 3, {1, 1}, rng),
          bn2(store, name + ".bn2", out),
          proj(store, name + ".proj", in, out, 1, {2, 0}, rng, false),
          proj_bn(store, name + ".proj_bn", out) {}

    Var operator()(const Var& x, Mode mode) const {
      Var h = relu(bn1(conv1(x), mode));
      h = bn2(conv2(h), mode);
      return relu(add(h, proj_bn(proj(x), mode)));
    }

    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
    Conv2d proj;
    BatchNorm2d proj_bn;
  };

  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  std::array<Block, 2> blocks_;
};

class ToyVitEncoder final : public Encoder {
 public:
  ToyVitEncoder(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t patch,
                std::size_t height, std::size_t width, Rng& rng)
      : dim_(dim), grid_h_(height / patch), grid_w_(width / patch) {
    patch_embed_ = Conv2d(store, prefix + ".patch_embed", 3, dim, patch, {patch, 0}, rng);
    positions_ = store.add(prefix + ".pos_embed", normal_tensor({grid_h_ * grid_w_, dim}, 0.02, rng));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string name = prefix + ".layer" + std::to_string(i + 1);
      auto& l = layers_[i];
      l.norm1 = LayerNorm(store, name + ".norm1", dim);
      l.q = Linear(store, name + ".attn.q", dim, dim, rng);
      l.k = Linear(store, name + ".attn.k", dim, dim, rng);
      l.v = Linear(store, name + ".attn.v", dim, dim, rng);
      l.proj = Linear(store, name + ".attn.proj", dim, dim, rng);
      l.norm2 = LayerNorm(store, name + ".norm2", dim);
      l.fc1 = Linear(store, name + ".mlp.fc1", dim, 2 * dim, rng);
      l.fc2 = Linear(store, name + ".mlp.fc2", 2 * dim, dim, rng);
    }
    final_norm_ = LayerNorm(store, prefix + ".norm", dim);
  }

  Var operator()(const Var& x, Mode) const override {
    Var t = add_broadcast_batch(spatial_to_tokens(patch_embed_(x)), positions_);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (const auto& l : layers_) {
      const Var h = l.norm1(t);
      const Var attn = softmax_last(scale(bmm(l.q(h), transpose_last2(l.k(h))), attn_scale));
      t = add(t, l.proj(bmm(attn, l.v(h))));
      t = add(t, l.fc2(gelu(l.fc1(l.norm2(t)))));
    }
    return tokens_to_spatial(final_norm_(t), grid_h_, grid_w_);
  }

 private:
  struct Layer {
    LayerNorm norm1;
    Linear q, k, v, proj;
    LayerNorm norm2;
    Linear fc1, fc2;
  };

  std::size_t dim_;
  std::size_t grid_h_;
  std::size_t grid_w_;
  Conv2d patch_embed_;
  Var positions_;
  std::array<Layer, 2> layers_;
  LayerNorm final_norm_;
};

inline std::shared_ptr<const Encoder> make_encoder(ParameterStore& store, const std::string& prefix,
                                                   const ModelConfig& cfg, Rng& rng) {
  const std::size_t c = cfg.branch.feature_channels;
  switch (cfg.branch.arch) {
    case Arch::kToyCnn: return std::make_shared<ToyCnnEncoder>(store, prefix, c, rng);
    case Arch::kToyResnet: return std::make_shared<ToyResNetEncoder>(store, prefix, c, rng);
    case Arch::kToyVit:
      return std::make_shared<ToyVitEncoder>(store, prefix, c, cfg.branch.patch_size, cfg.input_height,
                                             cfg.input_width, rng);
  }
  throw Error(ErrorCode::kInvalidArgument, "bad arch");
}

// ---------------------------------------------------------------------------
// Head

/// binary_logit: linear layer on globally pooled features -> [B, 1].
/// binary_map:   1x1 convolution to a single-channel map -> [B, 1, H', W'].
class Head {
 public:
  Head() = default;
  Head(ParameterStore& store, const std::string& prefix, HeadConfig cfg, std::size_t channels, Rng& rng)
      : cfg_(cfg) {
    if (cfg_.kind == HeadKind::kBinaryLogit) {
      linear_ = Linear(store, prefix + ".linear", channels, 1, rng);
    } else {
      conv_ = Conv2d(store, prefix + ".conv", channels, 1, 1, {1, 0}, rng);
    }
  }

  Var operator()(const Var& fused) const {
    return cfg_.kind == HeadKind::kBinaryLogit ? linear_(global_avg_pool(fused)) : conv_(fused);
  }

  /// Liveness score per batch item: sigmoid(logit), or the mean of the sigmoid map.
  static std::vector<double> scores(const Tensor& logits) {
    const std::size_t B = logits.dim(0), per = logits.size() / B;
    std::vector<double> out(B);
    for (std::size_t b = 0; b < B; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < per; ++i) acc += sigmoid(logits[b * per + i]);
      out[b] = acc / static_cast<double>(per);
    }
    return out;
  }

  const HeadConfig& config() const { return cfg_; }
  const Linear& linear_layer() const { return linear_; }
  const Conv2d& conv_layer() const { return conv_; }

 private:
  HeadConfig cfg_;
  Linear linear_;
  Conv2d conv_;
};

/// Mean binary cross-entropy of probabilities against 0/1 targets, with the
/// probabilities clamped to [eps, 1 - eps].
inline double binary_cross_entropy(std::span<const double> probs, std::span<const Label> labels, double eps = 1e-7) {
  if (probs.empty()) throw Error(ErrorCode::kEmptyBatch, "binary_cross_entropy on empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], eps, 1.0 - eps);
    acc -= labels[i] == Label::kBonafide ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(probs.size());
}

// ---------------------------------------------------------------------------
// Assembled network

struct Batch {
  std::vector<const ModalitySample*> samples;
  std::vector<ModalitySet> active;  // one entry per sample
};

class FlexModel {
 public:
  FlexModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    if (cfg_.branch.shared) {
      auto enc = make_encoder(store_, "encoder.shared", cfg_, rng);
      encoders_.fill(enc);
    } else {
      for (auto m : kAllModalities)
        encoders_[index_of(m)] = make_encoder(store_, "encoder." + std::string(to_string(m)), cfg_, rng);
    }
    fusion_ = Fusion(store_, "fusion", cfg_.fusion_config(), rng);
    head_ = Head(store_, "head", cfg_.head, cfg_.branch.feature_channels, rng);
  }

  FlexModel(const FlexModel&) = delete;
  FlexModel& operator=(const FlexModel&) = delete;
  FlexModel(FlexModel&&) = default;
  FlexModel& operator=(FlexModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const Encoder& encoder(ModalityId m) const { return *encoders_[index_of(m)]; }
  const Fusion& fusion() const { return fusion_; }
  const Head& head() const { return head_; }

  /// Branch inputs [B, 3, H, W] per modality. A modality that is inactive for
  /// a sample, or absent from it, contributes an all-zero array; single-channel
  /// arrays are replicated to three channels.
  std::array<Tensor, kNumModalities> assemble_inputs(const Batch& batch) const {
    if (batch.samples.empty()) throw Error(ErrorCode::kEmptyBatch, "empty batch");
    if (batch.active.size() != batch.samples.size())
      throw Error(ErrorCode::kInvalidArgument, "one active set per sample required");
    const std::size_t B = batch.samples.size(), H = cfg_.input_height, W = cfg_.input_width, HW = H * W;
    std::array<Tensor, kNumModalities> inputs;
    for (auto& t : inputs) t = Tensor({B, 3, H, W});
    for (std::size_t b = 0; b < B; ++b) {
      const ModalitySample& s = *batch.samples[b];
      if (!batch.active[b].contains(ModalityId::kRgb))
        throw Error(ErrorCode::kMissingRgb, "active set must contain rgb");
      if (!s.has(ModalityId::kRgb)) throw Error(ErrorCode::kMissingRgb, s.sample_id + ": rgb array absent");
      for (auto m : kAllModalities) {
        if (!batch.active[b].contains(m) || !s.has(m)) continue;
        const Tensor& img = *s.image(m);
        if (img.rank() != 3 || img.dim(1) != H || img.dim(2) != W || (img.dim(0) != 1 && img.dim(0) != 3)) {
          throw Error(ErrorCode::kShapeInvalid, s.sample_id + ": " + std::string(to_string(m)) + " shape " +
                                                    shape_to_string(img.shape()) + " does not match model input");
        }
        double* dst = inputs[index_of(m)].data().data() + b * 3 * HW;
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t src_c = img.dim(0) == 1 ? 0 : c;
          std::copy_n(img.data().begin() + src_c * HW, HW, dst + c * HW);
        }
      }
    }
    return inputs;
  }

  FeatureBundle encode_inputs(const std::array<Var, kNumModalities>& inputs, Mode mode) const {
    FlopScope scope("encoder");
    FeatureBundle bundle;
    for (auto m : kAllModalities) bundle[m] = (*encoders_[index_of(m)])(inputs[index_of(m)], mode);
    return bundle;
  }

  FeatureBundle encode(const Batch& batch, Mode mode) const {
    auto raw = assemble_inputs(batch);
    std::array<Var, kNumModalities> inputs;
    for (std::size_t i = 0; i < kNumModalities; ++i) inputs[i] = constant(std::move(raw[i]));
    return encode_inputs(inputs, mode);
  }

  FeatureBundle encode(const ModalitySample& s, ModalitySet active, Mode mode = Mode::kInfer) const {
    return encode(Batch{{&s}, {active}}, mode);
  }

  Var head_output(const FeatureBundle& bundle, Mode mode) const {
    Var fused;
    {
      FlopScope scope("fusion");
      fused = fusion_(bundle, mode);
    }
    FlopScope scope("head");
    return head_(fused);
  }

  /// Head output (logits or logit map) for a batch.
  Var forward(const Batch& batch, Mode mode) const { return head_output(encode(batch, mode), mode); }

  std::vector<double> predict(const Batch& batch) const {
    NoGradGuard no_grad;
    return Head::scores(forward(batch, Mode::kInfer)->value);
  }

  double predict(const ModalitySample& s, ModalitySet active) const { return predict(Batch{{&s}, {active}})[0]; }

  /// Mean BCE against bonafide=1 / attack=0, per sample for the logit head and
  /// per map pixel for the map head.
  Var loss(const Batch& batch, Mode mode = Mode::kTrain) const {
    if (batch.samples.empty()) throw Error(ErrorCode::kEmptyBatch, "loss on empty batch");
    return loss_from_output(forward(batch, mode), batch);
  }

  static Var loss_from_output(const Var& out, const Batch& batch) {
    Tensor targets(out->value.shape());
    const std::size_t per = targets.size() / batch.samples.size();
    for (std::size_t b = 0; b < batch.samples.size(); ++b) {
      const double t = batch.samples[b]->label == Label::kBonafide ? 1.0 : 0.0;
      std::fill_n(targets.data().begin() + b * per, per, t);
    }
    return bce_with_logits(out, targets);
  }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  std::array<std::shared_ptr<const Encoder>, kNumModalities> encoders_;
  Fusion fusion_;
  Head head_;
};

}  // namespace flexfas
