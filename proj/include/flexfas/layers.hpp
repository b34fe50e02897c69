#pragma once

// Parameter containers and the handful of layers the toy networks are built
// from. Layers hold handles into a ParameterStore and are cheap to copy.

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include "flexfas/core.hpp"

namespace flexfas {

enum class Mode { kTrain, kInfer };

/// Named learnable tensors plus batch-norm running statistics. Names are
/// dotted paths whose first component is the owning top-level module.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Var add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
    auto v = leaf(std::move(init));
    params_.emplace(name, v);
    return v;
  }

  std::shared_ptr<BatchNormStats> add_stats(const std::string& name, std::size_t channels) {
    auto s = std::make_shared<BatchNormStats>(BatchNormStats{Tensor({channels}, 0.0), Tensor({channels}, 1.0)});
    stats_.emplace(name, s);
    return s;
  }

  const std::map<std::string, Var>& params() const { return params_; }
  const std::map<std::string, std::shared_ptr<BatchNormStats>>& stats() const { return stats_; }

  const Var& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::kInvalidArgument, "no parameter " + name);
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [k, v] : params_) v->grad = Tensor();
  }

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, std::shared_ptr<BatchNormStats>> stats_;
};

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, Conv2dGeometry geo, Rng& rng, bool with_bias = true)
      : geo_(geo) {
    const double fan_in = static_cast<double>(in_channels * kernel * kernel);
    weight_ = store.add(name + ".weight",
                        normal_tensor({out_channels, in_channels, kernel, kernel}, std::sqrt(2.0 / fan_in), rng));
    if (with_bias) bias_ = store.add(name + ".bias", Tensor({out_channels}));
  }

  Var operator()(const Var& x) const { return conv2d(x, weight_, bias_, geo_); }

  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_;
  Var bias_;
  Conv2dGeometry geo_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore& store, const std::string& name, std::size_t channels, double eps = 1e-5)
      : gamma_(store.add(name + ".weight", Tensor({channels}, 1.0))),
        beta_(store.add(name + ".bias", Tensor({channels}, 0.0))),
        stats_(store.add_stats(name, channels)),
        eps_(eps) {}

  Var operator()(const Var& x, Mode mode) const {
    return batch_norm2d(x, gamma_, beta_, *stats_, {.training = mode == Mode::kTrain, .momentum = 0.1, .eps = eps_});
  }

  const Var& gamma() const { return gamma_; }
  const Var& beta() const { return beta_; }
  BatchNormStats& stats() const { return *stats_; }

 private:
  Var gamma_;
  Var beta_;
  std::shared_ptr<BatchNormStats> stats_;
  double eps_ = 1e-5;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true) {
    weight_ = store.add(name + ".weight", normal_tensor({out, in}, std::sqrt(1.0 / static_cast<double>(in)), rng));
    if (with_bias) bias_ = store.add(name + ".bias", Tensor({out}));
  }

  Var operator()(const Var& x) const { return linear(x, weight_, bias_); }

  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim)
      : gamma_(store.add(name + ".weight", Tensor({dim}, 1.0))), beta_(store.add(name + ".bias", Tensor({dim}))) {}

  Var operator()(const Var& x) const { return layer_norm_last(x, gamma_, beta_); }

 private:
  Var gamma_;
  Var beta_;
};

}  // namespace flexfas
