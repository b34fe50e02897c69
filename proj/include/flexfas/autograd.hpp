#pragma once

// Minimal tape-free reverse-mode autodiff over Tensor. Each op builds a Node
// that remembers its parents and a closure that pushes the node's gradient
// back to them. Nodes whose inputs carry no gradient skip the closure, so the
// same code path serves inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "flexfas/error.hpp"
#include "flexfas/tensor.hpp"

namespace flexfas {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Leaf without gradient tracking.
inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

/// Leaf that accumulates gradient (parameters and inputs under test).
inline Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

// ---------------------------------------------------------------------------
// FLOP accounting. Ops report their cost to the thread's active counter, if
// any, under the innermost named scope.

class FlopCounter {
 public:
  void add(std::uint64_t flops) { by_scope_[scope_.empty() ? std::string("other") : scope_.back()] += flops; }
  void push(std::string name) { scope_.push_back(std::move(name)); }
  void pop() { scope_.pop_back(); }
  const std::map<std::string, std::uint64_t>& by_scope() const { return by_scope_; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [k, v] : by_scope_) t += v;
    return t;
  }

 private:
  std::map<std::string, std::uint64_t> by_scope_;
  std::vector<std::string> scope_;
};

namespace detail {
inline FlopCounter*& active_flop_counter() {
  thread_local FlopCounter* counter = nullptr;
  return counter;
}
inline void count_flops(std::uint64_t n) {
  if (auto* c = active_flop_counter()) c->add(n);
}
}  // namespace detail

/// Installs a counter for the current thread for the lifetime of the guard.
class FlopCounting {
 public:
  explicit FlopCounting(FlopCounter& counter) : prev_(detail::active_flop_counter()) {
    detail::active_flop_counter() = &counter;
  }
  ~FlopCounting() { detail::active_flop_counter() = prev_; }
  FlopCounting(const FlopCounting&) = delete;
  FlopCounting& operator=(const FlopCounting&) = delete;

 private:
  FlopCounter* prev_;
};

class FlopScope {
 public:
  explicit FlopScope(std::string name) : counter_(detail::active_flop_counter()) {
    if (counter_) counter_->push(std::move(name));
  }
  ~FlopScope() {
    if (counter_) counter_->pop();
  }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* counter_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

inline Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!grad_enabled()) return n;
  bool any = false;
  for (const auto& p : parents) any = any || (p && p->requires_grad);
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

}  // namespace detail

/// Disables graph recording on this thread (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Back-propagates from a scalar root, seeding d(root)/d(root) = 1.
inline void backward(const Var& root) {
  if (root->value.size() != 1) throw Error(ErrorCode::kShapeMismatch, "backward root must be scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_shape(a->value.shape() == b->value.shape(),
                        "add: " + shape_to_string(a->value.shape()) + " vs " + shape_to_string(b->value.shape()));
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.storage()) v *= s;
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {a}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {a}, [](Node& self) {
    auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.storage()) v = sigmoid(v);
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

/// Exact (erf-based) GELU.
inline Var gelu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {a}, [](Node& self) {
    auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xi = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(xi / std::sqrt(2.0)));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
      g[i] += self.grad[i] * (cdf + xi * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return detail::make_node(std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// [B, M, N] -> [B, N, M]
inline Var transpose_last2(const Var& a) {
  const auto& s = a->value.shape();
  detail::require_shape(s.size() == 3, "transpose_last2 expects rank 3");
  const std::size_t B = s[0], M = s[1], N = s[2];
  Tensor out({B, N, M});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) out[(b * N + j) * M + i] = a->value[(b * M + i) * N + j];
  return detail::make_node(std::move(out), {a}, [B, M, N](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) g[(b * M + i) * N + j] += self.grad[(b * N + j) * M + i];
  });
}

/// [B, C, H, W] -> [B, H*W, C] (row n = spatial position n, the vectorized form)
inline Var spatial_to_tokens(const Var& a) {
  const auto& s = a->value.shape();
  detail::require_shape(s.size() == 4, "spatial_to_tokens expects rank 4");
  return transpose_last2(reshape(a, {s[0], s[1], s[2] * s[3]}));
}

/// [B, H*W, C] -> [B, C, H, W]
inline Var tokens_to_spatial(const Var& a, std::size_t height, std::size_t width) {
  const auto& s = a->value.shape();
  detail::require_shape(s.size() == 3 && s[1] == height * width, "tokens_to_spatial: token count mismatch");
  return reshape(transpose_last2(a), {s[0], s[2], height, width});
}

/// Concatenates [B, C_i, H, W] along the channel axis.
inline Var concat_channels(const std::vector<Var>& parts) {
  detail::require_shape(!parts.empty(), "concat_channels: no inputs");
  const auto& s0 = parts[0]->value.shape();
  detail::require_shape(s0.size() == 4, "concat_channels expects rank 4");
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape();
    detail::require_shape(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
                          "concat_channels: " + shape_to_string(s) + " vs " + shape_to_string(s0));
    total_c += s[1];
  }
  const std::size_t B = s0[0], HW = s0[2] * s0[3];
  Tensor out({B, total_c, s0[2], s0[3]});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t C = p->value.dim(1);
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(p->value.data().begin() + b * C * HW, C * HW, out.data().begin() + (b * total_c + off) * HW);
    off += C;
  }
  return detail::make_node(std::move(out), parts, [offsets, B, HW, total_c](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const std::size_t C = p->value.dim(1);
      auto& g = p->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < C * HW; ++i) g[b * C * HW + i] += self.grad[(b * total_c + offsets[k]) * HW + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

/// [B, C, H, W] -> [B, C]
inline Var global_avg_pool(const Var& a) {
  const auto& s = a->value.shape();
  detail::require_shape(s.size() == 4, "global_avg_pool expects rank 4");
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out({B, C});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += a->value[bc * HW + i];
    out[bc] = acc / static_cast<double>(HW);
  }
  detail::count_flops(a->value.size());
  return detail::make_node(std::move(out), {a}, [B, C, HW](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t i = 0; i < HW; ++i) g[bc * HW + i] += self.grad[bc] * inv;
  });
}

/// x[B, C, H, W] * gate[B, C] broadcast over spatial positions.
inline Var channel_scale(const Var& x, const Var& gate) {
  const auto& s = x->value.shape();
  detail::require_shape(s.size() == 4 && gate->value.shape() == Shape{s[0], s[1]}, "channel_scale: gate shape");
  const std::size_t BC = s[0] * s[1], HW = s[2] * s[3];
  Tensor out = x->value;
  for (std::size_t bc = 0; bc < BC; ++bc)
    for (std::size_t i = 0; i < HW; ++i) out[bc * HW + i] *= gate->value[bc];
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {x, gate}, [BC, HW](Node& self) {
    auto& xv = self.parents[0]->value;
    auto& gv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t bc = 0; bc < BC; ++bc)
        for (std::size_t i = 0; i < HW; ++i) g[bc * HW + i] += self.grad[bc * HW + i] * gv[bc];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t bc = 0; bc < BC; ++bc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += self.grad[bc * HW + i] * xv[bc * HW + i];
        g[bc] += acc;
      }
    }
  });
}

/// x[B, N, C] + table[N, C] broadcast over the batch.
inline Var add_broadcast_batch(const Var& x, const Var& table) {
  const auto& s = x->value.shape();
  detail::require_shape(s.size() == 3 && table->value.shape() == Shape{s[1], s[2]}, "add_broadcast_batch: shape");
  const std::size_t B = s[0], NC = s[1] * s[2];
  Tensor out = x->value;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < NC; ++i) out[b * NC + i] += table->value[i];
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {x, table}, [B, NC](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < NC; ++i) g[i] += self.grad[b * NC + i];
    }
  });
}

inline Var mean_all(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.data()) acc += v;
  const double n = static_cast<double>(a->value.size());
  return detail::make_node(Tensor({1}, std::vector<double>{acc / n}), {a}, [n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double d = self.grad[0] / n;
    for (auto& v : g.storage()) v += d;
  });
}

/// sum_i a[i] * w[i] for a constant weight tensor of the same shape.
inline Var weighted_sum(const Var& a, const Tensor& w) {
  detail::require_shape(a->value.shape() == w.shape(), "weighted_sum: weight shape");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += a->value[i] * w[i];
  detail::count_flops(2 * w.size());
  return detail::make_node(Tensor({1}, std::vector<double>{acc}), {a}, [w](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

/// Mean over all elements of the numerically stable binary cross-entropy
/// between sigmoid(logits) and targets in [0,1].
inline Var bce_with_logits(const Var& logits, const Tensor& targets) {
  detail::require_shape(logits->value.shape() == targets.shape(), "bce_with_logits: target shape");
  const std::size_t n = targets.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits->value[i], t = targets[i];
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return detail::make_node(Tensor({1}, std::vector<double>{acc / static_cast<double>(n)}), {logits},
                           [targets](Node& self) {
                             auto& z = self.parents[0]->value;
                             auto& g = self.parents[0]->ensure_grad();
                             const double d = self.grad[0] / static_cast<double>(targets.size());
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * (sigmoid(z[i]) - targets[i]);
                           });
}

// ---------------------------------------------------------------------------
// Matrix products

/// a[B, M, K] x b[B, K, N] -> [B, M, N]
inline Var bmm(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  detail::require_shape(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
                        "bmm: " + shape_to_string(sa) + " x " + shape_to_string(sb));
  const std::size_t B = sa[0], M = sa[1], K = sa[2], N = sb[2];
  Tensor out({B, M, N});
  for (std::size_t bi = 0; bi < B; ++bi) {
    const double* A = a->value.data().data() + bi * M * K;
    const double* Bm = b->value.data().data() + bi * K * N;
    double* O = out.data().data() + bi * M * N;
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double av = A[i * K + k];
        for (std::size_t j = 0; j < N; ++j) O[i * N + j] += av * Bm[k * N + j];
      }
  }
  detail::count_flops(2 * B * M * N * K);
  return detail::make_node(std::move(out), {a, b}, [B, M, K, N](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < N; ++j) acc += self.grad[(bi * M + i) * N + j] * bv[(bi * K + k) * N + j];
            g[(bi * M + i) * K + k] += acc;
          }
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            const double a_ik = av[(bi * M + i) * K + k];
            for (std::size_t j = 0; j < N; ++j) g[(bi * K + k) * N + j] += a_ik * self.grad[(bi * M + i) * N + j];
          }
    }
  });
}

/// x[..., in] W[out, in]^T + bias[out]. bias may be null.
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  const auto& sx = x->value.shape();
  const auto& sw = weight->value.shape();
  detail::require_shape(!sx.empty() && sw.size() == 2 && sx.back() == sw[1],
                        "linear: input " + shape_to_string(sx) + " weight " + shape_to_string(sw));
  const std::size_t in = sw[1], outf = sw[0], rows = x->value.size() / in;
  if (bias) detail::require_shape(bias->value.shape() == Shape{outf}, "linear: bias shape");
  Shape so = sx;
  so.back() = outf;
  Tensor out(so);
  const double* X = x->value.data().data();
  const double* W = weight->value.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < outf; ++o) {
      double acc = bias ? bias->value[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += X[r * in + i] * W[o * in + i];
      out[r * outf + o] = acc;
    }
  detail::count_flops(2 * rows * in * outf + (bias ? rows * outf : 0));
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return detail::make_node(std::move(out), std::move(parents), [rows, in, outf](Node& self) {
    const auto& X = self.parents[0]->value;
    const auto& W = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outf; ++o) {
          const double d = self.grad[r * outf + o];
          for (std::size_t i = 0; i < in; ++i) g[r * in + i] += d * W[o * in + i];
        }
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outf; ++o) {
          const double d = self.grad[r * outf + o];
          for (std::size_t i = 0; i < in; ++i) g[o * in + i] += d * X[r * in + i];
        }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& g = self.parents[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outf; ++o) g[o] += self.grad[r * outf + o];
    }
  });
}

/// Row softmax over the last axis.
inline Var softmax_last(const Var& a) {
  const auto& s = a->value.shape();
  const std::size_t C = s.back(), rows = a->value.size() / C;
  Tensor out = a->value;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data().data() + r * C;
    const double mx = *std::max_element(row, row + C);
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) sum += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < C; ++j) row[j] /= sum;
  }
  detail::count_flops(out.size());
  return detail::make_node(std::move(out), {a}, [rows, C](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data().data() + r * C;
      const double* dy = self.grad.data().data() + r * C;
      double dot = 0.0;
      for (std::size_t j = 0; j < C; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < C; ++j) g[r * C + j] += y[j] * (dy[j] - dot);
    }
  });
}

/// Layer normalization over the last axis with affine gamma/beta [C].
inline Var layer_norm_last(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const std::size_t C = a->value.shape().back(), rows = a->value.size() / C;
  detail::require_shape(gamma->value.shape() == Shape{C} && beta->value.shape() == Shape{C}, "layer_norm: affine");
  Tensor out(a->value.shape());
  Tensor xhat(a->value.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a->value.data().data() + r * C;
    double mean = 0.0;
    for (std::size_t j = 0; j < C; ++j) mean += x[j];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) {
      xhat[r * C + j] = (x[j] - mean) * inv_std[r];
      out[r * C + j] = gamma->value[j] * xhat[r * C + j] + beta->value[j];
    }
  }
  detail::count_flops(2 * out.size());
  return detail::make_node(std::move(out), {a, gamma, beta}, [rows, C, xhat = std::move(xhat), inv_std](Node& self) {
    const auto& gm = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
          const double dxh = self.grad[r * C + j] * gm[j];
          sum_d += dxh;
          sum_dx += dxh * xhat[r * C + j];
        }
        for (std::size_t j = 0; j < C; ++j) {
          const double dxh = self.grad[r * C + j] * gm[j];
          g[r * C + j] += inv_std[r] / static_cast<double>(C) *
                          (static_cast<double>(C) * dxh - sum_d - xhat[r * C + j] * sum_dx);
        }
      }
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < C; ++j) g[j] += self.grad[r * C + j] * xhat[r * C + j];
    }
    if (self.parents[2]->requires_grad) {
      auto& g = self.parents[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < C; ++j) g[j] += self.grad[r * C + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and batch normalization

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x[B, Cin, H, W] conv weight[Cout, Cin, k, k] (+ bias[Cout], may be null).
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dGeometry geo) {
  const auto& sx = x->value.shape();
  const auto& sw = weight->value.shape();
  detail::require_shape(sx.size() == 4 && sw.size() == 4 && sx[1] == sw[1] && sw[2] == sw[3],
                        "conv2d: input " + shape_to_string(sx) + " weight " + shape_to_string(sw));
  const std::size_t B = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
  const std::size_t Cout = sw[0], K = sw[2], S = geo.stride, P = geo.padding;
  if (H + 2 * P < K || W + 2 * P < K || S == 0)
    throw Error(ErrorCode::kShapeInvalid, "conv2d: kernel larger than padded input " + shape_to_string(sx));
  if (bias) detail::require_shape(bias->value.shape() == Shape{Cout}, "conv2d: bias shape");
  const std::size_t Ho = (H + 2 * P - K) / S + 1, Wo = (W + 2 * P - K) / S + 1;
  const std::size_t R = Cin * K * K, L = Ho * Wo;

  // Patch matrix per batch item: cols[b][r][l].
  std::vector<double> cols(B * R * L, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t kh = 0; kh < K; ++kh)
        for (std::size_t kw = 0; kw < K; ++kw) {
          double* col = cols.data() + (b * R + (ci * K + kh) * K + kw) * L;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * S + kh) - static_cast<std::ptrdiff_t>(P);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * S + kw) - static_cast<std::ptrdiff_t>(P);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              col[oh * Wo + ow] = x->value[((b * Cin + ci) * H + ih) * W + iw];
            }
          }
        }

  Tensor out({B, Cout, Ho, Wo});
  const double* Wt = weight->value.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co) {
      double* o = out.data().data() + (b * Cout + co) * L;
      if (bias) std::fill(o, o + L, bias->value[co]);
      for (std::size_t r = 0; r < R; ++r) {
        const double w = Wt[co * R + r];
        const double* col = cols.data() + (b * R + r) * L;
        for (std::size_t l = 0; l < L; ++l) o[l] += w * col[l];
      }
    }
  detail::count_flops(2 * B * Cout * R * L + (bias ? B * Cout * L : 0));

  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return detail::make_node(
      std::move(out), std::move(parents),
      [cols = std::move(cols), B, Cin, H, W, Cout, K, S, P, Ho, Wo, R, L](Node& self) {
        const double* dy = self.grad.data().data();
        if (self.parents[1]->requires_grad) {
          auto& gw = self.parents[1]->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              const double* d = dy + (b * Cout + co) * L;
              for (std::size_t r = 0; r < R; ++r) {
                const double* col = cols.data() + (b * R + r) * L;
                double acc = 0.0;
                for (std::size_t l = 0; l < L; ++l) acc += d[l] * col[l];
                gw[co * R + r] += acc;
              }
            }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              const double* d = dy + (b * Cout + co) * L;
              double acc = 0.0;
              for (std::size_t l = 0; l < L; ++l) acc += d[l];
              gb[co] += acc;
            }
        }
        if (self.parents[0]->requires_grad) {
          auto& gx = self.parents[0]->ensure_grad();
          const double* Wt = self.parents[1]->value.data().data();
          std::vector<double> dcol(R * L);
          for (std::size_t b = 0; b < B; ++b) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            for (std::size_t co = 0; co < Cout; ++co) {
              const double* d = dy + (b * Cout + co) * L;
              for (std::size_t r = 0; r < R; ++r) {
                const double w = Wt[co * R + r];
                double* dc = dcol.data() + r * L;
                for (std::size_t l = 0; l < L; ++l) dc[l] += w * d[l];
              }
            }
            for (std::size_t ci = 0; ci < Cin; ++ci)
              for (std::size_t kh = 0; kh < K; ++kh)
                for (std::size_t kw = 0; kw < K; ++kw) {
                  const double* dc = dcol.data() + ((ci * K + kh) * K + kw) * L;
                  for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * S + kh) - static_cast<std::ptrdiff_t>(P);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                      const std::ptrdiff_t iw =
                          static_cast<std::ptrdiff_t>(ow * S + kw) - static_cast<std::ptrdiff_t>(P);
                      if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                      gx[((b * Cin + ci) * H + ih) * W + iw] += dc[oh * Wo + ow];
                    }
                  }
                }
          }
        }
      });
}

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalization of x[B, C, H, W]. Training mode normalizes
/// with batch statistics and updates `stats`; inference uses `stats`.
inline Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
                        BatchNormOptions opt) {
  const auto& s = x->value.shape();
  detail::require_shape(s.size() == 4, "batch_norm2d expects rank 4");
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  detail::require_shape(gamma->value.shape() == Shape{C} && beta->value.shape() == Shape{C} &&
                            stats.running_mean.shape() == Shape{C},
                        "batch_norm2d: channel count " + std::to_string(C));
  const double n = static_cast<double>(B * HW);
  std::vector<double> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (opt.training) {
      double m = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) m += x->value[(b * C + c) * HW + i];
      m /= n;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = x->value[(b * C + c) * HW + i] - m;
          v += d * d;
        }
      v /= n;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + opt.eps);
      const double unbiased = n > 1.0 ? v * n / (n - 1.0) : v;
      stats.running_mean[c] = (1.0 - opt.momentum) * stats.running_mean[c] + opt.momentum * m;
      stats.running_var[c] = (1.0 - opt.momentum) * stats.running_var[c] + opt.momentum * unbiased;
    } else {
      mean[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + opt.eps);
    }
  }
  Tensor out(s);
  Tensor xhat(s);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t k = (b * C + c) * HW + i;
        xhat[k] = (x->value[k] - mean[c]) * inv_std[c];
        out[k] = gamma->value[c] * xhat[k] + beta->value[c];
      }
  detail::count_flops(2 * out.size());
  const bool training = opt.training;
  return detail::make_node(
      std::move(out), {x, gamma, beta}, [B, C, HW, n, training, inv_std, xhat = std::move(xhat)](Node& self) {
        const auto& gm = self.parents[1]->value;
        std::vector<double> sum_d(C, 0.0), sum_dx(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              sum_d[c] += self.grad[k];
              sum_dx[c] += self.grad[k] * xhat[k];
            }
        if (self.parents[1]->requires_grad) {
          auto& g = self.parents[1]->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) g[c] += sum_dx[c];
        }
        if (self.parents[2]->requires_grad) {
          auto& g = self.parents[2]->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) g[c] += sum_d[c];
        }
        if (self.parents[0]->requires_grad) {
          auto& g = self.parents[0]->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < HW; ++i) {
                const std::size_t k = (b * C + c) * HW + i;
                if (training) {
                  g[k] += gm[c] * inv_std[c] / n * (n * self.grad[k] - sum_d[c] - xhat[k] * sum_dx[c]);
                } else {
                  g[k] += gm[c] * inv_std[c] * self.grad[k];
                }
              }
        }
      });
}

}  // namespace flexfas
