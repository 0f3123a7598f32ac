// Copyright 2026 The lnl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnl/tensor.hpp"

namespace lnl {

// ---------------------------------------------------------------------------
// Scalar activations. Each has a matching derivative expressed in terms of the
// forward input.

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kLeakySlope = 0.2;

inline double selu(double x) {
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}
inline double selu_grad(double x) {
  return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

inline double leaky_relu(double x) { return x > 0.0 ? x : kLeakySlope * x; }
inline double leaky_relu_grad(double x) { return x > 0.0 ? 1.0 : kLeakySlope; }

/// -ln(sigmoid(x)) without overflow.
inline double log_sigmoid_neg(double x) { return softplus(-x); }

template <typename F>
Matrix map(const Matrix& m, F f) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = f(m.data()[i]);
  return out;
}

inline Matrix selu(const Matrix& m) { return map(m, [](double x) { return selu(x); }); }
inline Matrix relu(const Matrix& m) { return map(m, [](double x) { return relu(x); }); }

/// dX = dY * f'(X) elementwise.
template <typename G>
Matrix backprop_elementwise(const Matrix& pre, const Matrix& dy, G grad) {
  pre.check_same_shape(dy, "backprop_elementwise");
  Matrix dx(pre.rows(), pre.cols());
  for (std::size_t i = 0; i < pre.size(); ++i) dx.data()[i] = dy.data()[i] * grad(pre.data()[i]);
  return dx;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  a.check_same_shape(b, "hadamard");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

// ---------------------------------------------------------------------------
// Seeding. Every stochastic step derives its own stream from (base, tag, index)
// so that results do not depend on how many draws earlier steps consumed.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ tag) ^ index);
}

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  // 53 random bits; std::uniform_real_distribution is not specified bit-exactly.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Fisher-Yates with the library's own index draw, for cross-library stability.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

// ---------------------------------------------------------------------------
// Layers.

/// Y = X W + b, b broadcast over rows (b may be empty).
inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b = {}) {
  Matrix y = matmul(x, w);
  if (!b.empty()) {
    if (b.rows() != 1 || b.cols() != w.cols()) {
      throw std::invalid_argument("linear: bias shape " + b.shape_str() + " for weight " +
                                  w.shape_str());
    }
    for (std::size_t r = 0; r < y.rows(); ++r) axpy(1.0, b.row(0), y.row(r));
  }
  return y;
}

/// Accumulates dW += X^T dY and db += colsum(dY); returns dX = dY W^T.
/// Pass need_dx = false for input layers.
inline Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw,
                              Matrix* db, bool need_dx = true) {
  dw += matmul_tn(x, dy);
  if (db != nullptr) {
    for (std::size_t r = 0; r < dy.rows(); ++r) axpy(1.0, dy.row(r), db->row(0));
  }
  return need_dx ? matmul_nt(dy, w) : Matrix{};
}

/// Loss and gradient of -ln softmax(logits)[label].
struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;
};

inline CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (logits.empty()) throw std::invalid_argument("softmax_cross_entropy: empty logits");
  if (label >= logits.size()) throw std::invalid_argument("softmax_cross_entropy: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = mx + std::log(z);
  CrossEntropy ce;
  ce.loss = log_z - logits[label];
  ce.grad.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) ce.grad[k] = std::exp(logits[k] - log_z);
  ce.grad[label] -= 1.0;
  return ce;
}

/// Mean cross-entropy over `nodes`; writes d(mean)/d(logits) into *dlogits when given.
inline double mean_cross_entropy(const Matrix& logits, std::span<const int> nodes,
                                 std::span<const int> labels, Matrix* dlogits) {
  if (nodes.empty()) throw std::invalid_argument("mean_cross_entropy: no nodes");
  if (dlogits != nullptr) *dlogits = Matrix(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(nodes.size());
  double total = 0.0;
  for (int u : nodes) {
    const auto ce = softmax_cross_entropy(logits.row(u), static_cast<std::size_t>(labels[u]));
    total += ce.loss;
    if (dlogits != nullptr) {
      auto g = dlogits->row(u);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += inv * ce.grad[k];
    }
  }
  return total * inv;
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else 1/(1-rate).
inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Matrix mask(rows, cols, 1.0);
  if (rate <= 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask.data()) v = uniform01(rng) < rate ? 0.0 : keep;
  return mask;
}

// ---------------------------------------------------------------------------
// Parameters and optimisation.

struct Parameter {
  Matrix value;
  Matrix grad;
  Matrix momentum;
};

/// Named parameters with gradient and momentum buffers of identical shape.
/// Iteration order is by name, which fixes the update and reduction order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Matrix value) {
    if (entries_.contains(name)) throw std::invalid_argument("ParameterStore: duplicate " + name);
    Parameter p{std::move(value), {}, {}};
    p.grad = Matrix(p.value.rows(), p.value.cols());
    p.momentum = Matrix(p.value.rows(), p.value.cols());
    return entries_.emplace(name, std::move(p)).first->second;
  }

  [[nodiscard]] bool contains(const std::string& name) const { return entries_.contains(name); }

  Parameter& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParameterStore: no parameter " + name);
    return it->second;
  }
  [[nodiscard]] const Parameter& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParameterStore: no parameter " + name);
    return it->second;
  }

  Matrix& value(const std::string& name) { return at(name).value; }
  [[nodiscard]] const Matrix& value(const std::string& name) const { return at(name).value; }
  Matrix& grad(const std::string& name) { return at(name).grad; }

  void zero_grad() {
    for (auto& [_, p] : entries_) p.grad.set_zero();
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : entries_) n += p.value.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Parameter> entries_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Matrix w(fan_in, fan_out);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.data()) v = (2.0 * uniform01(rng) - 1.0) * limit;
  return w;
}

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double dropout = 0.25;
  int hidden_dim = 128;
  int se_dim = 128;
  int heads = 5;
  int agg_layers = 2;
  int nl_sample_limit = 128;
  int patience = 100;
  int max_epochs = 2000;
  std::uint64_t seed = 1;

  // Estimator schedule.
  int m3s_warmup_epochs = 200;
  int m3s_stages = 4;
  int m3s_stage_epochs = 100;
  int m3s_top_t = 0;  // 0: ceil(0.05 * node_count)
  int pairs_per_anchor = 5;

  // Non-local clustering.
  int clusters = 0;  // 0: class_count
  int cluster_max_iter = 20;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw std::invalid_argument(std::string("TrainConfig: ") + name + " must be > 0");
    };
    positive(learning_rate, "learning_rate");
    positive(hidden_dim, "hidden_dim");
    positive(se_dim, "se_dim");
    positive(heads, "heads");
    positive(agg_layers, "agg_layers");
    positive(nl_sample_limit, "nl_sample_limit");
    positive(patience, "patience");
    positive(max_epochs, "max_epochs");
    positive(pairs_per_anchor, "pairs_per_anchor");
    positive(cluster_max_iter, "cluster_max_iter");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("TrainConfig: dropout must be in [0,1)");
    if (m3s_warmup_epochs < 0 || m3s_stages < 0 || m3s_stage_epochs < 0 || m3s_top_t < 0 || clusters < 0) {
      throw std::invalid_argument("TrainConfig: schedule fields must be >= 0");
    }
  }
};

/// m <- mu m + (g + wd p); p <- p - lr m; g <- 0.
inline void sgd_momentum_step(ParameterStore& store, double lr, double mu, double wd) {
  for (auto& [_, p] : store) {
    auto& v = p.value.data();
    auto& g = p.grad.data();
    auto& m = p.momentum.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      m[i] = mu * m[i] + (g[i] + wd * v[i]);
      v[i] -= lr * m[i];
      g[i] = 0.0;
    }
  }
}

inline void sgd_momentum_step(ParameterStore& store, const TrainConfig& cfg) {
  sgd_momentum_step(store, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
}

/// Scalar objective over a store. With `with_grad` set it must also add its
/// gradient into the store's grad buffers (which the caller has zeroed).
using StoreObjective = std::function<double(ParameterStore&, bool with_grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central finite differences on up to `samples` coordinates drawn uniformly
/// from all parameters (all of them when the store is smaller). Error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckResult grad_check(ParameterStore& store, const StoreObjective& f,
                                  std::size_t samples, std::uint64_t seed, double step = 1e-5) {
  store.zero_grad();
  f(store, true);

  // Snapshot first: `f` may touch grad buffers when called without gradients.
  struct Coord {
    Parameter* p;
    std::size_t i;
    double analytic;
  };
  std::vector<Coord> all;
  for (auto& [_, p] : store)
    for (std::size_t i = 0; i < p.value.size(); ++i) all.push_back({&p, i, p.grad.data()[i]});
  if (samples < all.size()) {
    Rng rng(seed);
    shuffle(all, rng);
    all.resize(samples);
  }

  GradCheckResult res;
  for (const auto& [p, i, analytic] : all) {
    const double orig = p->value.data()[i];
    p->value.data()[i] = orig + step;
    const double up = f(store, false);
    p->value.data()[i] = orig - step;
    const double down = f(store, false);
    p->value.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double rel =
        std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.coordinates;
  }
  store.zero_grad();
  return res;
}

}  // namespace lnl
