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

// Bi-level attentive aggregation and the node classifiers.
//
// Per tower (local / non-local), per layer and per head:
//   e_uv = LeakyReLU(a_src . (W z_u) + a_dst . (W z_v))
//   alpha_uv = softmax_{v in N(u)} e_uv
// heads are averaged into one coefficient per (u, v), and a layer computes
//   h_u = ReLU(sum_v coef_uv f_v).
// Attention always reads the self-embeddings Z; the aggregated values are the
// node features for the first layer and the previous layer's output after
// that. A tower ends with H = ReLU(h W_T), and the towers are fused as
//   H_F = ReLU([X | H_L | H_NL] W_F),  logits = H_F W_c + b_c.
//
// With nonnegative features every intermediate ReLU is the identity, so
// ReLU(h W_T) = ReLU(A_L ... A_1 (X W_T)); the tower is then evaluated in the
// projected space (`factored`), which is exact and avoids feature-width
// intermediates.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnl/graph.hpp"
#include "lnl/numerics.hpp"
#include "lnl/tensor.hpp"

namespace lnl {

enum class AggregationMode { kLocal, kNonLocal, kBiLevel };

inline const char* to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::kLocal: return "local";
    case AggregationMode::kNonLocal: return "nonlocal";
    case AggregationMode::kBiLevel: return "bilevel";
  }
  return "?";
}

/// Neighborhood lists flattened into offsets + indices.
struct NeighborCsr {
  std::vector<std::size_t> offsets{0};
  std::vector<NodeId> index;

  static NeighborCsr from(const NeighborhoodMap& nm) {
    NeighborCsr csr;
    csr.offsets.reserve(nm.lists.size() + 1);
    for (std::size_t u = 0; u < nm.lists.size(); ++u) {
      if (nm.lists[u].empty()) {
        throw std::invalid_argument("attentive aggregation: empty neighborhood for node " + std::to_string(u));
      }
      csr.index.insert(csr.index.end(), nm.lists[u].begin(), nm.lists[u].end());
      csr.offsets.push_back(csr.index.size());
    }
    return csr;
  }
  [[nodiscard]] std::size_t nodes() const { return offsets.size() - 1; }
  [[nodiscard]] std::size_t entries() const { return index.size(); }
};

// ---------------------------------------------------------------------------
// Attention.

inline std::string head_weight_name(const std::string& prefix, int head) {
  return prefix + ".h" + std::to_string(head) + ".w";
}
inline std::string head_attn_name(const std::string& prefix, int head) {
  return prefix + ".h" + std::to_string(head) + ".a";
}

/// Adds `heads` (W [se_dim x att_dim], a [2 x att_dim]) pairs under `prefix`.
inline void add_attention_params(ParameterStore& store, const std::string& prefix, int heads,
                                 std::size_t se_dim, std::size_t att_dim, Rng& rng) {
  for (int h = 0; h < heads; ++h) {
    store.add(head_weight_name(prefix, h), glorot_uniform(se_dim, att_dim, rng));
    Matrix a(2, att_dim);
    const double limit = std::sqrt(6.0 / static_cast<double>(2 * att_dim + 1));
    for (double& v : a.data()) v = (2.0 * uniform01(rng) - 1.0) * limit;
    store.add(head_attn_name(prefix, h), std::move(a));
  }
}

// Scores only need a . (W z) = z . (W a), so no head ever materialises Z W.
struct AttentionTrace {
  std::vector<std::vector<double>> src;     // per head, per node: a_src . (W z_u)
  std::vector<std::vector<double>> dst;     // per head, per node: a_dst . (W z_v)
  std::vector<std::vector<double>> alpha;   // per head, per CSR entry
  std::vector<double> coef;                 // head average, per CSR entry
};

inline AttentionTrace attention_forward(const Matrix& z, const NeighborCsr& csr, const ParameterStore& store,
                                        const std::string& prefix, int heads) {
  const std::size_t n = csr.nodes();
  AttentionTrace t;
  t.coef.assign(csr.entries(), 0.0);
  const double inv_heads = 1.0 / static_cast<double>(heads);
  for (int h = 0; h < heads; ++h) {
    const Matrix wa = matmul_nt(store.value(head_weight_name(prefix, h)), store.value(head_attn_name(prefix, h)));
    const Matrix sd = matmul(z, wa);
    std::vector<double> s(n), d(n);
    for (std::size_t u = 0; u < n; ++u) {
      s[u] = sd(u, 0);
      d[u] = sd(u, 1);
    }
    std::vector<double> alpha(csr.entries());
    for (std::size_t u = 0; u < n; ++u) {
      const std::size_t b = csr.offsets[u], e = csr.offsets[u + 1];
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = b; k < e; ++k) {
        alpha[k] = leaky_relu(s[u] + d[static_cast<std::size_t>(csr.index[k])]);
        mx = std::max(mx, alpha[k]);
      }
      double sum = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        alpha[k] = std::exp(alpha[k] - mx);
        sum += alpha[k];
      }
      for (std::size_t k = b; k < e; ++k) {
        alpha[k] /= sum;
        t.coef[k] += inv_heads * alpha[k];
      }
    }
    t.src.push_back(std::move(s));
    t.dst.push_back(std::move(d));
    t.alpha.push_back(std::move(alpha));
  }
  return t;
}

/// Backpropagates dLoss/dcoef into the head parameters under `prefix`.
inline void attention_backward(const Matrix& z, const NeighborCsr& csr, const AttentionTrace& t,
                               std::span<const double> dcoef, ParameterStore& store,
                               const std::string& prefix) {
  const std::size_t n = csr.nodes();
  const auto heads = static_cast<int>(t.alpha.size());
  const double inv_heads = 1.0 / static_cast<double>(heads);
  for (int h = 0; h < heads; ++h) {
    const auto hi = static_cast<std::size_t>(h);
    const auto& alpha = t.alpha[hi];
    Matrix dsd(n, 2);
    for (std::size_t u = 0; u < n; ++u) {
      const std::size_t b = csr.offsets[u], e = csr.offsets[u + 1];
      double weighted = 0.0;
      for (std::size_t k = b; k < e; ++k) weighted += alpha[k] * dcoef[k];
      for (std::size_t k = b; k < e; ++k) {
        const auto v = static_cast<std::size_t>(csr.index[k]);
        const double de = inv_heads * alpha[k] * (dcoef[k] - weighted);
        const double dx = de * leaky_relu_grad(t.src[hi][u] + t.dst[hi][v]);
        dsd(u, 0) += dx;
        dsd(v, 1) += dx;
      }
    }
    // g = Z^T [ds dd] is [se x 2]; dW = g a, da = g^T W.
    const Matrix g = matmul_tn(z, dsd);
    store.grad(head_weight_name(prefix, h)) += matmul(g, store.value(head_attn_name(prefix, h)));
    store.grad(head_attn_name(prefix, h)) += matmul_tn(g, store.value(head_weight_name(prefix, h)));
  }
}

/// out_u = sum_{v in N(u)} coef_uv values_v.
inline Matrix aggregate(const NeighborCsr& csr, std::span<const double> coef, const Matrix& values) {
  Matrix out(csr.nodes(), values.cols());
  for (std::size_t u = 0; u < csr.nodes(); ++u) {
    auto dst = out.row(u);
    for (std::size_t k = csr.offsets[u]; k < csr.offsets[u + 1]; ++k) {
      axpy(coef[k], values.row(static_cast<std::size_t>(csr.index[k])), dst);
    }
  }
  return out;
}

/// Returns dcoef; adds into *dvalues when given.
inline std::vector<double> aggregate_backward(const NeighborCsr& csr, std::span<const double> coef,
                                              const Matrix& values, const Matrix& dout, Matrix* dvalues) {
  std::vector<double> dcoef(csr.entries());
  for (std::size_t u = 0; u < csr.nodes(); ++u) {
    const auto g = dout.row(u);
    for (std::size_t k = csr.offsets[u]; k < csr.offsets[u + 1]; ++k) {
      const auto v = static_cast<std::size_t>(csr.index[k]);
      dcoef[k] = dot(g, values.row(v));
      if (dvalues != nullptr) axpy(coef[k], g, dvalues->row(v));
    }
  }
  return dcoef;
}

/// One attentive aggregation layer as a standalone operation:
/// ReLU(head-averaged attention-weighted sum of `values` rows).
inline Matrix attentive_aggregate(const Matrix& z, const Matrix& values, const NeighborhoodMap& nm,
                                  const ParameterStore& store, const std::string& prefix, int heads) {
  const auto csr = NeighborCsr::from(nm);
  const auto att = attention_forward(z, csr, store, prefix, heads);
  return relu(aggregate(csr, att.coef, values));
}

// ---------------------------------------------------------------------------
// Towers.

struct TowerTrace {
  bool factored = false;
  std::vector<AttentionTrace> attention;  // per layer
  std::vector<Matrix> inputs;             // per layer: aggregated values
  std::vector<Matrix> pre;                // per layer: aggregation result
  Matrix proj_pre;                        // before the final ReLU
  Matrix out;
};

/// Level embedding: `layers` attentive aggregations over `csr`, then
/// ReLU(. W_T) with W_T = store[prefix + ".out"].
inline TowerTrace tower_forward(const Matrix& features, const Matrix& z, const NeighborCsr& csr,
                                const ParameterStore& store, const std::string& prefix, int layers,
                                int heads, bool factored) {
  TowerTrace t;
  t.factored = factored;
  const Matrix& w_out = store.value(prefix + ".out");
  t.inputs.push_back(factored ? matmul(features, w_out) : features);
  for (int l = 0; l < layers; ++l) {
    t.attention.push_back(attention_forward(z, csr, store, prefix + ".l" + std::to_string(l), heads));
    t.pre.push_back(aggregate(csr, t.attention.back().coef, t.inputs.back()));
    if (l + 1 < layers) t.inputs.push_back(factored ? t.pre.back() : relu(t.pre.back()));
  }
  t.proj_pre = factored ? t.pre.back() : matmul(relu(t.pre.back()), w_out);
  t.out = relu(t.proj_pre);
  return t;
}

inline void tower_backward(const Matrix& features, const Matrix& z, const NeighborCsr& csr,
                           const TowerTrace& t, const Matrix& dout, ParameterStore& store,
                           const std::string& prefix) {
  const auto layers = static_cast<int>(t.pre.size());
  const Matrix& w_out = store.value(prefix + ".out");
  Matrix& dw_out = store.grad(prefix + ".out");
  Matrix dproj = backprop_elementwise(t.proj_pre, dout, [](double x) { return relu_grad(x); });
  Matrix dcur;  // gradient w.r.t. pre[l]
  if (t.factored) {
    dcur = std::move(dproj);
  } else {
    const Matrix last = relu(t.pre.back());
    dw_out += matmul_tn(last, dproj);
    dcur = backprop_elementwise(t.pre.back(), matmul_nt(dproj, w_out), [](double x) { return relu_grad(x); });
  }
  for (int l = layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Matrix& values = t.inputs[li];
    const bool need_dvalues = t.factored || l > 0;
    Matrix dvalues = need_dvalues ? Matrix(values.rows(), values.cols()) : Matrix{};
    const auto dcoef = aggregate_backward(csr, t.attention[li].coef, values, dcur,
                                          need_dvalues ? &dvalues : nullptr);
    attention_backward(z, csr, t.attention[li], dcoef, store, prefix + ".l" + std::to_string(l));
    if (l > 0) {
      dcur = t.factored ? std::move(dvalues)
                        : backprop_elementwise(t.pre[li - 1], dvalues, [](double x) { return relu_grad(x); });
    } else if (t.factored) {
      dw_out += matmul_tn(features, dvalues);
    }
  }
}

// ---------------------------------------------------------------------------
// Classifiers.

struct ModelOutput {
  Matrix h_final;
  Matrix logits;
};

/// A full-batch node classifier trainable by `train_classifier`.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual ParameterStore& params() = 0;
  /// Logits for every node; training mode applies dropout seeded by `epoch`.
  virtual Matrix logits(bool training, std::uint64_t epoch) = 0;
  /// Gradient of the loss w.r.t. the logits of the last forward call.
  virtual void backward(const Matrix& dlogits) = 0;
};

namespace detail {
inline constexpr std::uint64_t kModelInitTag = 0x1417;
inline constexpr std::uint64_t kModelDropTag = 0xd207;

/// out(i, r) = dy_i . w_{row_begin + r}: dY times the transpose of a row block of W.
inline Matrix matmul_nt_rows(const Matrix& dy, const Matrix& w, std::size_t row_begin, std::size_t rows) {
  Matrix block_t(w.cols(), rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w.cols(); ++j) block_t(j, r) = w(row_begin + r, j);
  return matmul(dy, block_t);
}
}  // namespace detail

/// Local / non-local / bi-level aggregation model. Local mode never touches
/// the non-local map and vice versa; the absent tower contributes zeros and
/// the fusion input width stays d + 2 * hidden.
class LnlModel final : public Classifier {
 public:
  LnlModel(const Matrix& features, const Matrix& z, const NeighborhoodMap* local,
           const NeighborhoodMap* non_local, AggregationMode mode, int class_count, const TrainConfig& cfg,
           std::optional<bool> factored = std::nullopt)
      : features_(features), z_(z), mode_(mode), cfg_(cfg) {
    cfg.validate();
    if (features.rows() != z.rows()) throw std::invalid_argument("LnlModel: feature/embedding row mismatch");
    if (uses_local() && local == nullptr) throw std::invalid_argument("LnlModel: mode needs a local neighborhood map");
    if (uses_non_local() && non_local == nullptr) {
      throw std::invalid_argument("LnlModel: mode needs a non-local neighborhood map");
    }
    if (uses_local()) local_ = NeighborCsr::from(*local);
    if (uses_non_local()) non_local_ = NeighborCsr::from(*non_local);
    for (const NeighborCsr* c : {uses_local() ? &local_ : nullptr, uses_non_local() ? &non_local_ : nullptr}) {
      if (c != nullptr && c->nodes() != features.rows()) {
        throw std::invalid_argument("LnlModel: neighborhood map size != node count");
      }
    }
    factored_ = factored.value_or(all_nonnegative(features));
    if (factored_ && !all_nonnegative(features)) {
      throw std::invalid_argument("LnlModel: factored evaluation needs nonnegative features");
    }

    Rng rng(derive_seed(cfg.seed, detail::kModelInitTag));
    const std::size_t d = features.cols();
    const auto hid = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t se = z.cols();
    for (const char* tower : {"local", "nonlocal"}) {
      if ((std::string(tower) == "local") ? !uses_local() : !uses_non_local()) continue;
      for (int l = 0; l < cfg.agg_layers; ++l) {
        add_attention_params(store_, std::string(tower) + ".l" + std::to_string(l), cfg.heads, se, hid, rng);
      }
      store_.add(std::string(tower) + ".out", glorot_uniform(d, hid, rng));
    }
    store_.add("fuse.w", glorot_uniform(d + 2 * hid, hid, rng));
    store_.add("cls.w", glorot_uniform(hid, static_cast<std::size_t>(class_count), rng));
    store_.add("cls.b", Matrix(1, static_cast<std::size_t>(class_count)));
  }

  [[nodiscard]] bool uses_local() const { return mode_ != AggregationMode::kNonLocal; }
  [[nodiscard]] bool uses_non_local() const { return mode_ != AggregationMode::kLocal; }
  [[nodiscard]] bool factored() const { return factored_; }
  [[nodiscard]] AggregationMode mode() const { return mode_; }
  ParameterStore& params() override { return store_; }

  ModelOutput forward(bool training, std::uint64_t epoch) {
    const std::size_t n = features_.rows();
    const auto hid = static_cast<std::size_t>(cfg_.hidden_dim);
    Rng rng(derive_seed(cfg_.seed, detail::kModelDropTag, epoch));
    const double rate = training ? cfg_.dropout : 0.0;

    h_local_ = Matrix(n, hid);
    h_non_local_ = Matrix(n, hid);
    if (uses_local()) {
      local_trace_ = tower_forward(features_, z_, local_, store_, "local", cfg_.agg_layers, cfg_.heads, factored_);
      mask_local_ = dropout_mask(n, hid, rate, rng);
      h_local_ = hadamard(local_trace_.out, mask_local_);
    }
    if (uses_non_local()) {
      non_local_trace_ =
          tower_forward(features_, z_, non_local_, store_, "nonlocal", cfg_.agg_layers, cfg_.heads, factored_);
      mask_non_local_ = dropout_mask(n, hid, rate, rng);
      h_non_local_ = hadamard(non_local_trace_.out, mask_non_local_);
    }
    const Matrix* parts[] = {&features_, &h_local_, &h_non_local_};
    fused_in_ = hconcat(parts);
    fused_pre_ = matmul(fused_in_, store_.value("fuse.w"));
    mask_final_ = dropout_mask(n, hid, rate, rng);
    h_final_ = hadamard(relu(fused_pre_), mask_final_);
    return {h_final_, linear(h_final_, store_.value("cls.w"), store_.value("cls.b"))};
  }

  Matrix logits(bool training, std::uint64_t epoch) override { return forward(training, epoch).logits; }

  void backward(const Matrix& dlogits) override {
    const std::size_t d = features_.cols();
    const auto hid = static_cast<std::size_t>(cfg_.hidden_dim);
    Matrix dh = linear_backward(h_final_, store_.value("cls.w"), dlogits, store_.grad("cls.w"), &store_.grad("cls.b"));
    dh = hadamard(dh, mask_final_);
    const Matrix dpre = backprop_elementwise(fused_pre_, dh, [](double x) { return relu_grad(x); });
    store_.grad("fuse.w") += matmul_tn(fused_in_, dpre);
    const Matrix& wf = store_.value("fuse.w");
    if (uses_local()) {
      const Matrix dl = hadamard(detail::matmul_nt_rows(dpre, wf, d, hid), mask_local_);
      tower_backward(features_, z_, local_, local_trace_, dl, store_, "local");
    }
    if (uses_non_local()) {
      const Matrix dnl = hadamard(detail::matmul_nt_rows(dpre, wf, d + hid, hid), mask_non_local_);
      tower_backward(features_, z_, non_local_, non_local_trace_, dnl, store_, "nonlocal");
    }
  }

  [[nodiscard]] const Matrix& local_embedding() const { return h_local_; }
  [[nodiscard]] const Matrix& non_local_embedding() const { return h_non_local_; }

 private:
  const Matrix& features_;
  const Matrix& z_;
  AggregationMode mode_;
  TrainConfig cfg_;
  bool factored_ = false;
  NeighborCsr local_, non_local_;
  ParameterStore store_;

  TowerTrace local_trace_, non_local_trace_;
  Matrix mask_local_, mask_non_local_, mask_final_;
  Matrix h_local_, h_non_local_, fused_in_, fused_pre_, h_final_;
};

/// ReLU(W_F [x | h_local | h_non_local]) for a given fusion weight.
inline Matrix final_embedding(const Matrix& x, const Matrix& h_local, const Matrix& h_non_local, const Matrix& w_f) {
  const Matrix* parts[] = {&x, &h_local, &h_non_local};
  const Matrix cat = hconcat(parts);
  if (cat.cols() != w_f.rows()) {
    throw std::invalid_argument("final_embedding: input width " + std::to_string(cat.cols()) +
                                " != W_F rows " + std::to_string(w_f.rows()));
  }
  return relu(matmul(cat, w_f));
}

/// Two-layer SELU perceptron on a fixed input matrix.
class MlpClassifier final : public Classifier {
 public:
  MlpClassifier(const Matrix& input, int class_count, const TrainConfig& cfg) : x_(input), cfg_(cfg) {
    Rng rng(derive_seed(cfg.seed, detail::kModelInitTag, 1));
    const auto hid = static_cast<std::size_t>(cfg.hidden_dim);
    store_.add("mlp.w1", glorot_uniform(input.cols(), hid, rng));
    store_.add("mlp.b1", Matrix(1, hid));
    store_.add("mlp.w2", glorot_uniform(hid, static_cast<std::size_t>(class_count), rng));
    store_.add("mlp.b2", Matrix(1, static_cast<std::size_t>(class_count)));
  }

  ParameterStore& params() override { return store_; }

  Matrix logits(bool training, std::uint64_t epoch) override {
    Rng rng(derive_seed(cfg_.seed, detail::kModelDropTag, epoch));
    pre1_ = linear(x_, store_.value("mlp.w1"), store_.value("mlp.b1"));
    mask_ = dropout_mask(pre1_.rows(), pre1_.cols(), training ? cfg_.dropout : 0.0, rng);
    h1_ = hadamard(selu(pre1_), mask_);
    return linear(h1_, store_.value("mlp.w2"), store_.value("mlp.b2"));
  }

  void backward(const Matrix& dlogits) override {
    Matrix dh = linear_backward(h1_, store_.value("mlp.w2"), dlogits, store_.grad("mlp.w2"), &store_.grad("mlp.b2"));
    dh = hadamard(dh, mask_);
    const Matrix dpre = backprop_elementwise(pre1_, dh, [](double x) { return selu_grad(x); });
    linear_backward(x_, store_.value("mlp.w1"), dpre, store_.grad("mlp.w1"), &store_.grad("mlp.b1"), false);
  }

 private:
  const Matrix& x_;
  TrainConfig cfg_;
  ParameterStore store_;
  Matrix pre1_, mask_, h1_;
};

// ---------------------------------------------------------------------------
// Training and evaluation.

/// Fraction of `nodes` whose argmax logit (ties to the lower class) is the label.
inline double evaluate(const Matrix& logits, std::span<const ClassId> labels, std::span<const NodeId> nodes) {
  if (nodes.empty()) throw std::invalid_argument("evaluate: empty node set");
  std::size_t correct = 0;
  for (NodeId u : nodes) {
    const auto row = logits.row(static_cast<std::size_t>(u));
    const auto pred = static_cast<ClassId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (pred == labels[static_cast<std::size_t>(u)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

struct TrainResult {
  double best_val_accuracy = -1.0;
  int best_epoch = -1;
  int epochs_run = 0;
  double final_train_loss = 0.0;
  std::vector<double> train_loss;
};

/// Full-batch SGD with momentum on the mean cross-entropy of the train
/// nodes; stops `patience` epochs after the last strict improvement of
/// validation accuracy and leaves the best-validation parameters in place.
inline TrainResult train_classifier(Classifier& model, std::span<const ClassId> labels, const Split& split,
                                    const TrainConfig& cfg) {
  if (split.train.empty()) throw std::invalid_argument("train_classifier: empty train split");
  ParameterStore& store = model.params();
  ParameterStore best = store;
  TrainResult r;
  int since_best = 0;
  const auto& val = split.val.empty() ? split.train : split.val;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    store.zero_grad();
    const Matrix logits = model.logits(true, static_cast<std::uint64_t>(epoch));
    Matrix dlogits;
    const double loss = mean_cross_entropy(logits, split.train, labels, &dlogits);
    model.backward(dlogits);
    sgd_momentum_step(store, cfg);
    r.train_loss.push_back(loss);
    r.final_train_loss = loss;
    ++r.epochs_run;

    const double acc = evaluate(model.logits(false, 0), labels, val);
    if (acc > r.best_val_accuracy) {
      r.best_val_accuracy = acc;
      r.best_epoch = epoch;
      best = store;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (auto& [name, p] : store) p.value = best.at(name).value;
  return r;
}

}  // namespace lnl
