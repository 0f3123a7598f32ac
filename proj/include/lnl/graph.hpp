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

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lnl/numerics.hpp"
#include "lnl/tensor.hpp"

namespace lnl {

using NodeId = int;
using ClassId = int;
inline constexpr ClassId kUnlabeled = -1;

/// Undirected, unweighted graph with node features and (possibly partial)
/// labels. Immutable once built; neighbor lists are sorted.
class Dataset {
 public:
  Dataset() = default;

  /// Validates and normalises the edge list: reversed and repeated pairs
  /// collapse to one undirected edge, self-loops are dropped.
  Dataset(std::string name, Matrix features, std::vector<std::pair<NodeId, NodeId>> edges,
          std::vector<ClassId> labels, int class_count)
      : name_(std::move(name)), features_(std::move(features)), labels_(std::move(labels)),
        class_count_(class_count) {
    const auto n = static_cast<NodeId>(features_.rows());
    if (labels_.size() != features_.rows()) {
      throw std::invalid_argument("Dataset: label vector length " + std::to_string(labels_.size()) +
                                  " != node count " + std::to_string(n));
    }
    if (class_count_ < 1) throw std::invalid_argument("Dataset: class_count must be >= 1");
    for (NodeId u = 0; u < n; ++u) {
      const ClassId c = labels_[static_cast<std::size_t>(u)];
      if (c != kUnlabeled && (c < 0 || c >= class_count_)) {
        throw std::invalid_argument("Dataset: node " + std::to_string(u) + " has label " +
                                    std::to_string(c) + " outside [0, " +
                                    std::to_string(class_count_) + ")");
      }
    }
    for (auto& [u, v] : edges) {
      if (u < 0 || v < 0 || u >= n || v >= n) {
        throw std::invalid_argument("Dataset: edge (" + std::to_string(u) + "," + std::to_string(v) +
                                    ") outside [0, " + std::to_string(n) + ")");
      }
      if (u > v) std::swap(u, v);
    }
    std::erase_if(edges, [](const auto& e) { return e.first == e.second; });
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    edges_ = std::move(edges);

    adjacency_.assign(static_cast<std::size_t>(n), {});
    for (const auto& [u, v] : edges_) {
      adjacency_[static_cast<std::size_t>(u)].push_back(v);
      adjacency_[static_cast<std::size_t>(v)].push_back(u);
    }
    for (auto& a : adjacency_) std::sort(a.begin(), a.end());
  }

  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] int node_count() const { return static_cast<int>(features_.rows()); }
  [[nodiscard]] std::size_t edge_count() const { return edges_.size(); }
  [[nodiscard]] int feature_dim() const { return static_cast<int>(features_.cols()); }
  [[nodiscard]] int class_count() const { return class_count_; }
  [[nodiscard]] const Matrix& features() const { return features_; }
  [[nodiscard]] const std::vector<ClassId>& labels() const { return labels_; }
  [[nodiscard]] ClassId label(NodeId u) const { return labels_.at(static_cast<std::size_t>(u)); }
  /// Unordered pairs with first < second, sorted.
  [[nodiscard]] const std::vector<std::pair<NodeId, NodeId>>& edges() const { return edges_; }
  [[nodiscard]] const std::vector<NodeId>& neighbors(NodeId u) const {
    check_node(u);
    return adjacency_[static_cast<std::size_t>(u)];
  }
  [[nodiscard]] int degree(NodeId u) const { return static_cast<int>(neighbors(u).size()); }

  [[nodiscard]] bool fully_labeled() const {
    return std::none_of(labels_.begin(), labels_.end(), [](ClassId c) { return c == kUnlabeled; });
  }

  void check_node(NodeId u) const {
    if (u < 0 || u >= node_count()) {
      throw std::out_of_range("invalid node id " + std::to_string(u) + " (node_count " +
                              std::to_string(node_count()) + ")");
    }
  }

 private:
  std::string name_;
  Matrix features_;
  std::vector<ClassId> labels_;
  int class_count_ = 0;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<std::vector<NodeId>> adjacency_;
};

struct Split {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
  std::uint64_t seed = 0;

  friend bool operator==(const Split&, const Split&) = default;
};

/// Node -> node list. Local maps come from a partition (self included),
/// non-local maps from a clustering (self included), k-hop maps exclude self.
struct NeighborhoodMap {
  enum class Kind { kLocal, kNonLocal, kKHop };
  Kind kind = Kind::kKHop;
  std::vector<std::vector<NodeId>> lists;

  [[nodiscard]] const std::vector<NodeId>& operator[](NodeId u) const {
    return lists.at(static_cast<std::size_t>(u));
  }
  [[nodiscard]] std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& l : lists) n += l.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Loading.

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(std::string_view tok, const std::string& where) {
  tok = trim(tok);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || tok.empty()) {
    throw std::runtime_error(where + ": expected integer, got '" + std::string(tok) + "'");
  }
  return v;
}

inline double parse_real(std::string_view tok, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || tok.empty()) {
    throw std::runtime_error(where + ": expected real, got '" + std::string(tok) + "'");
  }
  return v;
}

/// Splits "a<TAB>b" (falling back to the first run of whitespace).
inline std::pair<std::string_view, std::string_view> split_key(std::string_view line) {
  auto pos = line.find('\t');
  if (pos == std::string_view::npos) pos = line.find(' ');
  if (pos == std::string_view::npos) return {line, {}};
  return {line.substr(0, pos), trim(line.substr(pos + 1))};
}

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return in;
}

}  // namespace detail

/// Reads edges.tsv, features.tsv and labels.tsv from `dir`. Feature ids must
/// cover [0, N) exactly once. Nodes absent from labels.tsv are unlabeled.
/// When `class_count` is not given it is max(label) + 1.
inline Dataset load_dataset(const std::filesystem::path& dir,
                            std::optional<int> class_count = std::nullopt) {
  const auto feat_path = dir / "features.tsv";
  std::vector<std::pair<long long, std::vector<double>>> rows;
  {
    auto in = detail::open_or_throw(feat_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      const std::string where = feat_path.string() + ":" + std::to_string(lineno);
      auto [key, rest] = detail::split_key(line);
      std::vector<double> vals;
      std::string_view sv = rest;
      while (!sv.empty()) {
        const auto b = sv.find_first_not_of(" \t");
        if (b == std::string_view::npos) break;
        sv.remove_prefix(b);
        const auto e = sv.find_first_of(" \t");
        vals.push_back(detail::parse_real(sv.substr(0, e), where));
        sv.remove_prefix(e == std::string_view::npos ? sv.size() : e);
      }
      rows.emplace_back(detail::parse_int(key, where), std::move(vals));
    }
  }
  const auto n = rows.size();
  const std::size_t dim = rows.empty() ? 0 : rows.front().second.size();
  Matrix features(n, dim);
  std::vector<bool> seen(n, false);
  for (const auto& [id, vals] : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= n) {
      throw std::runtime_error(feat_path.string() + ": node id " + std::to_string(id) +
                               " outside [0, " + std::to_string(n) + ")");
    }
    if (seen[static_cast<std::size_t>(id)]) {
      throw std::runtime_error(feat_path.string() + ": duplicate node id " + std::to_string(id));
    }
    if (vals.size() != dim) {
      throw std::runtime_error(feat_path.string() + ": node " + std::to_string(id) + " has " +
                               std::to_string(vals.size()) + " features, expected " +
                               std::to_string(dim));
    }
    seen[static_cast<std::size_t>(id)] = true;
    std::copy(vals.begin(), vals.end(), features.row(static_cast<std::size_t>(id)).begin());
  }

  const auto edge_path = dir / "edges.tsv";
  std::vector<std::pair<NodeId, NodeId>> edges;
  {
    auto in = detail::open_or_throw(edge_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      const std::string where = edge_path.string() + ":" + std::to_string(lineno);
      auto [a, b] = detail::split_key(line);
      const auto u = detail::parse_int(a, where);
      const auto v = detail::parse_int(b, where);
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
        throw std::runtime_error(where + ": edge endpoint outside [0, " + std::to_string(n) + ")");
      }
      edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
  }

  const auto label_path = dir / "labels.tsv";
  std::vector<ClassId> labels(n, kUnlabeled);
  int max_label = -1;
  {
    auto in = detail::open_or_throw(label_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      const std::string where = label_path.string() + ":" + std::to_string(lineno);
      auto [a, b] = detail::split_key(line);
      const auto u = detail::parse_int(a, where);
      const auto c = detail::parse_int(b, where);
      if (u < 0 || static_cast<std::size_t>(u) >= n) {
        throw std::runtime_error(where + ": node id outside [0, " + std::to_string(n) + ")");
      }
      if (c < 0) throw std::runtime_error(where + ": negative class id");
      if (class_count && c >= *class_count) {
        throw std::runtime_error(where + ": class id " + std::to_string(c) + " >= class_count " +
                                 std::to_string(*class_count));
      }
      labels[static_cast<std::size_t>(u)] = static_cast<ClassId>(c);
      max_label = std::max(max_label, static_cast<int>(c));
    }
  }
  const int classes = class_count.value_or(std::max(1, max_label + 1));
  auto name = dir.filename().string();
  if (name.empty()) name = dir.parent_path().filename().string();
  return Dataset(std::move(name), std::move(features), std::move(edges), std::move(labels), classes);
}

// ---------------------------------------------------------------------------
// Traversal and diagnostics.

/// Nodes v != u with shortest-path distance <= k, sorted.
inline std::vector<NodeId> k_hop(const Dataset& d, NodeId u, int k) {
  d.check_node(u);
  if (k < 0) throw std::invalid_argument("k_hop: k must be >= 0");
  std::vector<int> dist(static_cast<std::size_t>(d.node_count()), -1);
  std::deque<NodeId> frontier{u};
  dist[static_cast<std::size_t>(u)] = 0;
  std::vector<NodeId> out;
  while (!frontier.empty()) {
    const NodeId x = frontier.front();
    frontier.pop_front();
    const int dx = dist[static_cast<std::size_t>(x)];
    if (dx == k) continue;
    for (NodeId y : d.neighbors(x)) {
      if (dist[static_cast<std::size_t>(y)] >= 0) continue;
      dist[static_cast<std::size_t>(y)] = dx + 1;
      out.push_back(y);
      frontier.push_back(y);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline NeighborhoodMap k_hop_map(const Dataset& d, int k) {
  NeighborhoodMap nm;
  nm.kind = NeighborhoodMap::Kind::kKHop;
  nm.lists.reserve(static_cast<std::size_t>(d.node_count()));
  for (NodeId u = 0; u < d.node_count(); ++u) nm.lists.push_back(k_hop(d, u, k));
  return nm;
}

namespace detail {

inline void require_fully_labeled(const Dataset& d, const char* what) {
  if (!d.fully_labeled()) throw std::invalid_argument(std::string(what) + ": every node must be labeled");
}

/// Mean over nodes of the fraction of listed nodes (self excluded) whose label
/// equals (same = true) or differs from the node's label. Nodes whose list is
/// empty after removing self are skipped; returns nullopt if all are skipped.
inline std::optional<double> mean_label_fraction(const Dataset& d, const NeighborhoodMap& nm,
                                                 bool same) {
  if (nm.lists.size() != static_cast<std::size_t>(d.node_count())) {
    throw std::invalid_argument("neighborhood map size != node count");
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (NodeId u = 0; u < d.node_count(); ++u) {
    std::size_t members = 0;
    std::size_t hits = 0;
    for (NodeId v : nm[u]) {
      if (v == u) continue;
      d.check_node(v);
      ++members;
      if ((d.label(v) == d.label(u)) == same) ++hits;
    }
    if (members == 0) continue;
    total += static_cast<double>(hits) / static_cast<double>(members);
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return total / static_cast<double>(counted);
}

}  // namespace detail

/// Mean over non-isolated nodes of the fraction of direct neighbors sharing
/// the node's label.
inline double homophily_ratio(const Dataset& d) {
  detail::require_fully_labeled(d, "homophily_ratio");
  NeighborhoodMap one_hop;
  one_hop.lists.reserve(static_cast<std::size_t>(d.node_count()));
  for (NodeId u = 0; u < d.node_count(); ++u) one_hop.lists.push_back(d.neighbors(u));
  const auto hr = detail::mean_label_fraction(d, one_hop, true);
  if (!hr) throw std::domain_error("undefined HR: every node is isolated");
  return *hr;
}

/// Homophily measured over an arbitrary neighborhood map (self excluded).
inline double neighborhood_homophily(const Dataset& d, const NeighborhoodMap& nm) {
  detail::require_fully_labeled(d, "neighborhood_homophily");
  const auto hr = detail::mean_label_fraction(d, nm, true);
  if (!hr) throw std::domain_error("undefined HR: every neighborhood is empty");
  return *hr;
}

/// Mean over nodes with a nonempty neighborhood (self excluded) of the
/// fraction of neighborhood members carrying a different label.
inline double noise_ratio(const Dataset& d, const NeighborhoodMap& nm) {
  detail::require_fully_labeled(d, "noise_ratio");
  return detail::mean_label_fraction(d, nm, false).value_or(0.0);
}

/// Row u is the mean of u's neighbor feature rows; isolated nodes keep their own row.
inline Matrix mean_1hop_features(const Dataset& d) {
  const Matrix& x = d.features();
  Matrix out(x.rows(), x.cols());
  for (NodeId u = 0; u < d.node_count(); ++u) {
    const auto& nb = d.neighbors(u);
    auto dst = out.row(static_cast<std::size_t>(u));
    if (nb.empty()) {
      std::copy(x.row(static_cast<std::size_t>(u)).begin(), x.row(static_cast<std::size_t>(u)).end(),
                dst.begin());
      continue;
    }
    const double w = 1.0 / static_cast<double>(nb.size());
    for (NodeId v : nb) axpy(w, x.row(static_cast<std::size_t>(v)), dst);
  }
  return out;
}

/// Per class: shuffle members, floor(0.6 n) to train, floor(0.2 n) to
/// validation, the remainder to test. Unlabeled nodes are left out.
inline Split stratified_split(const Dataset& d, std::uint64_t seed) {
  std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(d.class_count()));
  for (NodeId u = 0; u < d.node_count(); ++u) {
    if (d.label(u) != kUnlabeled) by_class[static_cast<std::size_t>(d.label(u))].push_back(u);
  }
  Split s;
  s.seed = seed;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 3) {
      throw std::invalid_argument("stratified_split: class " + std::to_string(c) + " has only " +
                                  std::to_string(members.size()) + " labeled nodes (need >= 3)");
    }
    Rng rng(derive_seed(seed, 0x5b11, c));
    shuffle(members, rng);
    const auto n = members.size();
    const auto n_train = n * 6 / 10;
    const auto n_val = n * 2 / 10;
    s.train.insert(s.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.insert(s.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                 members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.insert(s.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                  members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace lnl
