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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lnl/graph.hpp"
#include "lnl/numerics.hpp"

namespace lnl {

/// Class-structured random graph with binary bag-of-words features.
struct SyntheticSpec {
  std::string name = "synthetic";
  int nodes = 183;
  int classes = 5;
  int feature_dim = 300;
  int words_per_node = 30;
  int topic_words = 40;      // class-specific vocabulary slice
  double signal = 0.5;       // probability a word comes from the class topic
  double avg_degree = 3.0;
  double homophily = 0.1;    // probability an edge joins two same-class nodes
  std::uint64_t seed = 7;

  void validate() const {
    if (nodes < 3 * classes) throw std::invalid_argument("synthetic: need at least 3 nodes per class");
    if (classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
    if (feature_dim < 1 || words_per_node < 1 || words_per_node > feature_dim)
      throw std::invalid_argument("synthetic: bad feature sizes");
    if (topic_words < 1 || topic_words * classes > feature_dim)
      throw std::invalid_argument("synthetic: topic slices do not fit in feature_dim");
    if (signal < 0.0 || signal > 1.0 || homophily < 0.0 || homophily > 1.0)
      throw std::invalid_argument("synthetic: probabilities must lie in [0, 1]");
    if (avg_degree < 0.0) throw std::invalid_argument("synthetic: avg_degree must be >= 0");
  }
};

inline Dataset make_synthetic(const SyntheticSpec& s) {
  s.validate();
  Rng rng(s.seed);
  const auto n = static_cast<std::size_t>(s.nodes);

  // Round-robin labels then shuffle: class sizes differ by at most one.
  std::vector<ClassId> labels(n);
  for (std::size_t u = 0; u < n; ++u) labels[u] = static_cast<ClassId>(u % static_cast<std::size_t>(s.classes));
  shuffle(labels, rng);
  std::vector<std::vector<NodeId>> members(static_cast<std::size_t>(s.classes));
  for (std::size_t u = 0; u < n; ++u) members[static_cast<std::size_t>(labels[u])].push_back(static_cast<NodeId>(u));

  Matrix x(n, static_cast<std::size_t>(s.feature_dim));
  for (std::size_t u = 0; u < n; ++u) {
    const auto topic0 = static_cast<std::size_t>(labels[u] * s.topic_words);
    for (int w = 0; w < s.words_per_node; ++w) {
      const std::size_t col = uniform01(rng) < s.signal
                                  ? topic0 + uniform_index(rng, static_cast<std::size_t>(s.topic_words))
                                  : uniform_index(rng, static_cast<std::size_t>(s.feature_dim));
      x(u, col) = 1.0;
    }
  }

  const auto target = static_cast<std::size_t>(s.avg_degree * static_cast<double>(n) / 2.0);
  std::set<std::pair<NodeId, NodeId>> edges;
  std::size_t attempts = 0;
  while (edges.size() < target && attempts++ < 50 * target + 100) {
    const auto u = static_cast<NodeId>(uniform_index(rng, n));
    const ClassId cu = labels[static_cast<std::size_t>(u)];
    NodeId v;
    if (uniform01(rng) < s.homophily) {
      const auto& pool = members[static_cast<std::size_t>(cu)];
      v = pool[uniform_index(rng, pool.size())];
    } else {
      auto other = static_cast<ClassId>(uniform_index(rng, static_cast<std::size_t>(s.classes - 1)));
      if (other >= cu) ++other;
      const auto& pool = members[static_cast<std::size_t>(other)];
      v = pool[uniform_index(rng, pool.size())];
    }
    if (u == v) continue;
    edges.insert({std::min(u, v), std::max(u, v)});
  }
  return Dataset(s.name, std::move(x), {edges.begin(), edges.end()}, std::move(labels), s.classes);
}

/// Writes `d` in the loader's directory format (features/edges/labels.tsv).
inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* file) {
    std::ofstream out(dir / file);
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    return out;
  };
  {
    auto out = open("features.tsv");
    for (NodeId u = 0; u < d.node_count(); ++u) {
      out << u << '\t';
      const auto row = d.features().row(static_cast<std::size_t>(u));
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? " " : "") << row[j];
      out << '\n';
    }
  }
  {
    auto out = open("edges.tsv");
    for (const auto& [u, v] : d.edges()) out << u << '\t' << v << '\n';
  }
  {
    auto out = open("labels.tsv");
    for (NodeId u = 0; u < d.node_count(); ++u) {
      if (d.label(u) != kUnlabeled) out << u << '\t' << d.label(u) << '\n';
    }
  }
}

}  // namespace lnl
