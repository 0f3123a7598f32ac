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

// Local neighborhoods: Louvain communities of the MI-weighted graph.
// Non-local neighborhoods: clusters of nodes with high mean MI, sampled by
// degree when a cluster is larger than the aggregation limit.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lnl/graph.hpp"
#include "lnl/mi_estimator.hpp"
#include "lnl/numerics.hpp"

namespace lnl {

/// The dataset's edge set with a nonnegative weight per edge.
struct WeightedGraph {
  int node_count = 0;
  std::vector<std::pair<NodeId, NodeId>> edges;  // u < v
  std::vector<double> weights;                   // parallel to edges

  [[nodiscard]] double total_weight() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
  [[nodiscard]] std::vector<double> strengths() const {
    std::vector<double> s(static_cast<std::size_t>(node_count), 0.0);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      s[static_cast<std::size_t>(edges[e].first)] += weights[e];
      s[static_cast<std::size_t>(edges[e].second)] += weights[e];
    }
    return s;
  }
};

/// W_uv = max(0, mi(u, v)) on every existing edge; structure untouched.
template <typename MiFn>
WeightedGraph weight_edges(const Dataset& d, MiFn&& mi) {
  WeightedGraph g;
  g.node_count = d.node_count();
  g.edges = d.edges();
  g.weights.reserve(g.edges.size());
  for (const auto& [u, v] : g.edges) g.weights.push_back(std::max(0.0, mi(u, v)));
  return g;
}

inline WeightedGraph weight_edges(const Dataset& d, const Matrix& z, const EstimatorParams& p) {
  const Matrix sz = matmul(z, symmetric_part(p.bilinear()));
  const double b = p.bias();
  return weight_edges(d, [&](NodeId u, NodeId v) {
    return dot(z.row(static_cast<std::size_t>(u)), sz.row(static_cast<std::size_t>(v))) + b;
  });
}

/// Community id per node, contiguous from 0.
struct Partition {
  std::vector<int> community;
  int count = 0;

  /// Renumbers ids in order of first appearance.
  static Partition from_labels(std::span<const int> ids) {
    Partition p;
    std::map<int, int> remap;
    p.community.reserve(ids.size());
    for (int id : ids) {
      auto [it, inserted] = remap.try_emplace(id, static_cast<int>(remap.size()));
      p.community.push_back(it->second);
    }
    p.count = static_cast<int>(remap.size());
    return p;
  }
  static Partition singletons(int n) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    return from_labels(ids);
  }
  static Partition whole(int n) { return from_labels(std::vector<int>(static_cast<std::size_t>(n), 0)); }
};

/// Newman weighted modularity,
///   Q = 1/(2|W|) sum_{u,v} [W_uv - S(u) S(v) / (2|W|)] delta(u, v),
/// evaluated per community as sum_c in_c / 2|W| - (tot_c / 2|W|)^2.
inline double weighted_modularity(const WeightedGraph& g, const Partition& p) {
  if (p.community.size() != static_cast<std::size_t>(g.node_count)) {
    throw std::invalid_argument("weighted_modularity: partition size != node count");
  }
  const double two_w = 2.0 * g.total_weight();
  if (!(two_w > 0.0)) throw std::domain_error("weighted_modularity: total edge weight is zero");
  std::vector<double> in(static_cast<std::size_t>(p.count), 0.0);
  std::vector<double> tot(static_cast<std::size_t>(p.count), 0.0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto cu = static_cast<std::size_t>(p.community[static_cast<std::size_t>(g.edges[e].first)]);
    const auto cv = static_cast<std::size_t>(p.community[static_cast<std::size_t>(g.edges[e].second)]);
    if (cu == cv) in[cu] += 2.0 * g.weights[e];
    tot[cu] += g.weights[e];
    tot[cv] += g.weights[e];
  }
  double q = 0.0;
  for (std::size_t c = 0; c < in.size(); ++c) q += in[c] / two_w - (tot[c] / two_w) * (tot[c] / two_w);
  return q;
}

// ---------------------------------------------------------------------------
// Louvain.

struct LouvainOptions {
  /// Recompute Q after every accepted move and throw if it decreased.
  bool check_monotone = false;
  int max_levels = 64;
};

namespace detail {

/// Level graph for Louvain: symmetric adjacency without self entries plus a
/// separate self-loop weight A_ii (internal weight of a merged community).
struct LevelGraph {
  std::vector<std::vector<std::pair<int, double>>> adj;
  std::vector<double> self_loop;

  [[nodiscard]] std::size_t size() const { return adj.size(); }
  [[nodiscard]] double strength(std::size_t i) const {
    double s = self_loop[i];
    for (const auto& [_, w] : adj[i]) s += w;
    return s;
  }
};

inline double level_modularity(const LevelGraph& g, std::span<const int> comm, int count, double m2) {
  std::vector<double> in(static_cast<std::size_t>(count), 0.0), tot(static_cast<std::size_t>(count), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto ci = static_cast<std::size_t>(comm[i]);
    in[ci] += g.self_loop[i];
    tot[ci] += g.strength(i);
    for (const auto& [j, w] : g.adj[i])
      if (comm[static_cast<std::size_t>(j)] == comm[i]) in[ci] += w;
  }
  double q = 0.0;
  for (std::size_t c = 0; c < in.size(); ++c) q += in[c] / m2 - (tot[c] / m2) * (tot[c] / m2);
  return q;
}

/// Local-moving phase. Returns true if any node changed community.
inline bool louvain_local_moves(const LevelGraph& g, std::vector<int>& comm, double m2,
                                const LouvainOptions& opt) {
  const std::size_t n = g.size();
  std::vector<double> k(n), tot(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    k[i] = g.strength(i);
    tot[static_cast<std::size_t>(comm[i])] += k[i];
  }
  std::vector<double> w_to(n, 0.0);
  std::vector<int> touched;
  bool any = false;
  double q_prev = opt.check_monotone ? level_modularity(g, comm, static_cast<int>(n), m2) : 0.0;
  for (bool moved = true; moved;) {
    moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int own = comm[i];
      touched.clear();
      for (const auto& [j, w] : g.adj[i]) {
        const int c = comm[static_cast<std::size_t>(j)];
        if (w_to[static_cast<std::size_t>(c)] == 0.0) touched.push_back(c);
        w_to[static_cast<std::size_t>(c)] += w;
      }
      tot[static_cast<std::size_t>(own)] -= k[i];
      auto gain = [&](int c) {
        return w_to[static_cast<std::size_t>(c)] - k[i] * tot[static_cast<std::size_t>(c)] / m2;
      };
      const double own_gain = gain(own);
      int best = own;
      double best_gain = own_gain;
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (int c : touched) {
        if (c == own) continue;
        const double gc = gain(c);
        if (gc > best_gain + 1e-12 * (1.0 + std::abs(best_gain))) {
          best = c;
          best_gain = gc;
        }
      }
      tot[static_cast<std::size_t>(best)] += k[i];
      for (int c : touched) w_to[static_cast<std::size_t>(c)] = 0.0;
      for (const auto& [j, w] : g.adj[i]) w_to[static_cast<std::size_t>(comm[static_cast<std::size_t>(j)])] = 0.0;
      if (best != own) {
        comm[i] = best;
        moved = true;
        any = true;
        if (opt.check_monotone) {
          const double q = level_modularity(g, comm, static_cast<int>(n), m2);
          if (q < q_prev - 1e-12) {
            throw std::logic_error("louvain: accepted move decreased modularity");
          }
          q_prev = q;
        }
      }
    }
  }
  return any;
}

}  // namespace detail

/// Two-phase Louvain (local moves in node-id order, strictly positive gains
/// only, ties to the lowest community id; then community aggregation)
/// repeated until no node moves. Falls back
/// to unit weights when every edge weight is zero.
inline Partition louvain(const WeightedGraph& g, const LouvainOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(g.node_count);
  if (g.edges.empty()) return Partition::singletons(g.node_count);
  const bool unit = !(g.total_weight() > 0.0);

  detail::LevelGraph level;
  level.adj.assign(n, {});
  level.self_loop.assign(n, 0.0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const double w = unit ? 1.0 : g.weights[e];
    if (w == 0.0) continue;
    const auto [u, v] = g.edges[e];
    level.adj[static_cast<std::size_t>(u)].emplace_back(v, w);
    level.adj[static_cast<std::size_t>(v)].emplace_back(u, w);
  }
  double m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) m2 += level.strength(i);

  std::vector<int> membership(n);
  for (std::size_t i = 0; i < n; ++i) membership[i] = static_cast<int>(i);

  for (int lvl = 0; lvl < opt.max_levels; ++lvl) {
    const std::size_t ln = level.size();
    std::vector<int> comm(ln);
    for (std::size_t i = 0; i < ln; ++i) comm[i] = static_cast<int>(i);
    if (!detail::louvain_local_moves(level, comm, m2, opt)) break;

    const Partition renum = Partition::from_labels(comm);
    for (auto& m : membership) m = renum.community[static_cast<std::size_t>(m)];

    detail::LevelGraph next;
    const auto cn = static_cast<std::size_t>(renum.count);
    next.adj.assign(cn, {});
    next.self_loop.assign(cn, 0.0);
    std::vector<std::map<int, double>> acc(cn);
    for (std::size_t i = 0; i < ln; ++i) {
      const auto ci = static_cast<std::size_t>(renum.community[i]);
      next.self_loop[ci] += level.self_loop[i];
      for (const auto& [j, w] : level.adj[i]) {
        const int cj = renum.community[static_cast<std::size_t>(j)];
        if (static_cast<std::size_t>(cj) == ci) {
          next.self_loop[ci] += w;
        } else {
          acc[ci][cj] += w;
        }
      }
    }
    for (std::size_t c = 0; c < cn; ++c) next.adj[c].assign(acc[c].begin(), acc[c].end());
    level = std::move(next);
  }
  return Partition::from_labels(membership);
}

/// u's list is every member of u's community, u included, ascending.
inline NeighborhoodMap local_neighborhood(const Partition& p) {
  std::vector<std::vector<NodeId>> members(static_cast<std::size_t>(p.count));
  for (std::size_t u = 0; u < p.community.size(); ++u) {
    members[static_cast<std::size_t>(p.community[u])].push_back(static_cast<NodeId>(u));
  }
  NeighborhoodMap nm;
  nm.kind = NeighborhoodMap::Kind::kLocal;
  nm.lists.reserve(p.community.size());
  for (int c : p.community) nm.lists.push_back(members[static_cast<std::size_t>(c)]);
  return nm;
}

// ---------------------------------------------------------------------------
// MI clustering.

struct Clustering {
  std::vector<int> assignment;
  int k = 0;
  int iterations = 0;
  bool converged = false;
  /// Sum over nodes of the mean MI to their own cluster, after each iteration.
  std::vector<double> objective;
};

namespace detail {

/// Row c holds S mu_c for cluster mean mu_c, and count[c] its size. Because
/// the MI logit is bilinear, mean_{v in c} MI(u, v) = z_u' S mu_c + b exactly.
struct ClusterSummary {
  Matrix s_mean;
  std::vector<std::size_t> count;
};

inline ClusterSummary summarize_clusters(const Matrix& z, std::span<const int> assignment, int k,
                                         const Matrix& s) {
  Matrix mean(static_cast<std::size_t>(k), z.cols());
  std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
  for (std::size_t u = 0; u < assignment.size(); ++u) {
    const auto c = static_cast<std::size_t>(assignment[u]);
    axpy(1.0, z.row(u), mean.row(c));
    ++count[c];
  }
  for (std::size_t c = 0; c < count.size(); ++c)
    if (count[c] > 0)
      for (double& v : mean.row(c)) v /= static_cast<double>(count[c]);
  return {matmul(mean, s), std::move(count)};
}

inline double mean_mi_to_cluster(const Matrix& z, std::size_t u, const ClusterSummary& cs, std::size_t c,
                                 double bias) {
  return dot(z.row(u), cs.s_mean.row(c)) + bias;
}

inline int best_cluster(const Matrix& z, std::size_t u, int incumbent, const ClusterSummary& cs,
                        double bias) {
  int best = incumbent;
  double best_val = cs.count[static_cast<std::size_t>(incumbent)] > 0
                        ? mean_mi_to_cluster(z, u, cs, static_cast<std::size_t>(incumbent), bias)
                        : -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cs.count.size(); ++c) {
    if (cs.count[c] == 0 || static_cast<int>(c) == incumbent) continue;
    const double v = mean_mi_to_cluster(z, u, cs, c, bias);
    if (v > best_val) {
      best = static_cast<int>(c);
      best_val = v;
    }
  }
  return best;
}

}  // namespace detail

/// The cluster that maximises u's mean MI to its members under `assignment`;
/// ties keep the incumbent, then go to the lower id.
inline int mi_cluster_update(NodeId u, std::span<const int> assignment, int k, const Matrix& z,
                             const EstimatorParams& p) {
  const auto cs = detail::summarize_clusters(z, assignment, k, symmetric_part(p.bilinear()));
  return detail::best_cluster(z, static_cast<std::size_t>(u), assignment[static_cast<std::size_t>(u)], cs,
                              p.bias());
}

inline double clustering_objective(const Matrix& z, std::span<const int> assignment, int k,
                                   const Matrix& s, double bias) {
  const auto cs = detail::summarize_clusters(z, assignment, k, s);
  double total = 0.0;
  for (std::size_t u = 0; u < assignment.size(); ++u)
    total += detail::mean_mi_to_cluster(z, u, cs, static_cast<std::size_t>(assignment[u]), bias);
  return total;
}

/// K-means-style clustering under mean pairwise MI. Labeled nodes start in
/// cluster (label mod K), the rest uniformly at random. Assignments update
/// synchronously until nothing changes or `max_iter` iterations ran. A
/// cluster left empty takes the node with the lowest mean MI to its own
/// (non-singleton) cluster.
inline Clustering mi_cluster(const Matrix& z, const EstimatorParams& p, int k,
                             std::span<const NodeId> labeled, std::span<const ClassId> labels,
                             int max_iter, std::uint64_t seed) {
  const auto n = z.rows();
  if (k < 2) throw std::invalid_argument("mi_cluster: K must be >= 2");
  if (static_cast<std::size_t>(k) > n) {
    throw std::invalid_argument("mi_cluster: K=" + std::to_string(k) + " exceeds node count " +
                                std::to_string(n));
  }
  Clustering cl;
  cl.k = k;
  cl.assignment.assign(n, -1);
  for (NodeId u : labeled) {
    const ClassId c = labels[static_cast<std::size_t>(u)];
    if (c != kUnlabeled) cl.assignment[static_cast<std::size_t>(u)] = c % k;
  }
  Rng rng(derive_seed(seed, 0xc1057));
  for (auto& a : cl.assignment)
    if (a < 0) a = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(k)));

  const Matrix s = symmetric_part(p.bilinear());
  const double bias = p.bias();

  auto reseed_empty = [&](std::vector<int>& assign) {
    for (int c = 0; c < k; ++c) {
      auto cs = detail::summarize_clusters(z, assign, k, s);
      if (cs.count[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t pick = n;
      double lowest = std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u < n; ++u) {
        const auto cu = static_cast<std::size_t>(assign[u]);
        if (cs.count[cu] < 2) continue;
        const double v = detail::mean_mi_to_cluster(z, u, cs, cu, bias);
        if (v < lowest) {
          lowest = v;
          pick = u;
        }
      }
      if (pick < n) assign[pick] = c;
    }
  };
  reseed_empty(cl.assignment);

  for (int it = 0; it < max_iter; ++it) {
    const auto cs = detail::summarize_clusters(z, cl.assignment, k, s);
    std::vector<int> next(n);
    for (std::size_t u = 0; u < n; ++u) next[u] = detail::best_cluster(z, u, cl.assignment[u], cs, bias);
    reseed_empty(next);
    ++cl.iterations;
    const bool changed = next != cl.assignment;
    cl.assignment = std::move(next);
    cl.objective.push_back(clustering_objective(z, cl.assignment, k, s, bias));
    if (!changed) {
      cl.converged = true;
      break;
    }
  }
  return cl;
}

/// u's list is the members of u's cluster. A cluster larger than `limit` is
/// cut to u plus its (limit - 1) highest-degree other members, ties by lower
/// id, so no list exceeds `limit`.
inline NeighborhoodMap non_local_neighborhood(const Clustering& c, const Dataset& d, int limit) {
  if (limit < 1) throw std::invalid_argument("non_local_neighborhood: limit must be >= 1");
  std::vector<std::vector<NodeId>> members(static_cast<std::size_t>(c.k));
  for (std::size_t u = 0; u < c.assignment.size(); ++u) {
    members[static_cast<std::size_t>(c.assignment[u])].push_back(static_cast<NodeId>(u));
  }
  std::vector<std::vector<NodeId>> by_degree(members.size());
  for (std::size_t k = 0; k < members.size(); ++k) {
    by_degree[k] = members[k];
    std::stable_sort(by_degree[k].begin(), by_degree[k].end(),
                     [&](NodeId a, NodeId b) { return d.degree(a) > d.degree(b); });
  }
  const auto lim = static_cast<std::size_t>(limit);
  NeighborhoodMap nm;
  nm.kind = NeighborhoodMap::Kind::kNonLocal;
  nm.lists.reserve(c.assignment.size());
  for (std::size_t u = 0; u < c.assignment.size(); ++u) {
    const auto k = static_cast<std::size_t>(c.assignment[u]);
    if (members[k].size() <= lim) {
      nm.lists.push_back(members[k]);
      continue;
    }
    std::vector<NodeId> list{static_cast<NodeId>(u)};
    for (NodeId v : by_degree[k]) {
      if (list.size() == lim) break;
      if (v != static_cast<NodeId>(u)) list.push_back(v);
    }
    std::sort(list.begin(), list.end());
    nm.lists.push_back(std::move(list));
  }
  return nm;
}

/// "node_id<TAB>group_id" per line.
inline void write_groups(const std::filesystem::path& path, std::span<const int> groups) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t u = 0; u < groups.size(); ++u) out << u << '\t' << groups[u] << '\n';
}

}  // namespace lnl
