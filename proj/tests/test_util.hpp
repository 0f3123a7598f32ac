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

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lnl/lnl.hpp"

namespace lnl::testing {

/// Uniform in [lo, hi); each entry is zeroed with probability `zero_frac`.
inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0, double zero_frac = 0.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) {
    v = lo + (hi - lo) * uniform01(rng);
    if (zero_frac > 0.0 && uniform01(rng) < zero_frac) v = 0.0;
  }
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// Eight nodes, two classes, heterophilous ring plus chords, binary features.
inline Dataset toy8() {
  Matrix x(8, 6);
  const int on[8][2] = {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}, {0, 4}, {2, 3}};
  for (int u = 0; u < 8; ++u)
    for (int k : on[u]) x(static_cast<std::size_t>(u), static_cast<std::size_t>(k)) = 1.0;
  std::vector<std::pair<NodeId, NodeId>> edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5},
                                                  {5, 6}, {6, 7}, {7, 0}, {0, 4}, {2, 6}};
  std::vector<ClassId> labels = {0, 1, 0, 1, 0, 1, 0, 1};
  return Dataset("toy8", std::move(x), std::move(edges), std::move(labels), 2);
}

/// Small config so whole-pipeline tests finish in seconds.
inline TrainConfig small_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.hidden_dim = 8;
  c.se_dim = 8;
  c.heads = 2;
  c.nl_sample_limit = 16;
  c.m3s_warmup_epochs = 20;
  c.m3s_stages = 2;
  c.m3s_stage_epochs = 10;
  c.max_epochs = 60;
  c.patience = 20;
  c.seed = seed;
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lnl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lnl::testing
