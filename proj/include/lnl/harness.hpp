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
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lnl/graph.hpp"
#include "lnl/mi_estimator.hpp"
#include "lnl/model.hpp"
#include "lnl/neighborhoods.hpp"
#include "lnl/numerics.hpp"

namespace lnl {

enum class SeSource { kRaw, kMean1Hop, kAuto };
enum class ExperimentMode { kLocal, kNonLocal, kBiLevel, kMlpRaw, kMlpMean };

inline const char* to_string(SeSource s) {
  switch (s) {
    case SeSource::kRaw: return "raw";
    case SeSource::kMean1Hop: return "mean1hop";
    case SeSource::kAuto: return "auto";
  }
  return "?";
}

inline const char* to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::kLocal: return "local";
    case ExperimentMode::kNonLocal: return "nonlocal";
    case ExperimentMode::kBiLevel: return "bilevel";
    case ExperimentMode::kMlpRaw: return "mlp_raw";
    case ExperimentMode::kMlpMean: return "mlp_mean";
  }
  return "?";
}

inline SeSource parse_se_source(const std::string& s) {
  if (s == "raw") return SeSource::kRaw;
  if (s == "mean1hop") return SeSource::kMean1Hop;
  if (s == "auto") return SeSource::kAuto;
  throw std::invalid_argument("unknown se_source '" + s + "' (raw | mean1hop | auto)");
}

inline ExperimentMode parse_mode(const std::string& s) {
  if (s == "local") return ExperimentMode::kLocal;
  if (s == "nonlocal") return ExperimentMode::kNonLocal;
  if (s == "bilevel") return ExperimentMode::kBiLevel;
  if (s == "mlp_raw") return ExperimentMode::kMlpRaw;
  if (s == "mlp_mean") return ExperimentMode::kMlpMean;
  throw std::invalid_argument("unknown mode '" + s + "' (local | nonlocal | bilevel | mlp_raw | mlp_mean)");
}

inline bool is_baseline(ExperimentMode m) {
  return m == ExperimentMode::kMlpRaw || m == ExperimentMode::kMlpMean;
}

inline AggregationMode aggregation_mode(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::kLocal: return AggregationMode::kLocal;
    case ExperimentMode::kNonLocal: return AggregationMode::kNonLocal;
    case ExperimentMode::kBiLevel: return AggregationMode::kBiLevel;
    default: throw std::invalid_argument(std::string("mode ") + to_string(m) + " has no aggregation");
  }
}

/// Self-embedding input per dataset: mean 1-hop features on graphs where
/// they beat raw features for an MLP, raw features elsewhere and by default.
inline EmbeddingSource choose_se_source(const std::string& dataset_name) {
  std::string key;
  for (char c : dataset_name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const char* name : {"cora", "citeseer", "chameleon", "squirrel"}) {
    if (key == name) return EmbeddingSource::kMean1Hop;
  }
  return EmbeddingSource::kRaw;
}

struct ExperimentConfig {
  std::filesystem::path dataset_dir;
  SeSource se_source = SeSource::kAuto;
  ExperimentMode mode = ExperimentMode::kBiLevel;
  int runs = 10;
  std::uint64_t seed = 1;
  int threads = 1;
  TrainConfig train;
  std::filesystem::path output;

  void validate() const {
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    train.validate();
  }
};

/// Raised by run_experiment / run_baseline; names the pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int run, const std::string& what)
      : std::runtime_error("run " + std::to_string(run) + ", stage '" + stage + "': " + what),
        stage_(std::move(stage)), run_(run) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }
  [[nodiscard]] int run() const { return run_; }

 private:
  std::string stage_;
  int run_;
};

struct RunRecord {
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double best_val_accuracy = 0.0;
  int epochs_run = 0;
  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct Diagnostics {
  std::optional<double> hr_1hop;
  std::optional<double> hr_nonlocal;
  std::optional<double> nr_2hop;
  std::optional<double> nr_local;
  friend bool operator==(const Diagnostics&, const Diagnostics&) = default;
};

struct ExperimentReport {
  nlohmann::json config;
  std::vector<RunRecord> runs;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over runs
  Diagnostics diagnostics;
  double wall_clock_s = 0.0;

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

inline std::pair<double, double> mean_and_population_std(const std::vector<RunRecord>& runs) {
  if (runs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (const auto& r : runs) mean += r.test_accuracy;
  mean /= static_cast<double>(runs.size());
  double var = 0.0;
  for (const auto& r : runs) var += (r.test_accuracy - mean) * (r.test_accuracy - mean);
  var /= static_cast<double>(runs.size());
  return {mean, std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// Pipeline stages for one run.

/// Everything built before classifier training in one run.
struct PreparedRun {
  Split split;
  EmbeddingSource source = EmbeddingSource::kRaw;
  M3sResult estimator;
  WeightedGraph weighted;
  Partition partition;
  Clustering clustering;
  NeighborhoodMap local;
  NeighborhoodMap non_local;
};

namespace detail {

template <typename F>
auto stage(const char* name, int run, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, run, e.what());
  }
}

inline EmbeddingSource resolve_source(const ExperimentConfig& cfg, const Dataset& d) {
  switch (cfg.se_source) {
    case SeSource::kRaw: return EmbeddingSource::kRaw;
    case SeSource::kMean1Hop: return EmbeddingSource::kMean1Hop;
    case SeSource::kAuto: return choose_se_source(d.name());
  }
  return EmbeddingSource::kRaw;
}

inline TrainConfig run_config(const ExperimentConfig& cfg, int run) {
  TrainConfig t = cfg.train;
  t.seed = cfg.seed + static_cast<std::uint64_t>(run);
  return t;
}

}  // namespace detail

/// Split, estimator training, edge weighting, Louvain and MI clustering for
/// run `run` (seed = base seed + run). `se_input` must match `source`.
inline PreparedRun prepare_run(const Dataset& d, const Matrix& se_input, EmbeddingSource source,
                               const TrainConfig& tc, int run = 0) {
  PreparedRun p;
  p.source = source;
  p.split = detail::stage("split", run, [&] { return stratified_split(d, tc.seed); });
  p.estimator = detail::stage("estimator", run, [&] {
    return m3s_train(se_input, d.labels(), d.class_count(), p.split.train, tc, source);
  });
  const Matrix& z = p.estimator.embeddings.z;
  p.weighted = detail::stage("edge-weights", run, [&] { return weight_edges(d, z, p.estimator.params); });
  p.partition = detail::stage("louvain", run, [&] { return louvain(p.weighted); });
  p.local = local_neighborhood(p.partition);
  p.clustering = detail::stage("mi-cluster", run, [&] {
    const int k = tc.clusters > 0 ? tc.clusters : d.class_count();
    return mi_cluster(z, p.estimator.params, k, p.split.train, d.labels(), tc.cluster_max_iter, tc.seed);
  });
  p.non_local = detail::stage("non-local", run, [&] { return non_local_neighborhood(p.clustering, d, tc.nl_sample_limit); });
  return p;
}

/// HR / NR diagnostics. Fields stay empty when the dataset is not fully
/// labeled or the quantity is undefined.
inline Diagnostics compute_diagnostics(const Dataset& d, const NeighborhoodMap* local,
                                       const NeighborhoodMap* non_local) {
  Diagnostics diag;
  if (!d.fully_labeled()) return diag;
  auto guarded = [](auto&& f) -> std::optional<double> {
    try {
      return f();
    } catch (const std::domain_error&) {
      return std::nullopt;
    }
  };
  diag.hr_1hop = guarded([&] { return homophily_ratio(d); });
  diag.nr_2hop = noise_ratio(d, k_hop_map(d, 2));
  if (local != nullptr) diag.nr_local = noise_ratio(d, *local);
  if (non_local != nullptr) diag.hr_nonlocal = guarded([&] { return neighborhood_homophily(d, *non_local); });
  return diag;
}

inline nlohmann::json config_json(const ExperimentConfig& cfg, const Dataset& d, EmbeddingSource resolved) {
  const TrainConfig& t = cfg.train;
  return {
      {"dataset_dir", cfg.dataset_dir.string()},
      {"dataset", d.name()},
      {"mode", to_string(cfg.mode)},
      {"se_source", to_string(cfg.se_source)},
      {"se_source_resolved", to_string(resolved)},
      {"runs", cfg.runs},
      {"seed", cfg.seed},
      {"std_kind", "population"},
      {"learning_rate", t.learning_rate},
      {"momentum", t.momentum},
      {"weight_decay", t.weight_decay},
      {"dropout", t.dropout},
      {"hidden_dim", t.hidden_dim},
      {"se_dim", t.se_dim},
      {"heads", t.heads},
      {"agg_layers", t.agg_layers},
      {"nl_sample_limit", t.nl_sample_limit},
      {"patience", t.patience},
      {"max_epochs", t.max_epochs},
      {"m3s_warmup_epochs", t.m3s_warmup_epochs},
      {"m3s_stages", t.m3s_stages},
      {"m3s_stage_epochs", t.m3s_stage_epochs},
      {"m3s_top_t", t.m3s_top_t},
      {"pairs_per_anchor", t.pairs_per_anchor},
      {"clusters", t.clusters},
      {"cluster_max_iter", t.cluster_max_iter},
  };
}

namespace detail {

/// Runs `one(run)` for every run, optionally on worker threads; results keep
/// run order, so the report does not depend on scheduling.
template <typename F>
std::vector<RunRecord> run_all(int runs, int threads, F&& one) {
  std::vector<RunRecord> out(static_cast<std::size_t>(runs));
  if (threads <= 1) {
    for (int r = 0; r < runs; ++r) out[static_cast<std::size_t>(r)] = one(r);
    return out;
  }
  for (int start = 0; start < runs; start += threads) {
    std::vector<std::future<RunRecord>> batch;
    for (int r = start; r < std::min(runs, start + threads); ++r) batch.push_back(std::async(std::launch::async, one, r));
    for (int i = 0; i < static_cast<int>(batch.size()); ++i) out[static_cast<std::size_t>(start + i)] = batch[static_cast<std::size_t>(i)].get();
  }
  return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Full two-stage pipeline per run: estimator (frozen afterwards), then
/// neighborhoods, then classifier training; diagnostics from the last run.
inline ExperimentReport run_experiment(const Dataset& d, const ExperimentConfig& cfg) {
  cfg.validate();
  if (is_baseline(cfg.mode)) throw std::invalid_argument("run_experiment: use run_baseline for MLP modes");
  const auto t0 = std::chrono::steady_clock::now();
  const EmbeddingSource source = detail::resolve_source(cfg, d);
  const Matrix se_input = source == EmbeddingSource::kMean1Hop ? mean_1hop_features(d) : d.features();
  const AggregationMode agg = aggregation_mode(cfg.mode);

  ExperimentReport report;
  report.config = config_json(cfg, d, source);
  Diagnostics last_diag;
  report.runs = detail::run_all(cfg.runs, cfg.threads, [&](int run) {
    const TrainConfig tc = detail::run_config(cfg, run);
    const PreparedRun p = prepare_run(d, se_input, source, tc, run);
    return detail::stage("classifier", run, [&] {
      LnlModel model(d.features(), p.estimator.embeddings.z, &p.local, &p.non_local, agg, d.class_count(), tc);
      const TrainResult tr = train_classifier(model, d.labels(), p.split, tc);
      if (run == cfg.runs - 1) last_diag = compute_diagnostics(d, &p.local, &p.non_local);
      return RunRecord{tc.seed, evaluate(model.logits(false, 0), d.labels(), p.split.test), tr.best_val_accuracy,
                       tr.epochs_run};
    });
  });
  report.diagnostics = last_diag;
  std::tie(report.mean, report.std) = mean_and_population_std(report.runs);
  report.wall_clock_s = detail::seconds_since(t0);
  return report;
}

/// MLP-Raw / MLP-Mean: same splits, optimiser and early stopping, no
/// estimator and no neighborhoods.
inline ExperimentReport run_baseline(const Dataset& d, const ExperimentConfig& cfg) {
  cfg.validate();
  if (!is_baseline(cfg.mode)) throw std::invalid_argument("run_baseline: mode must be mlp_raw or mlp_mean");
  const auto t0 = std::chrono::steady_clock::now();
  const bool mean = cfg.mode == ExperimentMode::kMlpMean;
  const Matrix input = mean ? mean_1hop_features(d) : d.features();

  ExperimentReport report;
  report.config = config_json(cfg, d, mean ? EmbeddingSource::kMean1Hop : EmbeddingSource::kRaw);
  report.runs = detail::run_all(cfg.runs, cfg.threads, [&](int run) {
    const TrainConfig tc = detail::run_config(cfg, run);
    const Split split = detail::stage("split", run, [&] { return stratified_split(d, tc.seed); });
    return detail::stage("classifier", run, [&] {
      MlpClassifier model(input, d.class_count(), tc);
      const TrainResult tr = train_classifier(model, d.labels(), split, tc);
      return RunRecord{tc.seed, evaluate(model.logits(false, 0), d.labels(), split.test), tr.best_val_accuracy,
                       tr.epochs_run};
    });
  });
  report.diagnostics = compute_diagnostics(d, nullptr, nullptr);
  std::tie(report.mean, report.std) = mean_and_population_std(report.runs);
  report.wall_clock_s = detail::seconds_since(t0);
  return report;
}

/// Neighborhood diagnostics after the estimator and neighborhoods of one run.
inline Diagnostics run_diagnostics(const Dataset& d, const ExperimentConfig& cfg) {
  cfg.validate();
  const EmbeddingSource source = detail::resolve_source(cfg, d);
  const Matrix se_input = source == EmbeddingSource::kMean1Hop ? mean_1hop_features(d) : d.features();
  const TrainConfig tc = detail::run_config(cfg, 0);
  const PreparedRun p = prepare_run(d, se_input, source, tc, 0);
  return compute_diagnostics(d, &p.local, &p.non_local);
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json diagnostics_json(const Diagnostics& diag) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"HR_1hop", opt(diag.hr_1hop)},
          {"HR_nonlocal", opt(diag.hr_nonlocal)},
          {"NR_2hop", opt(diag.nr_2hop)},
          {"NR_local", opt(diag.nr_local)}};
}

inline nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& rec : r.runs) {
    runs.push_back({{"seed", rec.seed},
                    {"test_accuracy", rec.test_accuracy},
                    {"best_val_accuracy", rec.best_val_accuracy},
                    {"epochs_run", rec.epochs_run}});
  }
  return {{"config", r.config},
          {"runs", runs},
          {"aggregate", {{"mean", r.mean}, {"std", r.std}}},
          {"diagnostics", diagnostics_json(r.diagnostics)},
          {"wall_clock_s", r.wall_clock_s}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.config = j.at("config");
  for (const auto& rec : j.at("runs")) {
    r.runs.push_back({rec.at("seed").get<std::uint64_t>(), rec.at("test_accuracy").get<double>(),
                      rec.at("best_val_accuracy").get<double>(), rec.at("epochs_run").get<int>()});
  }
  r.mean = j.at("aggregate").at("mean").get<double>();
  r.std = j.at("aggregate").at("std").get<double>();
  const auto& dj = j.at("diagnostics");
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!dj.contains(key) || dj.at(key).is_null()) return std::nullopt;
    return dj.at(key).get<double>();
  };
  r.diagnostics = {opt("HR_1hop"), opt("HR_nonlocal"), opt("NR_2hop"), opt("NR_local")};
  r.wall_clock_s = j.at("wall_clock_s").get<double>();
  return r;
}

inline void emit_report(const ExperimentReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report to " + path.string());
  out << to_json(r).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline ExperimentReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return report_from_json(nlohmann::json::parse(in));
}

}  // namespace lnl
