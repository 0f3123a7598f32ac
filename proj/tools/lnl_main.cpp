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

// lnl: run experiments, baselines and neighborhood diagnostics.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "lnl/lnl.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  lnl::ExperimentConfig cfg;
  std::string mode = "bilevel";
  std::string se_source = "auto";
  int class_count = 0;
};

void add_common(CLI::App& app, Options& o) {
  auto& t = o.cfg.train;
  app.add_option("--dataset-dir", o.cfg.dataset_dir, "Directory with features.tsv, edges.tsv, labels.tsv")
      ->required();
  app.add_option("--classes", o.class_count, "Class count (default: max label + 1)");
  app.add_option("--runs", o.cfg.runs, "Independent runs")->capture_default_str();
  app.add_option("--seed", o.cfg.seed, "Base seed; run r uses seed + r")->capture_default_str();
  app.add_option("--threads", o.cfg.threads, "Runs executed concurrently")->capture_default_str();
  app.add_option("--out", o.cfg.output, "Write the JSON report here (default: stdout)");
  app.add_option("--se-source", o.se_source, "Self-embedding input: raw, mean1hop or auto")->capture_default_str();

  app.add_option("--lr", t.learning_rate)->capture_default_str();
  app.add_option("--momentum", t.momentum)->capture_default_str();
  app.add_option("--weight-decay", t.weight_decay)->capture_default_str();
  app.add_option("--dropout", t.dropout)->capture_default_str();
  app.add_option("--hidden-dim", t.hidden_dim)->capture_default_str();
  app.add_option("--se-dim", t.se_dim)->capture_default_str();
  app.add_option("--heads", t.heads)->capture_default_str();
  app.add_option("--agg-layers", t.agg_layers)->capture_default_str();
  app.add_option("--nl-sample-limit", t.nl_sample_limit)->capture_default_str();
  app.add_option("--patience", t.patience)->capture_default_str();
  app.add_option("--max-epochs", t.max_epochs)->capture_default_str();
  app.add_option("--m3s-warmup-epochs", t.m3s_warmup_epochs)->capture_default_str();
  app.add_option("--m3s-stages", t.m3s_stages)->capture_default_str();
  app.add_option("--m3s-stage-epochs", t.m3s_stage_epochs)->capture_default_str();
  app.add_option("--m3s-top-t", t.m3s_top_t, "0 means ceil(0.05 * nodes)")->capture_default_str();
  app.add_option("--pairs-per-anchor", t.pairs_per_anchor)->capture_default_str();
  app.add_option("--clusters", t.clusters, "0 means the class count")->capture_default_str();
  app.add_option("--cluster-max-iter", t.cluster_max_iter)->capture_default_str();
}

/// Parses the string-valued options and validates everything.
void finalize(Options& o) {
  try {
    o.cfg.mode = lnl::parse_mode(o.mode);
    o.cfg.se_source = lnl::parse_se_source(o.se_source);
    if (o.class_count < 0) throw std::invalid_argument("--classes must be >= 0");
    o.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

lnl::Dataset load(const Options& o) {
  return o.class_count > 0 ? lnl::load_dataset(o.cfg.dataset_dir, o.class_count)
                           : lnl::load_dataset(o.cfg.dataset_dir);
}

void write_json(const nlohmann::json& j, const std::filesystem::path& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  f << j.dump(2) << '\n';
}

void emit(const lnl::ExperimentReport& r, const Options& o) {
  if (o.cfg.output.empty()) {
    std::cout << lnl::to_json(r).dump(2) << '\n';
  } else {
    lnl::emit_report(r, o.cfg.output);
  }
  std::fprintf(stderr, "%s %s: mean %.4f std %.4f over %zu runs (%.1f s)\n", o.cfg.dataset_dir.filename().c_str(),
               o.mode.c_str(), r.mean, r.std, r.runs.size(), r.wall_clock_s);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Graph node classification with MI-based local and non-local neighborhoods"};
  app.require_subcommand(1);

  Options run_opts, base_opts, diag_opts;
  auto* run = app.add_subcommand("run", "Train and evaluate the model over several runs");
  add_common(*run, run_opts);
  run->add_option("--mode", run_opts.mode, "bilevel, local or nonlocal")->capture_default_str();

  auto* baseline = app.add_subcommand("baseline", "Train an MLP on raw or 1-hop mean features");
  add_common(*baseline, base_opts);
  base_opts.mode = "mlp_raw";
  baseline->add_option("--mode", base_opts.mode, "mlp_raw or mlp_mean")->capture_default_str();

  auto* diagnostics = app.add_subcommand("diagnostics", "Emit homophily and noise ratios only");
  add_common(*diagnostics, diag_opts);

  lnl::SyntheticSpec spec;
  std::filesystem::path synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic class-structured graph");
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--name", spec.name)->capture_default_str();
  synth->add_option("--nodes", spec.nodes)->capture_default_str();
  synth->add_option("--classes", spec.classes)->capture_default_str();
  synth->add_option("--feature-dim", spec.feature_dim)->capture_default_str();
  synth->add_option("--words-per-node", spec.words_per_node)->capture_default_str();
  synth->add_option("--topic-words", spec.topic_words)->capture_default_str();
  synth->add_option("--signal", spec.signal)->capture_default_str();
  synth->add_option("--avg-degree", spec.avg_degree)->capture_default_str();
  synth->add_option("--homophily", spec.homophily)->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (run->parsed()) {
      finalize(run_opts);
      if (lnl::is_baseline(run_opts.cfg.mode)) throw ConfigError("run: use the baseline subcommand for " + run_opts.mode);
      emit(lnl::run_experiment(load(run_opts), run_opts.cfg), run_opts);
    } else if (baseline->parsed()) {
      finalize(base_opts);
      if (!lnl::is_baseline(base_opts.cfg.mode)) throw ConfigError("baseline: mode must be mlp_raw or mlp_mean");
      emit(lnl::run_baseline(load(base_opts), base_opts.cfg), base_opts);
    } else if (diagnostics->parsed()) {
      finalize(diag_opts);
      const lnl::Dataset d = load(diag_opts);
      write_json({{"dataset", d.name()}, {"diagnostics", lnl::diagnostics_json(lnl::run_diagnostics(d, diag_opts.cfg))}},
                 diag_opts.cfg.output);
    } else if (synth->parsed()) {
      try {
        spec.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const lnl::Dataset d = lnl::make_synthetic(spec);
      lnl::write_dataset(d, synth_out);
      std::fprintf(stderr, "wrote %d nodes, %zu edges to %s\n", d.node_count(), d.edge_count(), synth_out.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }
