#pragma once

#include <string>
#include <vector>

#include "qpop/config.hpp"
#include "qpop/trainer.hpp"

namespace qpop {

// One JSONL record per evaluation, schema-stable across subcommands
// (undefined metrics are emitted as null, keys never omitted).
std::string report_to_jsonl(const EvalReport& report, int population_size);

// Writes metrics.jsonl and curves.csv (step plus one per-actor return
// column) under `dir`. Valid-but-empty files for an empty stream.
void emit_metrics(const std::vector<EvalReport>& reports, int population_size,
                  const std::string& dir);

struct RunResult {
  Trainer::Result train_result;
  std::string out_dir;
};

// Full experiment: builds the environment, trains, streams metrics, and
// leaves config snapshot + seed record + checkpoints in `out_dir`.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         bool quiet = false);

// m in {2..6} with quantiles {1/m, ..., 1}; per-m runs under out_dir/m_<m>
// plus a summary CSV.
void run_population_sweep(const ExperimentConfig& cfg, const std::string& out_dir);

// Single-actor baseline trained on bottom-activity user groups under a grid
// of exploration noise levels; emits the per-cell mean-return matrix.
struct GroupNoiseResult {
  std::vector<double> group_alphas;
  std::vector<double> noise_levels;
  std::vector<std::vector<double>> mean_returns;  // [group][noise]
};
GroupNoiseResult run_group_noise_study(const ExperimentConfig& cfg, const std::string& out_dir);

// Quantile-curve probe of a trained run: mean critic output over the whole
// catalog-as-actions set on a tau grid, written as CSV.
void probe_quantiles(const std::string& run_dir, const std::string& out_csv, int tau_points = 100);

// Per-actor action dump over sampled session states, CSV rows
// actor_id,state_index,a_0..a_{d-1}.
void dump_actions(const std::string& run_dir, const std::string& out_csv, int num_states = 64);

}  // namespace qpop
