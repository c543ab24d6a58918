#pragma once

// Experiment runner: spec files, per-seed training artifacts, learning-curve
// aggregation, algorithm comparison and adaptability sweeps.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gddpg/guided.hpp"

namespace gddpg {

struct ExperimentSpec {
  std::string name = "experiment";
  std::vector<Algorithm> algorithms = {Algorithm::guided_ddpg};
  std::vector<std::uint64_t> seeds = {1};
  TrainConfig train;               // per-run seed and algorithm are overwritten
  int eval_episodes = 50;          // final evaluation of each trained policy
  std::uint64_t eval_seed = 7000001;
  std::vector<double> sweep_clearances;  // m
  std::vector<double> sweep_offsets;     // m

  void validate() const;
};

/// Parses a key-value spec. Unknown keys are a configuration error that
/// lists every offending key.
ExperimentSpec parse_experiment_spec(const KeyValueConfig& kv);
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

struct SweepRow {
  std::string kind;  // "clearance" or "offset"
  double value = 0.0;
  EvalMetrics metrics;
};

struct RunSummary {
  Algorithm algorithm = Algorithm::guided_ddpg;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::optional<long> rollouts_to_threshold;
  long total_rollouts = 0;
  long total_steps = 0;
  EvalMetrics final_eval;
  long best_rollout = 0;
  EvalMetrics best_eval;       // the retained checkpoint (best.bin)
  std::vector<SweepRow> sweep;  // on the retained checkpoint
  double wall_seconds = 0.0;
  std::vector<AuditCheck> audit;
  std::size_t warnings = 0;
};


/// Evaluates a policy trained on `base` on variants with different clearance
/// or hole offset, without retraining.
std::vector<SweepRow> sweep(const AgentNets& nets, const InsertionEnvConfig& base,
                            const std::vector<double>& clearances, const std::vector<double>& offsets,
                            int episodes, std::uint64_t seed);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

/// Trains one (algorithm, seed) pair and writes its artifacts under `dir`:
/// episodes.csv, evals.csv, duals.csv, subiters.csv, config.txt, agent.bin
/// (final nets), best.bin (retained checkpoint), sweep.csv and summary.json. Numerical failures are recorded in
/// summary.json instead of propagating.
RunSummary run_single(const ExperimentSpec& spec, Algorithm algorithm, std::uint64_t seed,
                      const std::filesystem::path& dir);

struct AlgorithmAggregate {
  Algorithm algorithm = Algorithm::guided_ddpg;
  std::vector<RunSummary> runs;
  std::optional<double> median_rollouts;  // over seeds, unreached counted as missing
  double q1_rollouts = 0.0;
  double q3_rollouts = 0.0;
  int reached = 0;
  double median_wall_seconds = 0.0;
};

struct ExperimentResult {
  std::vector<AlgorithmAggregate> algorithms;
  bool all_ok() const;
};

/// Every algorithm of an experiment over every seed. Writes per-run directories
/// `<out>/<algorithm>/seed_<s>/`, per-algorithm `curve.csv` (median and IQR
/// of evaluation success over seeds), `comparison.csv` and `comparison.json`.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out);

/// Median and quartiles by linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

}  // namespace gddpg
