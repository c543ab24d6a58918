#include "gddpg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gddpg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

json eval_json(const EvalMetrics& m) {
  return {{"success_rate", m.success_rate},
          {"mean_return", m.mean_return},
          {"mean_steps", m.mean_steps},
          {"episodes", m.episodes}};
}

json summary_json(const RunSummary& s) {
  json audit = json::array();
  for (const auto& c : s.audit) audit.push_back({{"check", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  json j = {{"algorithm", to_string(s.algorithm)},
            {"seed", s.seed},
            {"ok", s.ok},
            {"total_rollouts", s.total_rollouts},
            {"total_steps", s.total_steps},
            {"final_eval", eval_json(s.final_eval)},
            {"best_rollout", s.best_rollout},
            {"best_eval", eval_json(s.best_eval)},
            {"wall_seconds", s.wall_seconds},
            {"warnings", s.warnings},
            {"audit", audit}};
  json sweep = json::array();
  for (const auto& row : s.sweep) {
    sweep.push_back({{"kind", row.kind}, {"value", row.value}, {"eval", eval_json(row.metrics)}});
  }
  j["sweep"] = sweep;
  j["rollouts_to_threshold"] = s.rollouts_to_threshold ? json(*s.rollouts_to_threshold) : json(nullptr);
  if (!s.ok) j["error"] = s.error;
  return j;
}

// Evaluation success at `rollout` for one run: the latest evaluation at or
// before it, 0 before the first evaluation.
double success_at(const std::vector<EvalRecord>& evals, long rollout) {
  double value = 0.0;
  for (const auto& e : evals) {
    if (e.rollout > rollout) break;
    value = e.success_rate;
  }
  return value;
}

}  // namespace

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw ConfigError("experiment: seeds must be non-empty");
  if (algorithms.empty()) throw ConfigError("experiment: algorithms must be non-empty");
  if (eval_episodes < 1) throw ConfigError("experiment: eval_episodes must be >= 1");
  for (double c : sweep_clearances) {
    if (!(c >= 0.0)) throw ConfigError("experiment: sweep clearances must be >= 0");
  }
  train.validate();
}

ExperimentSpec parse_experiment_spec(const KeyValueConfig& kv) {
  ExperimentSpec spec;
  spec.name = kv.get_string("experiment.name", spec.name);
  if (kv.contains("experiment.algorithms")) {
    spec.algorithms.clear();
    for (const auto& a : split_list(kv.get_string("experiment.algorithms", ""))) {
      spec.algorithms.push_back(algorithm_from_string(a));
    }
  }
  if (kv.contains("experiment.seeds")) {
    spec.seeds.clear();
    for (int s : kv.get_ints("experiment.seeds", {})) {
      if (s < 0) throw ConfigError("experiment.seeds must be non-negative");
      spec.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  spec.eval_episodes = kv.get_int("experiment.eval_episodes", spec.eval_episodes);
  spec.eval_seed = static_cast<std::uint64_t>(kv.get_long("experiment.eval_seed", static_cast<long>(spec.eval_seed)));
  spec.sweep_clearances = kv.get_doubles("sweep.clearances", spec.sweep_clearances);
  spec.sweep_offsets = kv.get_doubles("sweep.offsets", spec.sweep_offsets);
  spec.train = load_train_config(kv);

  const auto unknown = kv.unknown_keys();
  if (!unknown.empty()) {
    std::string msg = kv.origin() + ": unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const fs::path& path) {
  return parse_experiment_spec(KeyValueConfig::load(path));
}

std::vector<SweepRow> sweep(const AgentNets& nets, const InsertionEnvConfig& base,
                            const std::vector<double>& clearances, const std::vector<double>& offsets,
                            int episodes, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (double c : clearances) {
    InsertionEnvConfig env = base;
    env.hole_half_width = env.peg_half_width + c;
    env.validate();
    rows.push_back({"clearance", c, evaluate(nets.actor, nets.normalizer, env, episodes, seed)});
  }
  for (double o : offsets) {
    InsertionEnvConfig env = base;
    env.hole_center_offset = o;
    env.validate();
    rows.push_back({"offset", o, evaluate(nets.actor, nets.normalizer, env, episodes, seed)});
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  const auto flags = out.flags();
  out << "kind,value_m,success_rate,mean_return,mean_steps,episodes\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.kind << ',' << r.value << ',' << r.metrics.success_rate << ',' << r.metrics.mean_return << ','
        << r.metrics.mean_steps << ',' << r.metrics.episodes << '\n';
  }
  out.flags(flags);
}

RunSummary run_single(const ExperimentSpec& spec, Algorithm algorithm, std::uint64_t seed,
                      const fs::path& dir) {
  fs::create_directories(dir);
  TrainConfig config = spec.train;
  config.algorithm = algorithm;
  config.seed = seed;

  RunSummary summary;
  summary.algorithm = algorithm;
  summary.seed = seed;
  {
    auto out = open_out(dir / "config.txt");
    write_train_config(out, config);
  }
  try {
    const TrainResult result = train(config);
    const auto& log = result.log;
    {
      auto out = open_out(dir / "episodes.csv");
      write_episode_csv(out, log);
    }
    {
      auto out = open_out(dir / "evals.csv");
      write_eval_csv(out, log);
    }
    {
      auto out = open_out(dir / "duals.csv");
      write_dual_csv(out, log);
    }
    {
      auto out = open_out(dir / "subiters.csv");
      write_subiter_csv(out, log);
    }
    {
      auto out = open_out(dir / "agent.bin");
      save_agent(out, result.nets);
    }
    {
      auto out = open_out(dir / "best.bin");
      save_agent(out, result.best_nets);
    }
    summary.rollouts_to_threshold = log.rollouts_to_threshold;
    summary.total_rollouts = log.total_rollouts();
    summary.total_steps = log.total_steps;
    summary.wall_seconds = log.wall_seconds;
    summary.warnings = log.warnings.size();
    summary.audit = audit(config, result);
    summary.final_eval =
        evaluate(result.nets.actor, result.nets.normalizer, config.env, spec.eval_episodes, spec.eval_seed);
    summary.best_rollout = result.best_rollout;
    summary.best_eval = evaluate(result.best_nets.actor, result.best_nets.normalizer, config.env,
                                 spec.eval_episodes, spec.eval_seed);
    // Adaptability is measured on the retained checkpoint, chosen on the training environment only.
    if (!spec.sweep_clearances.empty() || !spec.sweep_offsets.empty()) {
      summary.sweep = sweep(result.best_nets, config.env, spec.sweep_clearances, spec.sweep_offsets,
                            spec.eval_episodes, spec.eval_seed);
      auto out = open_out(dir / "sweep.csv");
      write_sweep_csv(out, summary.sweep);
    }
  } catch (const NumericalError& e) {
    summary.ok = false;
    summary.error = e.what();
  }
  auto out = open_out(dir / "summary.json");
  out << summary_json(summary).dump(2) << '\n';
  return summary;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  // Also keeps infinite order statistics (unreached runs) from producing inf - inf or 0 * inf.
  if (frac == 0.0 || values[hi] == values[lo]) return values[lo];
  if (std::isinf(values[hi])) return values[hi];
  return values[lo] + frac * (values[hi] - values[lo]);
}

bool ExperimentResult::all_ok() const {
  for (const auto& a : algorithms) {
    for (const auto& r : a.runs) {
      if (!r.ok) return false;
    }
  }
  return true;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const fs::path& out) {
  spec.validate();
  fs::create_directories(out);
  ExperimentResult result;
  json comparison = json::array();
  auto table = open_out(out / "comparison.csv");
  table << "algorithm,seeds,reached,median_rollouts_to_threshold,q1,q3\n" << std::setprecision(17);

  for (Algorithm algorithm : spec.algorithms) {
    AlgorithmAggregate agg;
    agg.algorithm = algorithm;
    const fs::path algo_dir = out / to_string(algorithm);
    std::vector<std::vector<EvalRecord>> curves;
    for (std::uint64_t seed : spec.seeds) {
      const fs::path dir = algo_dir / ("seed_" + std::to_string(seed));
      agg.runs.push_back(run_single(spec, algorithm, seed, dir));
      // Re-read evaluations from the CSV so the aggregate depends on the files only.
      std::vector<EvalRecord> evals;
      std::ifstream in(dir / "evals.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        EvalRecord e;
        char comma = 0;
        std::istringstream row(line);
        row >> e.rollout >> comma >> e.n_roll >> comma >> e.success_rate >> comma >> e.mean_return >> comma >>
            e.mean_steps;
        evals.push_back(e);
      }
      curves.push_back(std::move(evals));
    }

    std::vector<double> reached, wall;
    for (const auto& r : agg.runs) {
      if (r.rollouts_to_threshold) reached.push_back(static_cast<double>(*r.rollouts_to_threshold));
      wall.push_back(r.wall_seconds);
    }
    agg.reached = static_cast<int>(reached.size());
    // The median over all seeds exists only if more than half reached the threshold.
    if (2 * reached.size() > agg.runs.size()) {
      std::vector<double> all = reached;
      all.resize(agg.runs.size(), std::numeric_limits<double>::infinity());
      agg.median_rollouts = quantile(all, 0.5);
      agg.q1_rollouts = quantile(all, 0.25);
      agg.q3_rollouts = quantile(all, 0.75);
    }
    agg.median_wall_seconds = quantile(wall, 0.5);

    std::set<long> grid;
    for (const auto& c : curves) {
      for (const auto& e : c) grid.insert(e.rollout);
    }
    auto curve = open_out(algo_dir / "curve.csv");
    curve << "rollout,median_success,q1_success,q3_success\n" << std::setprecision(17);
    for (long r : grid) {
      std::vector<double> v;
      for (const auto& c : curves) v.push_back(success_at(c, r));
      curve << r << ',' << quantile(v, 0.5) << ',' << quantile(v, 0.25) << ',' << quantile(v, 0.75) << '\n';
    }

    table << to_string(algorithm) << ',' << agg.runs.size() << ',' << agg.reached << ',';
    if (agg.median_rollouts) {
      table << *agg.median_rollouts << ',' << agg.q1_rollouts << ',' << agg.q3_rollouts;
    } else {
      table << "nan,nan,nan";
    }
    table << '\n';

    json runs = json::array();
    for (const auto& r : agg.runs) runs.push_back(summary_json(r));
    json entry = {{"algorithm", to_string(algorithm)},
                  {"seeds", agg.runs.size()},
                  {"reached", agg.reached},
                  {"median_wall_seconds", agg.median_wall_seconds},
                  {"runs", runs}};
    entry["median_rollouts_to_threshold"] = agg.median_rollouts ? json(*agg.median_rollouts) : json(nullptr);
    comparison.push_back(entry);
    result.algorithms.push_back(std::move(agg));
  }
  auto js = open_out(out / "comparison.json");
  js << json{{"experiment", spec.name}, {"algorithms", comparison}}.dump(2) << '\n';
  return result;
}

}  // namespace gddpg
