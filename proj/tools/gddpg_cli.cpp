// gddpg: train, evaluate, compare and sweep guided-DDPG / pure-DDPG agents
// on the planar insertion task.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad usage or config,
// 3 bad input data, 4 numerical failure, 5 file I/O.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gddpg/errors.hpp"
#include "gddpg/harness.hpp"

namespace {

using namespace gddpg;

void print_table(const ExperimentResult& result) {
  std::cout << "algorithm       seeds  reached  median_rollouts  iqr                median_wall_s\n";
  for (const auto& a : result.algorithms) {
    char line[256];
    if (a.median_rollouts) {
      std::snprintf(line, sizeof line, "%-15s %5zu  %7d  %15.1f  [%7.1f, %7.1f]  %12.1f\n",
                    to_string(a.algorithm).c_str(), a.runs.size(), a.reached, *a.median_rollouts,
                    a.q1_rollouts, a.q3_rollouts, a.median_wall_seconds);
    } else {
      std::snprintf(line, sizeof line, "%-15s %5zu  %7d  %15s  %-18s  %12.1f\n",
                    to_string(a.algorithm).c_str(), a.runs.size(), a.reached, "not reached", "",
                    a.median_wall_seconds);
    }
    std::cout << line;
  }
}

AgentNets load_checkpoint(const std::string& path, const ExperimentSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return load_agent(in, spec.train.hyper);
}

int run(int argc, char** argv) {
  CLI::App app{"Guided-DDPG insertion experiments"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, checkpoint, algorithm;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;

  auto* train_cmd = app.add_subcommand("train", "Train one algorithm over all seeds of a spec file");
  train_cmd->add_option("--spec", spec_path, "Experiment spec file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_dir, "Artifact directory")->required();
  train_cmd->add_option("--seed", seed, "Train this seed only");
  train_cmd->add_option("--algorithm", algorithm, "guided_ddpg or pure_ddpg (default: first in spec)");

  auto* compare_cmd = app.add_subcommand("compare", "Train guided and pure DDPG over all seeds");
  compare_cmd->add_option("--spec", spec_path, "Experiment spec file")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", out_dir, "Artifact directory")->required();
  compare_cmd->add_option("--seed", seed, "Use this seed only");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the training environment");
  eval_cmd->add_option("--spec", spec_path, "Experiment spec file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", checkpoint, "agent.bin from a training run")->required();
  eval_cmd->add_option("--episodes", episodes, "Evaluation episodes (default: spec)");
  eval_cmd->add_option("--seed", seed, "First evaluation seed (default: spec)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Clearance / hole-offset adaptability of a checkpoint");
  sweep_cmd->add_option("--spec", spec_path, "Experiment spec file")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--checkpoint", checkpoint, "agent.bin from a training run")->required();
  sweep_cmd->add_option("--out", out_dir, "Write sweep.csv here instead of stdout");
  sweep_cmd->add_option("--episodes", episodes, "Evaluation episodes per variant (default: spec)");
  sweep_cmd->add_option("--seed", seed, "First evaluation seed (default: spec)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ExperimentSpec spec = load_experiment_spec(spec_path);

  if (*train_cmd || *compare_cmd) {
    if (seed) spec.seeds = {*seed};
    if (*train_cmd) {
      spec.algorithms = {algorithm.empty() ? spec.algorithms.front() : algorithm_from_string(algorithm)};
    } else {
      spec.algorithms = {Algorithm::guided_ddpg, Algorithm::pure_ddpg};
    }
    const auto result = run_experiment(spec, out_dir);
    print_table(result);
    if (!result.all_ok()) {
      std::cerr << "gddpg: some runs failed numerically; see summary.json files\n";
      return 4;
    }
    return 0;
  }

  const AgentNets nets = load_checkpoint(checkpoint, spec);
  const int n = episodes.value_or(spec.eval_episodes);
  const std::uint64_t first = seed.value_or(spec.eval_seed);
  if (*eval_cmd) {
    const auto m = evaluate(nets.actor, nets.normalizer, spec.train.env, n, first);
    std::cout << "{\"success_rate\": " << m.success_rate << ", \"mean_return\": " << m.mean_return
              << ", \"mean_steps\": " << m.mean_steps << ", \"episodes\": " << m.episodes << "}\n";
    return 0;
  }
  const auto rows = sweep(nets, spec.train.env, spec.sweep_clearances, spec.sweep_offsets, n, first);
  if (out_dir.empty()) {
    write_sweep_csv(std::cout, rows);
  } else {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / "sweep.csv");
    if (!out) throw IoError("cannot write sweep.csv in " + out_dir);
    write_sweep_csv(out, rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "gddpg: config error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "gddpg: input error: " << e.what() << '\n';
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "gddpg: input error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "gddpg: numerical error: " << e.what() << '\n';
    return 4;
  } catch (const IoError& e) {
    std::cerr << "gddpg: io error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "gddpg: error: " << e.what() << '\n';
    return 1;
  }
}
