#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gddpg/errors.hpp"
#include "gddpg/harness.hpp"
#include "json.hpp"

using namespace gddpg;
namespace fs = std::filesystem;

namespace {

const char* kTinySpec = R"(experiment.name = tiny
experiment.algorithms = guided_ddpg, pure_ddpg
experiment.seeds = 3, 4
experiment.eval_episodes = 2
sweep.clearances = 0.0001, 0.0005
sweep.offsets = 0.0011
train.epochs = 1
train.n_ddpg = 3
train.n_inc = 0
train.n_trajopt = 1
trajopt.samples_per_subiter = 3
eval.interval = 2
eval.episodes = 2
env.horizon = 20
ddpg.actor_hidden = 8
ddpg.critic_hidden = 8
ddpg.batch_ddpg = 8
ddpg.batch_supervision = 8
)";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gddpg_test_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GDDPG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("experiment spec parsing") {
  const auto spec = parse_experiment_spec(KeyValueConfig::parse(kTinySpec));
  CHECK(spec.name == "tiny");
  CHECK(spec.algorithms == std::vector<Algorithm>{Algorithm::guided_ddpg, Algorithm::pure_ddpg});
  CHECK(spec.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(spec.sweep_clearances == std::vector<double>{0.0001, 0.0005});
  CHECK(spec.sweep_offsets == std::vector<double>{0.0011});
  CHECK(spec.train.epochs == 1);
  CHECK(spec.train.env.horizon == 20);

  try {
    parse_experiment_spec(KeyValueConfig::parse(std::string(kTinySpec) + "train.epoch = 2\nfoo = 1\n"));
    FAIL("unknown keys accepted");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("train.epoch") != std::string::npos);
    CHECK(what.find("foo") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_experiment_spec(KeyValueConfig::parse("experiment.algorithms = sac\n")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_spec(KeyValueConfig::parse("experiment.seeds = -1\n")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_spec(KeyValueConfig::parse("sweep.clearances = -0.001\n")), ConfigError);
}

TEST_CASE("the benchmark config parses") {
  const auto spec = load_experiment_spec(fs::path(GDDPG_SOURCE_DIR) / "configs" / "benchmark.cfg");
  CHECK(spec.seeds.size() == 5);
  CHECK(spec.algorithms.size() == 2);
  CHECK(spec.train.max_rollouts == 3000);
}

TEST_CASE("quantile") {
  CHECK(quantile({3.0, 1.0, 4.0, 2.0}, 0.5) == 2.5);
  CHECK(quantile({3.0, 1.0, 4.0, 2.0}, 0.25) == 1.75);
  CHECK(quantile({3.0, 1.0, 4.0, 2.0}, 0.75) == 3.25);
  CHECK(quantile({7.0}, 0.3) == 7.0);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(quantile({1.0, 2.0, inf}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0, inf}, 0.75) == inf);
  CHECK(quantile({1.0, inf, inf}, 0.5) == inf);
  CHECK(std::isinf(quantile({1.0, inf, inf, inf}, 0.1)));
  CHECK_THROWS_AS(quantile({}, 0.5), PreconditionError);
}

TEST_CASE("an experiment without epochs writes empty artifacts") {
  auto spec = parse_experiment_spec(KeyValueConfig::parse(kTinySpec));
  spec.train.epochs = 0;
  const auto dir = scratch("empty");
  const auto result = run_experiment(spec, dir);
  REQUIRE(result.algorithms.size() == 2);
  for (const auto& a : result.algorithms) {
    CHECK(a.reached == 0);
    CHECK_FALSE(a.median_rollouts);
    for (const auto& r : a.runs) {
      CHECK(r.ok);
      CHECK(r.total_rollouts == 0);
    }
  }
  CHECK(slurp(dir / "comparison.csv") ==
        "algorithm,seeds,reached,median_rollouts_to_threshold,q1,q3\n"
        "guided_ddpg,2,0,nan,nan,nan\npure_ddpg,2,0,nan,nan,nan\n");
  for (const char* file : {"episodes.csv", "evals.csv", "duals.csv", "subiters.csv", "config.txt", "agent.bin",
                           "best.bin", "sweep.csv", "summary.json"}) {
    INFO(file);
    CHECK(fs::exists(dir / "guided_ddpg" / "seed_3" / file));
  }
  CHECK(slurp(dir / "pure_ddpg" / "curve.csv") == "rollout,median_success,q1_success,q3_success\n");
  // The config snapshot reloads to the same run configuration.
  const auto snapshot = load_train_config(KeyValueConfig::load(dir / "guided_ddpg" / "seed_3" / "config.txt"));
  CHECK(snapshot.seed == 3);
  CHECK(snapshot.env.horizon == 20);
}

TEST_CASE("experiments are reproducible") {
  const auto spec = parse_experiment_spec(KeyValueConfig::parse(kTinySpec));
  const auto a = scratch("repro_a");
  const auto b = scratch("repro_b");
  run_experiment(spec, a);
  run_experiment(spec, b);
  for (const char* rel : {"comparison.csv", "guided_ddpg/curve.csv",
                             "guided_ddpg/seed_4/episodes.csv", "guided_ddpg/seed_4/evals.csv",
                             "guided_ddpg/seed_4/duals.csv", "guided_ddpg/seed_4/subiters.csv",
                             "guided_ddpg/seed_4/agent.bin", "pure_ddpg/seed_3/sweep.csv"}) {
    INFO(rel);
    CHECK(slurp(a / rel) == slurp(b / rel));
  }

  const auto summary = nlohmann::json::parse(slurp(a / "guided_ddpg" / "seed_3" / "summary.json"));
  CHECK(summary["ok"] == true);
  // 3 trajopt samples, 1 supervisor rollout and 3 DDPG episodes.
  CHECK(summary["total_rollouts"] == 7);
  CHECK(summary["sweep"].size() == 3);
  for (const auto& check : summary["audit"]) CHECK(check["passed"] == true);

  // The sweep CSV lists every variant in order.
  std::istringstream rows(slurp(a / "guided_ddpg" / "seed_3" / "sweep.csv"));
  std::string line;
  std::vector<std::string> kinds;
  std::getline(rows, line);
  CHECK(line == "kind,value_m,success_rate,mean_return,mean_steps,episodes");
  while (std::getline(rows, line)) kinds.push_back(line.substr(0, line.find(',')));
  CHECK(kinds == std::vector<std::string>{"clearance", "clearance", "offset"});
}

TEST_CASE("sweep values change only the environment") {
  const auto spec = parse_experiment_spec(KeyValueConfig::parse(kTinySpec));
  const auto nets = TrainState::initial(spec.train).nets;
  const auto rows = sweep(nets, spec.train.env, {spec.train.env.clearance()}, {0.0}, 3, 9);
  const auto base = evaluate(nets.actor, nets.normalizer, spec.train.env, 3, 9);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.metrics.success_rate == base.success_rate);
    CHECK(r.metrics.mean_return == doctest::Approx(base.mean_return).epsilon(1e-12));
  }
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("cli");
  {
    std::ofstream(dir / "tiny.cfg") << kTinySpec;
    std::ofstream(dir / "bad.cfg") << kTinySpec << "no_such_key = 1\n";
  }
  const std::string tiny = (dir / "tiny.cfg").string();
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train --spec " + (dir / "bad.cfg").string() + " --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("eval --spec " + tiny + " --checkpoint " + (dir / "missing.bin").string()) == 5);
  CHECK(run_cli("train --spec " + (dir / "absent.cfg").string() + " --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("train --spec " + tiny + " --out " + (dir / "run").string() + " --seed 5") == 0);
  const auto ckpt = dir / "run" / "guided_ddpg" / "seed_5" / "agent.bin";
  CHECK(fs::exists(ckpt));
  CHECK(!fs::exists(dir / "run" / "pure_ddpg"));
  CHECK(run_cli("eval --spec " + tiny + " --checkpoint " + ckpt.string() + " --episodes 2") == 0);
  CHECK(run_cli("sweep --spec " + tiny + " --checkpoint " + ckpt.string() + " --out " + (dir / "sw").string()) ==
        0);
  CHECK(fs::exists(dir / "sw" / "sweep.csv"));
  {
    std::ofstream(dir / "junk.bin") << "not a checkpoint";
  }
  CHECK(run_cli("eval --spec " + tiny + " --checkpoint " + (dir / "junk.bin").string()) == 5);
}
