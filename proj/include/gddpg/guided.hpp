#pragma once

// Guided-DDPG training loop: semi-supervisor epochs (trajectory optimization
// on fitted local dynamics) alternating with DDPG blocks whose critic and
// actor losses carry a decaying supervision term.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gddpg/ddpg.hpp"
#include "gddpg/env.hpp"
#include "gddpg/replay.hpp"
#include "gddpg/trajopt.hpp"

namespace gddpg {

enum class Algorithm { guided_ddpg, pure_ddpg };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

struct TrajoptConfig {
  int samples_per_subiter = 5;
  double prior_noise_std = 0.3;     // normalized action units, covariance of the linearized actor
  double initial_epsilon = 1.0;
  double initial_eta = 1.0;
  double position_smoothing = 1e-4;  // m, alpha of the smoothed distance norm
  double action_smoothing = 0.2;     // N, same for the action norm
  double initial_state_reg = 1e-6;   // added to the fitted initial covariance
  FitOptions fit;
  DualConfig dual;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::guided_ddpg;
  int epochs = 100;             // EP
  int n_ddpg = 21;              // initial DDPG episodes per epoch
  int n_inc = 15;
  int n_trajopt = 3;            // semi-supervisor sub-iterations per epoch
  std::size_t r1_capacity = 2000;
  std::size_t r2_capacity = 1000000;
  // When set, every DDPG update uses this weight instead of c / (N_roll + c).
  std::optional<double> fixed_supervision_weight;
  DdpgHyper hyper;
  TrajoptConfig trajopt;
  InsertionEnvConfig env;
  std::uint64_t seed = 1;

  int eval_interval = 25;        // total rollouts between evaluations, 0 disables
  int eval_episodes = 20;
  std::uint64_t eval_seed = 1000003;
  double success_threshold = 0.9;
  bool stop_at_threshold = false;
  // Training continues this many rollouts past the first threshold crossing
  // before stopping (only with stop_at_threshold).
  long rollouts_after_threshold = 0;
  long max_rollouts = 0;         // 0 = unlimited
  // Keep a digest of every buffer push so `audit` can verify FIFO contents.
  bool record_push_journal = false;

  void validate() const;
  // Episodes per epoch of the DDPG block: n_ddpg + epoch * n_inc.
  int ddpg_episodes(int epoch) const { return n_ddpg + epoch * n_inc; }
  int supervisor_subiters() const { return algorithm == Algorithm::guided_ddpg ? n_trajopt : 0; }
};

TrainConfig load_train_config(const KeyValueConfig& kv);
void write_train_config(std::ostream& out, const TrainConfig& config);

enum class Phase { trajopt_sample, supervisor, ddpg };
const char* to_string(Phase phase);

struct EpisodeRecord {
  long rollout = 0;      // 1-based count of all episodes so far, this one included
  long n_roll = 0;       // DDPG episodes before this one (N_roll)
  int epoch = 0;
  Phase phase = Phase::ddpg;
  double w_to = 0.0;     // weight in force during the episode, 0 outside DDPG blocks
  double episode_return = 0.0;
  bool success = false;
  int steps = 0;

  bool operator==(const EpisodeRecord&) const = default;
};

struct EvalRecord {
  long rollout = 0;
  long n_roll = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_steps = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

struct DualRecord {
  int epoch = 0;
  int subiter = 0;
  int iteration = 0;
  double eta = 0.0;
  double epsilon = 0.0;
  double kl = 0.0;
  double expected_cost = 0.0;

  bool operator==(const DualRecord&) const = default;
};

/// One semi-supervisor sub-iteration.
struct SubiterRecord {
  int epoch = 0;
  int subiter = 0;
  bool ok = false;
  std::string status;       // trajectory status or failure message
  double eta = 0.0;
  double epsilon = 0.0;     // trust region used for this update
  double achieved_kl = 0.0;
  double expected_improvement = 0.0;
  double actual_improvement = 0.0;  // NaN until the next samples are drawn
  double sample_cost = 0.0;         // mean total cost of the samples this update used

  bool operator==(const SubiterRecord&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  int trajopt_rollouts = 0;
  int supervisor_rollouts = 0;
  int ddpg_rollouts = 0;
  bool supervision_refreshed = false;
  std::size_t r1_pushed = 0;
  std::size_t r2_pushed = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainingLog {
  std::vector<EpisodeRecord> episodes;
  std::vector<EvalRecord> evals;
  std::vector<SubiterRecord> subiters;
  std::vector<DualRecord> duals;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
  std::optional<long> rollouts_to_threshold;
  long total_steps = 0;
  bool stopped_early = false;
  double wall_seconds = 0.0;  // not part of any CSV

  long total_rollouts() const { return episodes.empty() ? 0 : episodes.back().rollout; }
};

struct EvalMetrics {
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_steps = 0.0;
  int episodes = 0;
};

/// Deterministic episodes (no exploration noise) from starts drawn with
/// seeds seed, seed + 1, ...; never touches buffers or parameters.
EvalMetrics evaluate(const Mlp& policy, const Normalizer& normalizer, const InsertionEnvConfig& env,
                     int n_episodes, std::uint64_t seed);

struct PushRecord {
  std::uint64_t digest = 0;
  Phase source = Phase::ddpg;
};

std::uint64_t digest(const Transition& t);
std::uint64_t digest(const SupervisionSample& s);

/// Independent random streams of a training run.
struct TrainRngs {
  std::mt19937_64 reset;
  std::mt19937_64 noise;
  std::mt19937_64 batch;
  std::mt19937_64 trajopt;

  static TrainRngs from_seed(std::uint64_t seed);
};

struct TrainState {
  TrainState(AgentNets nets_, std::size_t r1_capacity, std::size_t r2_capacity, TrainRngs rngs_,
             OrnsteinUhlenbeckNoise noise_, DualState dual_)
      : nets(std::move(nets_)), r1(r1_capacity), r2(r2_capacity), rngs(std::move(rngs_)),
        noise(std::move(noise_)), dual(dual_) {}

  AgentNets nets;
  ReplayBuffer<SupervisionSample> r1;
  ReplayBuffer<Transition> r2;
  TrainRngs rngs;
  OrnsteinUhlenbeckNoise noise;
  DualState dual;
  long n_roll = 0;
  long rollouts = 0;
  std::size_t r1_pushed_by_supervisor = 0;
  std::size_t r2_pushed_by_trajopt = 0;
  std::size_t r2_pushed_by_supervisor = 0;
  std::size_t r2_pushed_by_ddpg = 0;
  std::vector<PushRecord> r1_journal;
  std::vector<PushRecord> r2_journal;

  static TrainState initial(const TrainConfig& config);
};

enum class UpdateRule { guided, pure };

/// Runs `episodes` DDPG episodes. Each step performs one critic update, one
/// actor update and one soft target update, in that order. `weight(n_roll)`
/// gives w_to at the start of each episode. The callback (if any) runs after
/// every episode; returning true stops the block. Returns true if stopped.
using EpisodeCallback = std::function<bool()>;

bool ddpg_block(TrainState& state, const TrainConfig& config, int epoch, int episodes,
                const std::function<double(long)>& weight, UpdateRule rule, TrainingLog& log,
                const EpisodeCallback& after_episode = {});

/// Semi-supervisor: N_trajopt sub-iterations of sampling, fitting and
/// KL-constrained trajectory optimization, then one rollout of the final
/// controller whose (s, a, Q^to) go to R1. Failures are logged and the
/// refresh is skipped; the final rollout then uses the actor and only feeds
/// R2, so rollout counts are unaffected. Returns true if the callback
/// requested a stop.
bool semi_supervisor(TrainState& state, const TrainConfig& config, int epoch, TrainingLog& log,
                     const EpisodeCallback& after_episode = {});

struct TrainResult {
  AgentNets nets;
  // Snapshot at the periodic evaluation with the highest success rate, ties
  // to the higher mean return and then the later one; `nets` before any evaluation.
  AgentNets best_nets;
  long best_rollout = 0;
  TrainingLog log;
  ReplayBuffer<SupervisionSample> r1;
  ReplayBuffer<Transition> r2;
  std::size_t r1_pushed_by_supervisor = 0;
  std::size_t r2_pushed_by_trajopt = 0;
  std::size_t r2_pushed_by_supervisor = 0;
  std::size_t r2_pushed_by_ddpg = 0;
  std::vector<PushRecord> r1_journal;
  std::vector<PushRecord> r2_journal;
};

TrainResult train(const TrainConfig& config);

/// Quadratic model of the insertion cost in the normalized coordinates of
/// `normalizer`, expanded around per-step nominal (state, action) points.
QuadraticCost<double> insertion_cost_model(const InsertionEnvConfig& env, const Normalizer& normalizer,
                                           const std::vector<Eigen::VectorXd>& nominal_states,
                                           const std::vector<Eigen::VectorXd>& nominal_actions,
                                           double position_smoothing, double action_smoothing);

struct AuditCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Post-run consistency checks: rollout accounting, buffer sizes and FIFO
/// contents, R1/R2 provenance, w_to schedule.
std::vector<AuditCheck> audit(const TrainConfig& config, const TrainResult& result);

void write_episode_csv(std::ostream& out, const TrainingLog& log);
void write_eval_csv(std::ostream& out, const TrainingLog& log);
void write_dual_csv(std::ostream& out, const TrainingLog& log);
void write_subiter_csv(std::ostream& out, const TrainingLog& log);

}  // namespace gddpg
