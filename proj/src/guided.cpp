#include "gddpg/guided.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <ostream>
#include <optional>
#include <sstream>

namespace gddpg {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{seed, tag, std::uint64_t{0x5851f42d4c957f2dull}};
  return std::mt19937_64(seq);
}

Vec2 clip_unit(const VectorXd& u) { return Vec2(u(0), u(1)).cwiseMax(-1.0).cwiseMin(1.0); }

class Fnv1a {
 public:
  void add(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 1099511628211ull;
    }
  }
  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = m(i);
      add(&v, sizeof v);
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 14695981039346656037ull;
};

void push_r2(TrainState& state, const TrainConfig& config, const Transition& tr, Phase source) {
  if (config.record_push_journal) state.r2_journal.push_back({digest(tr), source});
  state.r2.push(tr);
  switch (source) {
    case Phase::trajopt_sample:
      ++state.r2_pushed_by_trajopt;
      break;
    case Phase::supervisor:
      ++state.r2_pushed_by_supervisor;
      break;
    case Phase::ddpg:
      ++state.r2_pushed_by_ddpg;
      break;
  }
}

void push_r1(TrainState& state, const TrainConfig& config, const SupervisionSample& s) {
  if (config.record_push_journal) state.r1_journal.push_back({digest(s), Phase::supervisor});
  state.r1.push(s);
  ++state.r1_pushed_by_supervisor;
}

// A full-horizon rollout. `transitions` stops at the first terminal step;
// the normalized states/actions keep going so that every rollout of a
// sub-iteration has the same length for the dynamics fit.
struct Rollout {
  std::vector<Transition> transitions;
  MatrixXd states;   // normalized, n x (T + 1)
  MatrixXd actions;  // normalized and clipped, m x T
  double total_cost = 0.0;  // full horizon
  double episode_return = 0.0;
  bool success = false;
};

template <typename Controller>
Rollout run_rollout(const InsertionEnvConfig& env, const Normalizer& norm, EnvState s,
                    Controller&& controller, bool full_horizon) {
  Rollout r;
  const int T = env.horizon;
  r.states.resize(kStateDim, T + 1);
  r.actions.resize(kActionDim, T);
  bool ended = false;
  for (int t = 0; t < T; ++t) {
    const Vec6 z = norm.state(s.flatten());
    r.states.col(t) = z;
    const Vec2 u = clip_unit(controller(t, VectorXd(z)));
    r.actions.col(t) = u;
    const StepResult step = env_step(env, s, norm.unaction(u));
    r.total_cost -= step.transition.reward;
    if (!ended) {
      r.transitions.push_back(step.transition);
      r.episode_return += step.transition.reward;
      if (step.transition.done) {
        ended = true;
        r.success = step.success;
      }
    }
    s = step.next;
    if (ended && !full_horizon) {
      r.states.conservativeResize(Eigen::NoChange, t + 2);
      r.actions.conservativeResize(Eigen::NoChange, t + 1);
      r.states.col(t + 1) = norm.state(s.flatten());
      return r;
    }
  }
  r.states.col(T) = norm.state(s.flatten());
  return r;
}

void record_episode(TrainState& state, TrainingLog& log, int epoch, Phase phase, double w_to,
                    const Rollout& r, long n_roll) {
  ++state.rollouts;
  EpisodeRecord rec;
  rec.rollout = state.rollouts;
  rec.n_roll = n_roll;
  rec.epoch = epoch;
  rec.phase = phase;
  rec.w_to = w_to;
  rec.episode_return = r.episode_return;
  rec.success = r.success;
  rec.steps = static_cast<int>(r.transitions.size());
  log.episodes.push_back(rec);
  log.total_steps += rec.steps;
}

MatrixXd empirical_cov(const MatrixXd& columns) {
  const VectorXd mean = columns.rowwise().mean();
  const MatrixXd c = columns.colwise() - mean;
  return c * c.transpose() / static_cast<double>(std::max<Eigen::Index>(1, columns.cols() - 1));
}

void write_double(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
  } else {
    out << v;
  }
}

}  // namespace

std::string to_string(Algorithm algorithm) {
  return algorithm == Algorithm::guided_ddpg ? "guided_ddpg" : "pure_ddpg";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "guided_ddpg") return Algorithm::guided_ddpg;
  if (name == "pure_ddpg") return Algorithm::pure_ddpg;
  throw ConfigError("unknown algorithm '" + name + "' (expected guided_ddpg or pure_ddpg)");
}

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::trajopt_sample:
      return "trajopt";
    case Phase::supervisor:
      return "supervisor";
    case Phase::ddpg:
      return "ddpg";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("train: ") + what);
  };
  require(epochs >= 0, "epochs must be >= 0");
  require(n_ddpg >= 0 && n_inc >= 0, "n_ddpg and n_inc must be >= 0");
  require(n_trajopt >= 0, "n_trajopt must be >= 0");
  require(r1_capacity >= 1 && r2_capacity >= 1, "buffer capacities must be positive");
  require(!fixed_supervision_weight || *fixed_supervision_weight >= 0.0,
          "fixed_w_to must be non-negative");
  require(trajopt.samples_per_subiter >= 2, "trajopt.samples_per_subiter must be >= 2");
  require(trajopt.prior_noise_std > 0.0, "trajopt.prior_noise_std must be positive");
  require(trajopt.initial_epsilon > 0.0 && trajopt.initial_eta > 0.0,
          "trajopt initial epsilon/eta must be positive");
  require(trajopt.position_smoothing > 0.0 && trajopt.action_smoothing > 0.0,
          "trajopt smoothing must be positive");
  require(trajopt.fit.ridge >= 0.0 && trajopt.fit.noise_floor >= 0.0 && trajopt.fit.window >= 0,
          "trajopt fit options must be non-negative");
  require(trajopt.dual.max_iterations >= 1 && trajopt.dual.eta_factor > 1.0,
          "trajopt dual: max_iterations >= 1 and eta_factor > 1");
  require(eval_interval >= 0, "eval.interval must be >= 0");
  require(eval_episodes >= 1, "eval.episodes must be >= 1");
  require(success_threshold > 0.0 && success_threshold <= 1.0, "success_threshold in (0, 1]");
  require(max_rollouts >= 0 && rollouts_after_threshold >= 0, "rollout limits must be >= 0");
  hyper.validate();
  env.validate();
}

TrainConfig load_train_config(const KeyValueConfig& kv) {
  TrainConfig c;
  c.algorithm = algorithm_from_string(kv.get_string("algorithm", to_string(c.algorithm)));
  c.epochs = kv.get_int("train.epochs", c.epochs);
  c.n_ddpg = kv.get_int("train.n_ddpg", c.n_ddpg);
  c.n_inc = kv.get_int("train.n_inc", c.n_inc);
  c.n_trajopt = kv.get_int("train.n_trajopt", c.n_trajopt);
  c.r1_capacity = static_cast<std::size_t>(kv.get_long("train.r1_capacity", static_cast<long>(c.r1_capacity)));
  c.r2_capacity = static_cast<std::size_t>(kv.get_long("train.r2_capacity", static_cast<long>(c.r2_capacity)));
  if (kv.contains("train.fixed_w_to")) c.fixed_supervision_weight = kv.get_double("train.fixed_w_to", 0.0);
  c.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(c.seed)));
  c.eval_interval = kv.get_int("eval.interval", c.eval_interval);
  c.eval_episodes = kv.get_int("eval.episodes", c.eval_episodes);
  c.eval_seed = static_cast<std::uint64_t>(kv.get_long("eval.seed", static_cast<long>(c.eval_seed)));
  c.success_threshold = kv.get_double("eval.success_threshold", c.success_threshold);
  c.stop_at_threshold = kv.get_bool("train.stop_at_threshold", c.stop_at_threshold);
  c.rollouts_after_threshold = kv.get_long("train.rollouts_after_threshold", c.rollouts_after_threshold);
  c.max_rollouts = kv.get_long("train.max_rollouts", c.max_rollouts);
  c.record_push_journal = kv.get_bool("train.record_push_journal", c.record_push_journal);

  auto& t = c.trajopt;
  t.samples_per_subiter = kv.get_int("trajopt.samples_per_subiter", t.samples_per_subiter);
  t.prior_noise_std = kv.get_double("trajopt.prior_noise_std", t.prior_noise_std);
  t.initial_epsilon = kv.get_double("trajopt.initial_epsilon", t.initial_epsilon);
  t.initial_eta = kv.get_double("trajopt.initial_eta", t.initial_eta);
  t.position_smoothing = kv.get_double("trajopt.position_smoothing", t.position_smoothing);
  t.action_smoothing = kv.get_double("trajopt.action_smoothing", t.action_smoothing);
  t.initial_state_reg = kv.get_double("trajopt.initial_state_reg", t.initial_state_reg);
  t.fit.ridge = kv.get_double("trajopt.ridge", t.fit.ridge);
  t.fit.noise_floor = kv.get_double("trajopt.noise_floor", t.fit.noise_floor);
  t.fit.window = kv.get_int("trajopt.fit_window", t.fit.window);
  t.dual.eta_min = kv.get_double("trajopt.eta_min", t.dual.eta_min);
  t.dual.eta_max = kv.get_double("trajopt.eta_max", t.dual.eta_max);
  t.dual.eta_factor = kv.get_double("trajopt.eta_factor", t.dual.eta_factor);
  t.dual.epsilon_min = kv.get_double("trajopt.epsilon_min", t.dual.epsilon_min);
  t.dual.epsilon_max = kv.get_double("trajopt.epsilon_max", t.dual.epsilon_max);
  t.dual.max_iterations = kv.get_int("trajopt.max_dual_iterations", t.dual.max_iterations);

  c.hyper = load_ddpg_hyper(kv, "ddpg.");
  c.env = load_env_config(kv, "env.");
  c.validate();
  return c;
}

void write_train_config(std::ostream& out, const TrainConfig& c) {
  const auto flags = out.flags();
  out << std::setprecision(17);
  out << "algorithm = " << to_string(c.algorithm) << "\n"
      << "seed = " << c.seed << "\n"
      << "train.epochs = " << c.epochs << "\n"
      << "train.n_ddpg = " << c.n_ddpg << "\n"
      << "train.n_inc = " << c.n_inc << "\n"
      << "train.n_trajopt = " << c.n_trajopt << "\n"
      << "train.r1_capacity = " << c.r1_capacity << "\n"
      << "train.r2_capacity = " << c.r2_capacity << "\n";
  if (c.fixed_supervision_weight) out << "train.fixed_w_to = " << *c.fixed_supervision_weight << "\n";
  out << "train.stop_at_threshold = " << (c.stop_at_threshold ? "true" : "false") << "\n"
      << "train.rollouts_after_threshold = " << c.rollouts_after_threshold << "\n"
      << "train.max_rollouts = " << c.max_rollouts << "\n"
      << "train.record_push_journal = " << (c.record_push_journal ? "true" : "false") << "\n"
      << "eval.interval = " << c.eval_interval << "\n"
      << "eval.episodes = " << c.eval_episodes << "\n"
      << "eval.seed = " << c.eval_seed << "\n"
      << "eval.success_threshold = " << c.success_threshold << "\n";
  const auto& t = c.trajopt;
  out << "trajopt.samples_per_subiter = " << t.samples_per_subiter << "\n"
      << "trajopt.prior_noise_std = " << t.prior_noise_std << "\n"
      << "trajopt.initial_epsilon = " << t.initial_epsilon << "\n"
      << "trajopt.initial_eta = " << t.initial_eta << "\n"
      << "trajopt.position_smoothing = " << t.position_smoothing << "\n"
      << "trajopt.action_smoothing = " << t.action_smoothing << "\n"
      << "trajopt.initial_state_reg = " << t.initial_state_reg << "\n"
      << "trajopt.ridge = " << t.fit.ridge << "\n"
      << "trajopt.noise_floor = " << t.fit.noise_floor << "\n"
      << "trajopt.fit_window = " << t.fit.window << "\n"
      << "trajopt.eta_min = " << t.dual.eta_min << "\n"
      << "trajopt.eta_max = " << t.dual.eta_max << "\n"
      << "trajopt.eta_factor = " << t.dual.eta_factor << "\n"
      << "trajopt.epsilon_min = " << t.dual.epsilon_min << "\n"
      << "trajopt.epsilon_max = " << t.dual.epsilon_max << "\n"
      << "trajopt.max_dual_iterations = " << t.dual.max_iterations << "\n";
  out.flags(flags);
  write_ddpg_hyper(out, c.hyper, "ddpg.");
  write_env_config(out, c.env, "env.");
}

EvalMetrics evaluate(const Mlp& policy, const Normalizer& normalizer, const InsertionEnvConfig& env,
                     int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw PreconditionError("evaluate: need at least one episode");
  if (policy.input_size() != kStateDim || policy.output_size() != kActionDim) {
    throw InputError("evaluate: policy dimensions do not match the environment");
  }
  EvalMetrics m;
  m.episodes = n_episodes;
  int successes = 0;
  for (int i = 0; i < n_episodes; ++i) {
    EnvState s = env_reset(env, seed + static_cast<std::uint64_t>(i));
    double ret = 0.0;
    int steps = 0;
    bool ok = false;
    for (int t = 0; t < env.horizon; ++t) {
      const VectorXd z = normalizer.state(s.flatten());
      const VectorXd u = mlp_forward(policy, z);
      const StepResult step = env_step(env, s, normalizer.unaction(Vec2(u(0), u(1))));
      ret += step.transition.reward;
      ++steps;
      s = step.next;
      if (step.transition.done) {
        ok = step.success;
        break;
      }
    }
    successes += ok ? 1 : 0;
    m.mean_return += ret;
    m.mean_steps += steps;
  }
  m.success_rate = static_cast<double>(successes) / n_episodes;
  m.mean_return /= n_episodes;
  m.mean_steps /= n_episodes;
  return m;
}

std::uint64_t digest(const Transition& t) {
  Fnv1a h;
  h.add(t.state);
  h.add(t.action);
  h.add(t.next_state);
  h.add(&t.reward, sizeof t.reward);
  const unsigned char flags = (t.done ? 1 : 0) | (t.terminal ? 2 : 0);
  h.add(&flags, 1);
  return h.value();
}

std::uint64_t digest(const SupervisionSample& s) {
  Fnv1a h;
  h.add(s.state);
  h.add(s.action);
  h.add(&s.q_to, sizeof s.q_to);
  return h.value();
}

TrainRngs TrainRngs::from_seed(std::uint64_t seed) {
  return TrainRngs{stream(seed, 1), stream(seed, 2), stream(seed, 3), stream(seed, 4)};
}

TrainState TrainState::initial(const TrainConfig& config) {
  const auto& h = config.hyper;
  return TrainState(make_agent(h, Normalizer::for_env(config.env), config.seed), config.r1_capacity,
                    config.r2_capacity, TrainRngs::from_seed(config.seed),
                    OrnsteinUhlenbeckNoise(kActionDim, h.noise_theta, h.noise_sigma, h.noise_dt),
                    DualState{config.trajopt.initial_eta, config.trajopt.initial_epsilon, 1.0});
}

bool ddpg_block(TrainState& state, const TrainConfig& config, int epoch, int episodes,
                const std::function<double(long)>& weight, UpdateRule rule, TrainingLog& log,
                const EpisodeCallback& after_episode) {
  const auto& env = config.env;
  const auto& h = config.hyper;
  for (int e = 0; e < episodes; ++e) {
    const long n_roll = state.n_roll;
    const double w_to = weight(n_roll);
    ++state.n_roll;
    EnvState s = env_reset(env, state.rngs.reset);
    state.noise.reset();
    Rollout r;
    for (int t = 0; t < env.horizon; ++t) {
      const VectorXd z = state.nets.normalizer.state(s.flatten());
      const VectorXd u = mlp_forward(state.nets.actor, z) + state.noise.next(state.rngs.noise);
      const StepResult step = env_step(env, s, state.nets.normalizer.unaction(clip_unit(u)));
      push_r2(state, config, step.transition, Phase::ddpg);
      r.transitions.push_back(step.transition);
      r.episode_return += step.transition.reward;

      const auto batch = state.r2.sample(static_cast<std::size_t>(h.batch_ddpg), state.rngs.batch);
      if (rule == UpdateRule::guided) {
        std::vector<SupervisionSample> sup;
        if (w_to > 0.0 && !state.r1.empty()) {
          sup = state.r1.sample(static_cast<std::size_t>(h.batch_supervision), state.rngs.batch);
        }
        const double w = sup.empty() ? 0.0 : w_to;
        state.nets = critic_update(state.nets, batch, sup, w, h);
        state.nets = actor_update(state.nets, batch, sup, w, h);
      } else {
        state.nets = pure_ddpg_critic_update(state.nets, batch, h);
        state.nets = pure_ddpg_actor_update(state.nets, batch, h);
      }
      state.nets = target_update(state.nets, h.target_rate);

      s = step.next;
      if (step.transition.done) {
        r.success = step.success;
        break;
      }
    }
    record_episode(state, log, epoch, Phase::ddpg, w_to, r, n_roll);
    if (after_episode && after_episode()) return true;
  }
  return false;
}

QuadraticCost<double> insertion_cost_model(const InsertionEnvConfig& env, const Normalizer& norm,
                                           const std::vector<VectorXd>& nominal_states,
                                           const std::vector<VectorXd>& nominal_actions,
                                           double position_smoothing, double action_smoothing) {
  if (nominal_states.size() != nominal_actions.size()) {
    throw ShapeError("insertion_cost_model: nominal state/action count mismatch");
  }
  constexpr int n = kStateDim;
  constexpr int m = kActionDim;
  const Vec2 pos_scale = norm.state_scale.head<2>();
  const Vec2 act_scale = norm.action_scale;
  const Vec2 pos_shift = norm.state_shift.head<2>();

  // w * sqrt(|D x - r0|^2 + alpha^2) with x in network units; returns value,
  // gradient and (exact, PSD) Hessian in x.
  auto smoothed_norm = [](const Vec2& r, const Vec2& scale, double w, double alpha, double& value,
                          Vec2& grad, Eigen::Matrix2d& hess) {
    const double f = std::sqrt(r.squaredNorm() + alpha * alpha);
    value = w * f;
    grad = w * scale.cwiseProduct(r) / f;
    const Eigen::Matrix2d inner = Eigen::Matrix2d::Identity() / f - r * r.transpose() / (f * f * f);
    hess = w * scale.asDiagonal() * inner * scale.asDiagonal();
  };

  QuadraticCost<double> model;
  for (std::size_t t = 0; t < nominal_states.size(); ++t) {
    const VectorXd& x = nominal_states[t];
    const VectorXd& u = nominal_actions[t];
    if (x.size() != n || u.size() != m) throw ShapeError("insertion_cost_model: wrong nominal size");
    VectorXd xu(n + m);
    xu << x, u;

    const Vec2 r_pos = pos_shift + pos_scale.cwiseProduct(x.head<2>()) - env.target_point();
    const Vec2 r_act = act_scale.cwiseProduct(u);
    double v_pos = 0.0, v_act = 0.0;
    Vec2 g_pos, g_act;
    Eigen::Matrix2d h_pos, h_act;
    smoothed_norm(r_pos, pos_scale, env.cost_distance_weight, position_smoothing, v_pos, g_pos, h_pos);
    smoothed_norm(r_act, act_scale, env.cost_action_weight, action_smoothing, v_act, g_act, h_act);

    MatrixXd H = MatrixXd::Zero(n + m, n + m);
    VectorXd g = VectorXd::Zero(n + m);
    H.block<2, 2>(0, 0) = h_pos;
    H.block<2, 2>(n, n) = h_act;
    g.head<2>() = g_pos;
    g.segment<2>(n) = g_act;
    // Re-express the local expansion around xu in absolute coordinates.
    model.constant.push_back(v_pos + v_act - g.dot(xu) + 0.5 * xu.dot(H * xu));
    model.gradient.push_back(g - H * xu);
    model.hessian.push_back(H);
  }
  return model;
}

bool semi_supervisor(TrainState& state, const TrainConfig& config, int epoch, TrainingLog& log,
                     const EpisodeCallback& after_episode) {
  const auto& env = config.env;
  const auto& tc = config.trajopt;
  const Normalizer& norm = state.nets.normalizer;
  const int T = env.horizon;
  const MatrixXd prior_cov =
      MatrixXd::Identity(kActionDim, kActionDim) * (tc.prior_noise_std * tc.prior_noise_std);

  EpochRecord& epoch_rec = log.epochs.back();
  std::optional<LinearGaussianPolicy<double>> controller;
  std::optional<std::size_t> pending;  // sub-iteration awaiting its actual improvement
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int it = 0; it < config.n_trajopt; ++it) {
    // Sample from the current guiding controller, or the noisy actor when none exists yet.
    std::vector<MatrixXd> chol;
    if (controller) {
      for (const auto& c : controller->cov) chol.push_back(Eigen::LLT<MatrixXd>(c).matrixL());
    }
    const MatrixXd prior_chol = Eigen::LLT<MatrixXd>(prior_cov).matrixL();
    SampleSet<double> samples;
    double mean_cost = 0.0;
    for (int j = 0; j < tc.samples_per_subiter; ++j) {
      const EnvState s0 = env_reset(env, state.rngs.reset);
      auto policy = [&](int t, const VectorXd& z) -> VectorXd {
        VectorXd xi(kActionDim);
        for (int i = 0; i < kActionDim; ++i) xi(i) = gauss(state.rngs.trajopt);
        if (controller) return controller->mean_action(t, z) + chol[t] * xi;
        return mlp_forward(state.nets.actor, z) + prior_chol * xi;
      };
      Rollout r = run_rollout(env, norm, s0, policy, true);
      for (const auto& tr : r.transitions) push_r2(state, config, tr, Phase::trajopt_sample);
      epoch_rec.r2_pushed += r.transitions.size();
      ++epoch_rec.trajopt_rollouts;
      mean_cost += r.total_cost / tc.samples_per_subiter;
      samples.states.push_back(std::move(r.states));
      samples.actions.push_back(std::move(r.actions));
      record_episode(state, log, epoch, Phase::trajopt_sample, 0.0, r, state.n_roll);
      if (after_episode && after_episode()) return true;
    }

    if (pending) {
      auto& prev = log.subiters[*pending];
      prev.actual_improvement = prev.sample_cost - mean_cost;
      state.dual = update_epsilon(state.dual, prev.expected_improvement, prev.actual_improvement,
                                  tc.dual);
      pending.reset();
    }

    SubiterRecord rec;
    rec.epoch = epoch;
    rec.subiter = it;
    rec.epsilon = state.dual.epsilon;
    rec.sample_cost = mean_cost;
    rec.actual_improvement = kNaN;
    try {
      const auto dyn = fit_dynamics(samples, tc.fit);
      const LinearGaussianPolicy<double> prior =
          controller ? *controller : linearize_policy(state.nets.actor, samples, prior_cov);

      std::vector<VectorXd> nominal_x, nominal_u;
      for (int t = 0; t < T; ++t) {
        VectorXd x = VectorXd::Zero(kStateDim), u = VectorXd::Zero(kActionDim);
        for (int j = 0; j < samples.count(); ++j) {
          x += samples.states[j].col(t);
          u += samples.actions[j].col(t);
        }
        nominal_x.push_back(x / samples.count());
        nominal_u.push_back(u / samples.count());
      }
      const auto cost = insertion_cost_model(env, norm, nominal_x, nominal_u, tc.position_smoothing,
                                             tc.action_smoothing);
      MatrixXd x0(kStateDim, samples.count());
      for (int j = 0; j < samples.count(); ++j) x0.col(j) = samples.states[j].col(0);
      const VectorXd mu0 = x0.rowwise().mean();
      MatrixXd sigma0 = empirical_cov(x0);
      sigma0.diagonal().array() += tc.initial_state_reg;

      auto upd = update_trajectory(dyn, prior, state.dual, cost, mu0, sigma0, tc.dual);
      for (std::size_t k = 0; k < upd.iterations.size(); ++k) {
        log.duals.push_back({epoch, it, static_cast<int>(k), upd.iterations[k].eta, state.dual.epsilon,
                             upd.iterations[k].kl, upd.iterations[k].expected_cost});
      }
      state.dual.eta = upd.dual.eta;
      rec.ok = true;
      rec.status = to_string(upd.status);
      rec.eta = upd.dual.eta;
      rec.achieved_kl = upd.achieved_kl;
      rec.expected_improvement = upd.expected_improvement();
      if (upd.status == TrajectoryStatus::best_feasible) {
        log.warnings.push_back("epoch " + std::to_string(epoch) + " subiter " + std::to_string(it) +
                               ": dual search did not bracket epsilon");
      }
      controller = std::move(upd.policy);
      log.subiters.push_back(rec);
      pending = log.subiters.size() - 1;
    } catch (const std::exception& e) {
      // Fitting or optimization failed: start over from the actor next time.
      rec.ok = false;
      rec.status = e.what();
      log.subiters.push_back(rec);
      log.warnings.push_back("epoch " + std::to_string(epoch) + " subiter " + std::to_string(it) +
                             ": " + e.what());
      controller.reset();
    }
  }

  // Final rollout of the optimized controller's mean.
  const EnvState s0 = env_reset(env, state.rngs.reset);
  Rollout r;
  if (controller) {
    const auto& pol = *controller;
    r = run_rollout(env, norm, s0, [&](int t, const VectorXd& z) { return pol.mean_action(t, z); },
                    false);
    std::vector<double> rewards;
    for (const auto& tr : r.transitions) rewards.push_back(tr.reward);
    const auto q_to = cost_to_go(rewards, config.hyper.discount);
    for (std::size_t t = 0; t < r.transitions.size(); ++t) {
      const auto& tr = r.transitions[t];
      push_r1(state, config, SupervisionSample{tr.state, tr.action, q_to[t]});
      push_r2(state, config, tr, Phase::supervisor);
    }
    epoch_rec.r1_pushed += r.transitions.size();
    epoch_rec.supervision_refreshed = true;
  } else {
    r = run_rollout(env, norm, s0,
                    [&](int, const VectorXd& z) { return VectorXd(mlp_forward(state.nets.actor, z)); },
                    false);
    for (const auto& tr : r.transitions) push_r2(state, config, tr, Phase::supervisor);
    log.warnings.push_back("epoch " + std::to_string(epoch) + ": supervision refresh skipped");
  }
  epoch_rec.r2_pushed += r.transitions.size();
  ++epoch_rec.supervisor_rollouts;
  record_episode(state, log, epoch, Phase::supervisor, 0.0, r, state.n_roll);
  return after_episode && after_episode();
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainState state = TrainState::initial(config);
  TrainingLog log;

  long threshold_at = -1;
  std::optional<EvalMetrics> best;
  std::optional<AgentNets> best_nets;
  long best_rollout = 0;
  auto after_episode = [&]() -> bool {
    if (config.eval_interval > 0 && state.rollouts % config.eval_interval == 0) {
      const auto m = evaluate(state.nets.actor, state.nets.normalizer, config.env, config.eval_episodes,
                              config.eval_seed);
      log.evals.push_back({state.rollouts, state.n_roll, m.success_rate, m.mean_return, m.mean_steps});
      if (!best || m.success_rate > best->success_rate ||
          (m.success_rate == best->success_rate && m.mean_return >= best->mean_return)) {
        best = m;
        best_nets = state.nets;
        best_rollout = state.rollouts;
      }
      if (!log.rollouts_to_threshold && m.success_rate >= config.success_threshold) {
        log.rollouts_to_threshold = state.rollouts;
        threshold_at = state.rollouts;
      }
    }
    if (config.max_rollouts > 0 && state.rollouts >= config.max_rollouts) return true;
    return config.stop_at_threshold && threshold_at >= 0 &&
           state.rollouts >= threshold_at + config.rollouts_after_threshold;
  };

  const double c = config.hyper.decay_c;
  std::function<double(long)> weight;
  if (config.algorithm == Algorithm::pure_ddpg) {
    weight = [](long) { return 0.0; };
  } else if (config.fixed_supervision_weight) {
    const double w = *config.fixed_supervision_weight;
    weight = [w](long) { return w; };
  } else {
    weight = [c](long n) { return supervision_weight(n, c); };
  }
  const UpdateRule rule = config.algorithm == Algorithm::pure_ddpg ? UpdateRule::pure : UpdateRule::guided;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    log.epochs.push_back(EpochRecord{epoch});
    bool stop = false;
    if (config.supervisor_subiters() > 0) stop = semi_supervisor(state, config, epoch, log, after_episode);
    if (!stop) {
      const std::size_t before = state.r2_pushed_by_ddpg;
      const long rollouts_before = state.rollouts;
      stop = ddpg_block(state, config, epoch, config.ddpg_episodes(epoch), weight, rule, log,
                        after_episode);
      log.epochs.back().ddpg_rollouts = static_cast<int>(state.rollouts - rollouts_before);
      log.epochs.back().r2_pushed += state.r2_pushed_by_ddpg - before;
    }
    if (stop) {
      log.stopped_early = true;
      break;
    }
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  AgentNets final_best = best_nets ? std::move(*best_nets) : state.nets;
  return TrainResult{std::move(state.nets),
                     std::move(final_best),
                     best_nets ? best_rollout : state.rollouts,
                     std::move(log),
                     std::move(state.r1),
                     std::move(state.r2),
                     state.r1_pushed_by_supervisor,
                     state.r2_pushed_by_trajopt,
                     state.r2_pushed_by_supervisor,
                     state.r2_pushed_by_ddpg,
                     std::move(state.r1_journal),
                     std::move(state.r2_journal)};
}

std::vector<AuditCheck> audit(const TrainConfig& config, const TrainResult& result) {
  std::vector<AuditCheck> checks;
  auto check = [&](std::string name, bool ok, std::string detail) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  };
  const auto& log = result.log;
  const int spi = config.trajopt.samples_per_subiter;
  const int subiters = config.supervisor_subiters();

  // Rollout accounting per epoch and in total.
  long expected_total = 0;
  bool per_epoch_ok = true;
  std::ostringstream epoch_detail;
  for (std::size_t e = 0; e < log.epochs.size(); ++e) {
    const auto& rec = log.epochs[e];
    const int want_trajopt = subiters * spi;
    const int want_sup = subiters > 0 ? 1 : 0;
    const int want_ddpg = config.ddpg_episodes(static_cast<int>(e));
    expected_total += want_trajopt + want_sup + want_ddpg;
    const bool last_partial = log.stopped_early && e + 1 == log.epochs.size();
    if (!last_partial && (rec.trajopt_rollouts != want_trajopt || rec.supervisor_rollouts != want_sup ||
                          rec.ddpg_rollouts != want_ddpg)) {
      per_epoch_ok = false;
      epoch_detail << "epoch " << e << ": " << rec.trajopt_rollouts << "/" << rec.supervisor_rollouts
                   << "/" << rec.ddpg_rollouts << " vs " << want_trajopt << "/" << want_sup << "/"
                   << want_ddpg << "; ";
    }
  }
  check("epoch rollout counts", per_epoch_ok, epoch_detail.str());
  if (!log.stopped_early) {
    const bool complete = static_cast<long>(log.epochs.size()) == config.epochs;
    check("total rollouts = sum over epochs of N_trajopt*samples + 1 + N_ddpg(epoch)",
          complete && log.total_rollouts() == expected_total,
          std::to_string(log.total_rollouts()) + " vs " + std::to_string(expected_total));
  }

  // Episode index / N_roll bookkeeping and the w_to schedule.
  bool index_ok = true, n_roll_ok = true, weight_ok = true, monotone_ok = true;
  long ddpg_seen = 0;
  double last_w = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log.episodes.size(); ++i) {
    const auto& ep = log.episodes[i];
    if (ep.rollout != static_cast<long>(i) + 1) index_ok = false;
    if (ep.n_roll != ddpg_seen) n_roll_ok = false;
    if (ep.phase == Phase::ddpg) {
      double want = 0.0;
      if (config.algorithm == Algorithm::guided_ddpg) {
        want = config.fixed_supervision_weight ? *config.fixed_supervision_weight
                                               : supervision_weight(ep.n_roll, config.hyper.decay_c);
      }
      if (ep.w_to != want) weight_ok = false;
      if (ep.w_to > last_w) monotone_ok = false;
      last_w = ep.w_to;
      ++ddpg_seen;
    }
  }
  check("rollout indices consecutive", index_ok, "");
  check("N_roll counts DDPG episodes only", n_roll_ok, "");
  check("w_to = c / (N_roll + c) at episode start", weight_ok, "");
  check("w_to non-increasing", monotone_ok, "");

  // Buffer provenance: R1 only from supervisor rollouts, R2 from every step.
  std::size_t steps_trajopt = 0, steps_sup = 0, steps_ddpg = 0, steps_sup_refreshed = 0;
  std::size_t epoch_r1 = 0;
  for (const auto& rec : log.epochs) epoch_r1 += rec.r1_pushed;
  for (const auto& ep : log.episodes) {
    switch (ep.phase) {
      case Phase::trajopt_sample:
        steps_trajopt += ep.steps;
        break;
      case Phase::supervisor:
        steps_sup += ep.steps;
        if (log.epochs.at(ep.epoch).supervision_refreshed) steps_sup_refreshed += ep.steps;
        break;
      case Phase::ddpg:
        steps_ddpg += ep.steps;
        break;
    }
  }
  check("R1 pushes = supervisor rollout steps",
        result.r1_pushed_by_supervisor == steps_sup_refreshed && epoch_r1 == steps_sup_refreshed,
        std::to_string(result.r1_pushed_by_supervisor) + " vs " + std::to_string(steps_sup_refreshed));
  check("R2 pushes = all rollout steps by phase",
        result.r2_pushed_by_trajopt == steps_trajopt && result.r2_pushed_by_supervisor == steps_sup &&
            result.r2_pushed_by_ddpg == steps_ddpg &&
            static_cast<long>(steps_trajopt + steps_sup + steps_ddpg) == log.total_steps,
        "");
  const std::size_t r2_total =
      result.r2_pushed_by_trajopt + result.r2_pushed_by_supervisor + result.r2_pushed_by_ddpg;
  check("R1 size = min(capacity, pushes)",
        result.r1.total_pushed() == result.r1_pushed_by_supervisor &&
            result.r1.size() == std::min(config.r1_capacity, result.r1_pushed_by_supervisor),
        std::to_string(result.r1.size()));
  check("R2 size = min(capacity, pushes)",
        result.r2.total_pushed() == r2_total && result.r2.size() == std::min(config.r2_capacity, r2_total),
        std::to_string(result.r2.size()));

  if (config.record_push_journal) {
    auto fifo_ok = [](const auto& buffer, const std::vector<PushRecord>& journal) {
      if (journal.size() != buffer.total_pushed()) return false;
      const std::size_t first = journal.size() - buffer.size();
      for (std::size_t i = 0; i < buffer.size(); ++i) {
        if (digest(buffer[i]) != journal[first + i].digest) return false;
      }
      return true;
    };
    check("R1 holds the last |R1| pushes in order", fifo_ok(result.r1, result.r1_journal), "");
    check("R2 holds the last |R2| pushes in order", fifo_ok(result.r2, result.r2_journal), "");
    const bool r1_sources = std::all_of(result.r1_journal.begin(), result.r1_journal.end(),
                                        [](const PushRecord& p) { return p.source == Phase::supervisor; });
    check("R1 journal sources are supervisor rollouts", r1_sources, "");
  }
  return checks;
}

void write_episode_csv(std::ostream& out, const TrainingLog& log) {
  const auto flags = out.flags();
  out << "rollout,n_roll,epoch,phase,w_to,return,success,steps\n" << std::setprecision(17);
  for (const auto& e : log.episodes) {
    out << e.rollout << ',' << e.n_roll << ',' << e.epoch << ',' << to_string(e.phase) << ',' << e.w_to
        << ',' << e.episode_return << ',' << (e.success ? 1 : 0) << ',' << e.steps << '\n';
  }
  out.flags(flags);
}

void write_eval_csv(std::ostream& out, const TrainingLog& log) {
  const auto flags = out.flags();
  out << "rollout,n_roll,success_rate,mean_return,mean_steps\n" << std::setprecision(17);
  for (const auto& e : log.evals) {
    out << e.rollout << ',' << e.n_roll << ',' << e.success_rate << ',' << e.mean_return << ','
        << e.mean_steps << '\n';
  }
  out.flags(flags);
}

void write_dual_csv(std::ostream& out, const TrainingLog& log) {
  const auto flags = out.flags();
  out << "epoch,subiter,iteration,eta,epsilon,kl,expected_cost\n" << std::setprecision(17);
  for (const auto& d : log.duals) {
    out << d.epoch << ',' << d.subiter << ',' << d.iteration << ',' << d.eta << ',' << d.epsilon << ',';
    write_double(out, d.kl);
    out << ',';
    write_double(out, d.expected_cost);
    out << '\n';
  }
  out.flags(flags);
}

void write_subiter_csv(std::ostream& out, const TrainingLog& log) {
  const auto flags = out.flags();
  out << "epoch,subiter,ok,status,eta,epsilon,achieved_kl,expected_improvement,actual_improvement,"
         "sample_cost\n"
      << std::setprecision(17);
  for (const auto& s : log.subiters) {
    std::string status = s.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << s.epoch << ',' << s.subiter << ',' << (s.ok ? 1 : 0) << ',' << status << ',' << s.eta << ','
        << s.epsilon << ',' << s.achieved_kl << ',' << s.expected_improvement << ',';
    write_double(out, s.actual_improvement);
    out << ',' << s.sample_cost << '\n';
  }
  out.flags(flags);
}

}  // namespace gddpg
