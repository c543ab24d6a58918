#include "gddpg/ddpg.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace gddpg {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TransitionBatch {
  MatrixXd states;       // normalized, kStateDim x N
  MatrixXd actions;      // normalized, kActionDim x N
  MatrixXd next_states;  // normalized
  VectorXd rewards;
  VectorXd continues;    // 0 after a terminal step, 1 otherwise
};

TransitionBatch to_batch(const std::vector<Transition>& batch, const Normalizer& norm) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  TransitionBatch b;
  b.states.resize(kStateDim, n);
  b.actions.resize(kActionDim, n);
  b.next_states.resize(kStateDim, n);
  b.rewards.resize(n);
  b.continues.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& tr = batch[j];
    b.states.col(j) = norm.state(tr.state);
    b.actions.col(j) = norm.action(tr.action);
    b.next_states.col(j) = norm.state(tr.next_state);
    b.rewards(j) = tr.reward;
    b.continues(j) = tr.terminal ? 0.0 : 1.0;
  }
  return b;
}

struct SupervisionBatch {
  MatrixXd states;
  MatrixXd actions;
  VectorXd q_to;
};

SupervisionBatch to_batch(const std::vector<SupervisionSample>& batch, const Normalizer& norm) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  SupervisionBatch b;
  b.states.resize(kStateDim, n);
  b.actions.resize(kActionDim, n);
  b.q_to.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    b.states.col(i) = norm.state(batch[i].state);
    b.actions.col(i) = norm.action(batch[i].action);
    b.q_to(i) = batch[i].q_to;
  }
  return b;
}

MatrixXd stack(const MatrixXd& states, const MatrixXd& actions) {
  MatrixXd xu(states.rows() + actions.rows(), states.cols());
  xu.topRows(states.rows()) = states;
  xu.bottomRows(actions.rows()) = actions;
  return xu;
}

VectorXd bootstrap_targets(const TransitionBatch& b, const AgentNets& nets, double discount) {
  const MatrixXd next_actions = mlp_forward(nets.target_actor, b.next_states);
  const MatrixXd next_q = mlp_forward(nets.target_critic, stack(b.next_states, next_actions));
  VectorXd y = b.rewards + discount * b.continues.cwiseProduct(next_q.row(0).transpose());
  if (!y.allFinite()) throw NumericalError("critic_target: non-finite bootstrap target");
  return y;
}

void require_nonempty(const std::vector<Transition>& batch, const char* what) {
  if (batch.empty()) throw PreconditionError(std::string(what) + ": empty DDPG batch");
}

void require_supervision(const std::vector<SupervisionSample>& sup, double w_to, const char* what) {
  if (w_to < 0.0 || !std::isfinite(w_to)) {
    throw ConfigError(std::string(what) + ": w_to must be finite and non-negative");
  }
  if (w_to > 0.0 && sup.empty()) {
    throw PreconditionError(std::string(what) + ": supervision batch required when w_to > 0");
  }
}

}  // namespace

void DdpgHyper::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("ddpg: ") + what);
  };
  require(discount >= 0.0 && discount < 1.0, "discount must lie in [0, 1)");
  require(target_rate > 0.0 && target_rate <= 1.0, "target_rate must lie in (0, 1]");
  require(batch_ddpg >= 1 && batch_supervision >= 1, "batch sizes must be positive");
  require(decay_c > 0.0, "decay_c must be positive");
  require(noise_sigma >= 0.0 && noise_theta >= 0.0 && noise_dt > 0.0, "invalid noise parameters");
  require(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
}

DdpgHyper load_ddpg_hyper(const KeyValueConfig& kv, const std::string& prefix) {
  DdpgHyper h;
  h.discount = kv.get_double(prefix + "discount", h.discount);
  h.target_rate = kv.get_double(prefix + "target_rate", h.target_rate);
  h.batch_ddpg = kv.get_int(prefix + "batch_ddpg", h.batch_ddpg);
  h.batch_supervision = kv.get_int(prefix + "batch_supervision", h.batch_supervision);
  h.decay_c = kv.get_double(prefix + "decay_c", h.decay_c);
  h.noise_sigma = kv.get_double(prefix + "noise_sigma", h.noise_sigma);
  h.noise_theta = kv.get_double(prefix + "noise_theta", h.noise_theta);
  h.noise_dt = kv.get_double(prefix + "noise_dt", h.noise_dt);
  h.actor_lr = kv.get_double(prefix + "actor_lr", h.actor_lr);
  h.critic_lr = kv.get_double(prefix + "critic_lr", h.critic_lr);
  h.actor_hidden = kv.get_ints(prefix + "actor_hidden", h.actor_hidden);
  h.critic_hidden = kv.get_ints(prefix + "critic_hidden", h.critic_hidden);
  h.hidden_activation = activation_from_string(
      kv.get_string(prefix + "hidden_activation", to_string(h.hidden_activation)));
  h.actor_uses_target_critic =
      kv.get_bool(prefix + "actor_uses_target_critic", h.actor_uses_target_critic);
  h.validate();
  return h;
}

void write_ddpg_hyper(std::ostream& out, const DdpgHyper& h, const std::string& prefix) {
  auto list = [](const std::vector<int>& v) {
    std::ostringstream s;
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v[i];
    return s.str();
  };
  const auto flags = out.flags();
  out << std::setprecision(17);
  out << prefix << "discount = " << h.discount << "\n"
      << prefix << "target_rate = " << h.target_rate << "\n"
      << prefix << "batch_ddpg = " << h.batch_ddpg << "\n"
      << prefix << "batch_supervision = " << h.batch_supervision << "\n"
      << prefix << "decay_c = " << h.decay_c << "\n"
      << prefix << "noise_sigma = " << h.noise_sigma << "\n"
      << prefix << "noise_theta = " << h.noise_theta << "\n"
      << prefix << "noise_dt = " << h.noise_dt << "\n"
      << prefix << "actor_lr = " << h.actor_lr << "\n"
      << prefix << "critic_lr = " << h.critic_lr << "\n"
      << prefix << "actor_hidden = " << list(h.actor_hidden) << "\n"
      << prefix << "critic_hidden = " << list(h.critic_hidden) << "\n"
      << prefix << "hidden_activation = " << to_string(h.hidden_activation) << "\n"
      << prefix << "actor_uses_target_critic = " << (h.actor_uses_target_critic ? "true" : "false")
      << "\n";
  out.flags(flags);
}

AgentNets make_agent(const DdpgHyper& hyper, const Normalizer& normalizer, std::uint64_t seed) {
  std::vector<int> actor_sizes = {kStateDim};
  actor_sizes.insert(actor_sizes.end(), hyper.actor_hidden.begin(), hyper.actor_hidden.end());
  actor_sizes.push_back(kActionDim);
  std::vector<int> critic_sizes = {kStateDim + kActionDim};
  critic_sizes.insert(critic_sizes.end(), hyper.critic_hidden.begin(), hyper.critic_hidden.end());
  critic_sizes.push_back(1);

  std::seed_seq seq{seed, std::uint64_t{0x9e3779b97f4a7c15ull}};
  std::array<std::uint64_t, 2> seeds{};
  seq.generate(seeds.begin(), seeds.end());

  AgentNets nets;
  nets.actor = mlp_init<double>(actor_sizes, hyper.hidden_activation, Activation::tanh, seeds[0]);
  nets.critic =
      mlp_init<double>(critic_sizes, hyper.hidden_activation, Activation::identity, seeds[1]);
  nets.target_actor = nets.actor;
  nets.target_critic = nets.critic;
  AdamConfig<double> actor_cfg;
  actor_cfg.learning_rate = hyper.actor_lr;
  AdamConfig<double> critic_cfg;
  critic_cfg.learning_rate = hyper.critic_lr;
  nets.actor_opt = Adam::for_params(nets.actor, actor_cfg);
  nets.critic_opt = Adam::for_params(nets.critic, critic_cfg);
  nets.normalizer = normalizer;
  return nets;
}

Vec2 act(const AgentNets& nets, const Vec6& state) {
  const VectorXd z = nets.normalizer.state(state);
  const VectorXd u = mlp_forward(nets.actor, z);
  return nets.normalizer.unaction(Vec2(u(0), u(1)));
}

VectorXd critic_target(const std::vector<Transition>& batch, const AgentNets& nets, double discount) {
  require_nonempty(batch, "critic_target");
  return bootstrap_targets(to_batch(batch, nets.normalizer), nets, discount);
}

LossGradient critic_loss_gradient(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                                  const std::vector<SupervisionSample>& sup_batch, double w_to,
                                  const DdpgHyper& hyper) {
  require_nonempty(ddpg_batch, "critic_update");
  require_supervision(sup_batch, w_to, "critic_update");
  const auto b = to_batch(ddpg_batch, nets.normalizer);
  const VectorXd y = bootstrap_targets(b, nets, hyper.discount);
  const auto tape = mlp_forward_tape(nets.critic, stack(b.states, b.actions));
  const double n = static_cast<double>(ddpg_batch.size());
  const MatrixXd residual = tape.output() - y.transpose();

  LossGradient out;
  out.loss = residual.squaredNorm() / n;
  out.gradient = mlp_backward(nets.critic, tape, MatrixXd((2.0 / n) * residual)).gradients;

  if (w_to > 0.0) {
    const auto s = to_batch(sup_batch, nets.normalizer);
    const auto sup_tape = mlp_forward_tape(nets.critic, stack(s.states, s.actions));
    const double m = static_cast<double>(sup_batch.size());
    const MatrixXd sup_residual = sup_tape.output() - s.q_to.transpose();
    out.loss += w_to * sup_residual.squaredNorm() / m;
    out.gradient +=
        mlp_backward(nets.critic, sup_tape, MatrixXd((2.0 * w_to / m) * sup_residual)).gradients;
  }
  return out;
}

LossGradient actor_loss_gradient(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                                 const std::vector<SupervisionSample>& sup_batch, double w_to,
                                 const DdpgHyper& hyper) {
  require_nonempty(ddpg_batch, "actor_update");
  require_supervision(sup_batch, w_to, "actor_update");
  const auto b = to_batch(ddpg_batch, nets.normalizer);
  const Mlp& critic = hyper.actor_uses_target_critic ? nets.target_critic : nets.critic;
  const double n = static_cast<double>(ddpg_batch.size());

  const auto actor_tape = mlp_forward_tape(nets.actor, b.states);
  const auto critic_tape = mlp_forward_tape(critic, stack(b.states, actor_tape.output()));
  LossGradient out;
  out.loss = -critic_tape.output().sum() / n;
  const MatrixXd dq = MatrixXd::Constant(1, b.states.cols(), -1.0 / n);
  const auto through_critic = mlp_backward(critic, critic_tape, dq);
  const MatrixXd du = through_critic.input_gradient.bottomRows(kActionDim);
  out.gradient = mlp_backward(nets.actor, actor_tape, du).gradients;

  if (w_to > 0.0) {
    const auto s = to_batch(sup_batch, nets.normalizer);
    const auto sup_tape = mlp_forward_tape(nets.actor, s.states);
    const double m = static_cast<double>(sup_batch.size());
    const MatrixXd diff = sup_tape.output() - s.actions;
    out.loss += w_to * diff.squaredNorm() / m;
    out.gradient += mlp_backward(nets.actor, sup_tape, MatrixXd((2.0 * w_to / m) * diff)).gradients;
  }
  return out;
}

AgentNets critic_update(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                        const std::vector<SupervisionSample>& sup_batch, double w_to,
                        const DdpgHyper& hyper) {
  const auto lg = critic_loss_gradient(nets, ddpg_batch, sup_batch, w_to, hyper);
  if (!std::isfinite(lg.loss)) throw NumericalError("critic_update: non-finite loss");
  AgentNets out = nets;
  std::tie(out.critic, out.critic_opt) = adam_step(nets.critic_opt, nets.critic, lg.gradient);
  return out;
}

AgentNets actor_update(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                       const std::vector<SupervisionSample>& sup_batch, double w_to,
                       const DdpgHyper& hyper) {
  const auto lg = actor_loss_gradient(nets, ddpg_batch, sup_batch, w_to, hyper);
  if (!std::isfinite(lg.loss)) throw NumericalError("actor_update: non-finite loss");
  AgentNets out = nets;
  std::tie(out.actor, out.actor_opt) = adam_step(nets.actor_opt, nets.actor, lg.gradient);
  return out;
}

AgentNets target_update(const AgentNets& nets, double rate) {
  AgentNets out = nets;
  out.target_critic = soft_update(nets.target_critic, nets.critic, rate);
  out.target_actor = soft_update(nets.target_actor, nets.actor, rate);
  return out;
}

AgentNets pure_ddpg_critic_update(const AgentNets& nets, const std::vector<Transition>& batch,
                                  const DdpgHyper& hyper) {
  require_nonempty(batch, "pure_ddpg_critic_update");
  const auto b = to_batch(batch, nets.normalizer);
  const VectorXd y = bootstrap_targets(b, nets, hyper.discount);
  const auto tape = mlp_forward_tape(nets.critic, stack(b.states, b.actions));
  const double n = static_cast<double>(batch.size());
  const MatrixXd residual = tape.output() - y.transpose();
  const double loss = residual.squaredNorm() / n;
  if (!std::isfinite(loss)) throw NumericalError("pure_ddpg_critic_update: non-finite loss");
  const auto grad = mlp_backward(nets.critic, tape, MatrixXd((2.0 / n) * residual)).gradients;
  AgentNets out = nets;
  std::tie(out.critic, out.critic_opt) = adam_step(nets.critic_opt, nets.critic, grad);
  return out;
}

AgentNets pure_ddpg_actor_update(const AgentNets& nets, const std::vector<Transition>& batch,
                                 const DdpgHyper& hyper) {
  require_nonempty(batch, "pure_ddpg_actor_update");
  const auto b = to_batch(batch, nets.normalizer);
  const Mlp& critic = hyper.actor_uses_target_critic ? nets.target_critic : nets.critic;
  const double n = static_cast<double>(batch.size());
  const auto actor_tape = mlp_forward_tape(nets.actor, b.states);
  const auto critic_tape = mlp_forward_tape(critic, stack(b.states, actor_tape.output()));
  const double objective = critic_tape.output().sum() / n;
  if (!std::isfinite(objective)) throw NumericalError("pure_ddpg_actor_update: non-finite objective");
  // Ascent on the objective is descent with gradient -1/N at each critic output.
  const auto through_critic =
      mlp_backward(critic, critic_tape, MatrixXd(MatrixXd::Constant(1, b.states.cols(), -1.0 / n)));
  const auto grad =
      mlp_backward(nets.actor, actor_tape, MatrixXd(through_critic.input_gradient.bottomRows(kActionDim)))
          .gradients;
  AgentNets out = nets;
  std::tie(out.actor, out.actor_opt) = adam_step(nets.actor_opt, nets.actor, grad);
  return out;
}

double supervision_weight(long n_roll, double c) {
  if (n_roll < 0) throw PreconditionError("supervision_weight: N_roll must be non-negative");
  if (!(c > 0.0)) throw ConfigError("supervision_weight: c must be positive");
  return c / (static_cast<double>(n_roll) + c);
}

OrnsteinUhlenbeckNoise::OrnsteinUhlenbeckNoise(int dim, double theta, double sigma, double dt)
    : theta_(theta), sigma_(sigma), dt_(dt), state_(VectorXd::Zero(dim)) {
  if (sigma < 0.0 || theta < 0.0 || !(dt > 0.0)) throw ConfigError("OU noise: invalid parameters");
}

void OrnsteinUhlenbeckNoise::reset() { state_.setZero(); }

VectorXd OrnsteinUhlenbeckNoise::next(std::mt19937_64& rng) {
  if (sigma_ == 0.0) return state_;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double diffusion = sigma_ * std::sqrt(dt_);
  for (Eigen::Index i = 0; i < state_.size(); ++i) {
    state_(i) += -theta_ * state_(i) * dt_ + diffusion * gauss(rng);
  }
  return state_;
}

double OrnsteinUhlenbeckNoise::stationary_std() const {
  const double a = 1.0 - theta_ * dt_;
  return sigma_ * std::sqrt(dt_ / (1.0 - a * a));
}

namespace {
constexpr std::array<char, 8> kAgentMagic = {'G', 'D', 'A', 'G', 'E', 'N', 'T', '1'};
}

void save_agent(std::ostream& out, const AgentNets& nets) {
  out.write(kAgentMagic.data(), kAgentMagic.size());
  auto put = [&](const auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double x = v(i);
      out.write(reinterpret_cast<const char*>(&x), sizeof(double));
    }
  };
  put(nets.normalizer.state_shift);
  put(nets.normalizer.state_scale);
  put(nets.normalizer.action_scale);
  write_mlp(out, nets.actor);
  write_mlp(out, nets.critic);
  write_mlp(out, nets.target_actor);
  write_mlp(out, nets.target_critic);
  if (!out) throw IoError("save_agent: write failed");
}

AgentNets load_agent(std::istream& in, const DdpgHyper& hyper) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kAgentMagic) throw IoError("load_agent: bad magic");
  auto get = [&](auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double x = 0.0;
      in.read(reinterpret_cast<char*>(&x), sizeof(double));
      v(i) = x;
    }
    if (!in) throw IoError("load_agent: truncated normalizer");
  };
  AgentNets nets;
  get(nets.normalizer.state_shift);
  get(nets.normalizer.state_scale);
  get(nets.normalizer.action_scale);
  nets.actor = read_mlp(in);
  nets.critic = read_mlp(in);
  nets.target_actor = read_mlp(in);
  nets.target_critic = read_mlp(in);
  if (nets.actor.input_size() != kStateDim || nets.actor.output_size() != kActionDim ||
      nets.critic.input_size() != kStateDim + kActionDim || nets.critic.output_size() != 1 ||
      !nets.actor.same_shape(nets.target_actor) || !nets.critic.same_shape(nets.target_critic)) {
    throw ShapeError("load_agent: network shapes do not match the insertion task");
  }
  AdamConfig<double> actor_cfg;
  actor_cfg.learning_rate = hyper.actor_lr;
  AdamConfig<double> critic_cfg;
  critic_cfg.learning_rate = hyper.critic_lr;
  nets.actor_opt = Adam::for_params(nets.actor, actor_cfg);
  nets.critic_opt = Adam::for_params(nets.critic, critic_cfg);
  return nets;
}

}  // namespace gddpg
