#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "gddpg/env.hpp"
#include "gddpg/mlp.hpp"
#include "gddpg/replay.hpp"

namespace gddpg {

struct DdpgHyper {
  double discount = 0.99;        // gamma
  double target_rate = 0.001;    // delta in the soft target update
  int batch_ddpg = 64;           // N_dd
  int batch_supervision = 64;    // N_to
  double decay_c = 5.0;          // c in w_to = c / (N_roll + c)
  double noise_sigma = 0.2;      // OU diffusion, normalized action units
  double noise_theta = 0.15;
  double noise_dt = 0.01;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  std::vector<int> actor_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};
  Activation hidden_activation = Activation::tanh;
  // The deterministic policy gradient is taken through the target critic.
  bool actor_uses_target_critic = true;

  void validate() const;
};

DdpgHyper load_ddpg_hyper(const KeyValueConfig& kv, const std::string& prefix = "ddpg.");
void write_ddpg_hyper(std::ostream& out, const DdpgHyper& hyper, const std::string& prefix = "ddpg.");

/// Actor maps normalized state to a normalized action in [-1, 1]; the critic
/// maps normalized (state, action) to a scalar value in reward units.
struct AgentNets {
  Mlp actor;
  Mlp critic;
  Mlp target_actor;
  Mlp target_critic;
  Adam actor_opt;
  Adam critic_opt;
  Normalizer normalizer;
};

AgentNets make_agent(const DdpgHyper& hyper, const Normalizer& normalizer, std::uint64_t seed);

/// Physical action of the (non-target) actor at a physical state.
Vec2 act(const AgentNets& nets, const Vec6& state);

/// y_j = r_j + gamma * Q_target(s'_j, u_target(s'_j)), bootstrap masked on terminal
/// (success) steps. Horizon time-outs keep the bootstrap.
Eigen::VectorXd critic_target(const std::vector<Transition>& batch, const AgentNets& nets,
                              double discount);

/// Loss and gradient of the guided critic objective
/// (1/N_dd) sum (y_j - Q(s_j,a_j))^2 + w_to (1/N_to) sum (Q(s_i,a_i) - Q_i^to)^2.
/// The supervision term is dropped entirely when w_to == 0.
struct LossGradient {
  double loss = 0.0;
  MlpGrad gradient;
};

LossGradient critic_loss_gradient(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                                  const std::vector<SupervisionSample>& sup_batch, double w_to,
                                  const DdpgHyper& hyper);

/// Loss minimized by the actor: -(1/N_dd) sum Q(s_j, u(s_j)) +
/// w_to (1/N_to) sum ||u(s_i) - a_i||^2, gradient through the critic into the actor.
LossGradient actor_loss_gradient(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                                 const std::vector<SupervisionSample>& sup_batch, double w_to,
                                 const DdpgHyper& hyper);

AgentNets critic_update(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                        const std::vector<SupervisionSample>& sup_batch, double w_to,
                        const DdpgHyper& hyper);
AgentNets actor_update(const AgentNets& nets, const std::vector<Transition>& ddpg_batch,
                       const std::vector<SupervisionSample>& sup_batch, double w_to,
                       const DdpgHyper& hyper);
AgentNets target_update(const AgentNets& nets, double rate);

// Textbook DDPG critic/actor steps without any supervision terms. Kept as a
// separate code path so that the guided update at w_to = 0 can be checked
// against it.
AgentNets pure_ddpg_critic_update(const AgentNets& nets, const std::vector<Transition>& batch,
                                  const DdpgHyper& hyper);
AgentNets pure_ddpg_actor_update(const AgentNets& nets, const std::vector<Transition>& batch,
                                 const DdpgHyper& hyper);

/// w_to = c / (N_roll + c).
double supervision_weight(long n_roll, double c);

/// Ornstein-Uhlenbeck process x <- x + theta (0 - x) dt + sigma sqrt(dt) N(0, I),
/// started at zero on reset.
class OrnsteinUhlenbeckNoise {
 public:
  OrnsteinUhlenbeckNoise(int dim, double theta, double sigma, double dt);

  void reset();
  Eigen::VectorXd next(std::mt19937_64& rng);
  double stationary_std() const;

 private:
  double theta_;
  double sigma_;
  double dt_;
  Eigen::VectorXd state_;
};

// Agent checkpoint: the four networks plus the normalizer.
void save_agent(std::ostream& out, const AgentNets& nets);
AgentNets load_agent(std::istream& in, const DdpgHyper& hyper);

}  // namespace gddpg
