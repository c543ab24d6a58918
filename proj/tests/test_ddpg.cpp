#include <sstream>

#include "doctest.h"
#include "gddpg/ddpg.hpp"
#include "oracles.hpp"

using namespace gddpg;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DdpgHyper small_hyper() {
  DdpgHyper h;
  h.actor_hidden = {8, 8};
  h.critic_hidden = {8, 8};
  return h;
}

AgentNets small_agent(std::uint64_t seed) {
  const InsertionEnvConfig env;
  AgentNets nets = make_agent(small_hyper(), Normalizer::for_env(env), seed);
  // Distinct targets so that gradients through the target nets are exercised.
  nets.target_actor = make_agent(small_hyper(), Normalizer::for_env(env), seed + 100).actor;
  nets.target_critic = make_agent(small_hyper(), Normalizer::for_env(env), seed + 100).critic;
  return nets;
}

std::vector<Transition> random_transitions(int n, std::uint64_t seed) {
  const InsertionEnvConfig env;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Transition> out;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.state << 0.004 * u(rng), 0.004 * u(rng), 0.05 * u(rng), 0.05 * u(rng), u(rng), u(rng);
    t.action << 2 * u(rng), 2 * u(rng);
    t.next_state = t.state + 0.1 * t.state.cwiseAbs();
    t.reward = -0.02 * (1 + u(rng));
    t.terminal = i % 3 == 0;
    t.done = t.terminal || i % 3 == 1;
    out.push_back(t);
  }
  return out;
}

std::vector<SupervisionSample> random_supervision(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<SupervisionSample> out;
  for (int i = 0; i < n; ++i) {
    SupervisionSample s;
    s.state << 0.004 * u(rng), 0.004 * u(rng), 0.03 * u(rng), 0.03 * u(rng), u(rng), u(rng);
    s.action << 2 * u(rng), 2 * u(rng);
    s.q_to = -0.5 + 0.2 * u(rng);
    out.push_back(s);
  }
  return out;
}

// Worst relative error between an analytic parameter gradient and central
// differences of `loss` over every entry of `net`.
double worst_fd_error(Mlp& net, const MlpGrad& analytic, const std::function<double()>& loss) {
  double worst = 0.0;
  for (int t = 0; t < net.num_layers(); ++t) {
    auto probe = [&](double& param, double grad) {
      const double saved = param;
      const double fd = oracle::central_difference(
          [&](double v) {
            param = v;
            return loss();
          },
          saved, 1e-6);
      param = saved;
      worst = std::max(worst, oracle::relative_error(grad, fd, 1e-6));
    };
    for (Eigen::Index i = 0; i < net.weights[t].size(); ++i) {
      probe(net.weights[t].data()[i], analytic.weights[t].data()[i]);
    }
    for (Eigen::Index i = 0; i < net.biases[t].size(); ++i) probe(net.biases[t](i), analytic.biases[t](i));
  }
  return worst;
}

// Critic that returns its output bias for every input.
Mlp constant_critic(double value) {
  Mlp net = mlp_init<double>({kStateDim + kActionDim, 1}, Activation::tanh, Activation::identity, 1);
  net.weights[0].setZero();
  net.biases[0](0) = value;
  return net;
}

}  // namespace

TEST_CASE("critic_target") {
  AgentNets nets = small_agent(1);
  nets.target_critic = constant_critic(-2.0);
  Transition t;
  t.reward = -0.3;
  t.done = true;
  t.terminal = true;
  CHECK(critic_target({t}, nets, 0.99)(0) == doctest::Approx(-0.3).epsilon(1e-15));

  t.terminal = false;  // time-out: the bootstrap stays
  CHECK(critic_target({t}, nets, 0.9)(0) == doctest::Approx(-0.3 + 0.9 * -2.0).epsilon(1e-15));

  const auto batch = random_transitions(9, 4);
  const VectorXd y0 = critic_target(batch, small_agent(2), 0.0);
  for (int j = 0; j < 9; ++j) CHECK(y0(j) == batch[j].reward);

  Transition s;
  s.reward = 1.0;
  nets.target_critic = constant_critic(0.7);
  CHECK(critic_target({s}, nets, 0.9)(0) == doctest::Approx(1.0 + 0.9 * 0.7).epsilon(1e-15));

  CHECK_THROWS_AS(critic_target({}, nets, 0.9), PreconditionError);
}

TEST_CASE("critic loss gradient matches finite differences") {
  AgentNets nets = small_agent(3);
  const auto batch = random_transitions(7, 5);
  const auto sup = random_supervision(5, 6);
  const DdpgHyper h = small_hyper();
  for (double w : {0.0, 0.4}) {
    const auto lg = critic_loss_gradient(nets, batch, sup, w, h);
    // Independent loss: targets held fixed, plain loops.
    auto loss = [&]() {
      const VectorXd y = critic_target(batch, nets, h.discount);
      double l = 0.0;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        VectorXd xu(8);
        xu << nets.normalizer.state(batch[j].state), nets.normalizer.action(batch[j].action);
        const double q = mlp_forward(nets.critic, xu)(0);
        l += (y(j) - q) * (y(j) - q) / static_cast<double>(batch.size());
      }
      for (const auto& s : sup) {
        VectorXd xu(8);
        xu << nets.normalizer.state(s.state), nets.normalizer.action(s.action);
        const double q = mlp_forward(nets.critic, xu)(0);
        l += w * (q - s.q_to) * (q - s.q_to) / static_cast<double>(sup.size());
      }
      return l;
    };
    CHECK(lg.loss == doctest::Approx(loss()).epsilon(1e-12));
    CHECK(worst_fd_error(nets.critic, lg.gradient, loss) < 1e-4);
  }
}

TEST_CASE("toy critic Q = w: gradient of the stated loss") {
  AgentNets nets = small_agent(4);
  nets.critic = constant_critic(0.3);
  nets.target_critic = constant_critic(-0.1);
  Transition t;
  t.reward = -0.5;
  SupervisionSample s;
  s.q_to = -0.8;
  const double gamma = 0.9, w_to = 0.25;
  DdpgHyper h = small_hyper();
  h.discount = gamma;
  const auto lg = critic_loss_gradient(nets, {t}, {s}, w_to, h);
  const double y = -0.5 + gamma * -0.1;
  auto L = [&](double w) { return (y - w) * (y - w) + w_to * (w - s.q_to) * (w - s.q_to); };
  const double fd = oracle::central_difference(L, 0.3, 1e-6);
  CHECK(std::abs(lg.gradient.biases[0](0) - fd) < 1e-6);
}

TEST_CASE("critic at its loss minimum stays put") {
  AgentNets nets = small_agent(5);
  const double b = -0.4, gamma = 0.9;
  nets.critic = constant_critic(b);
  nets.target_critic = constant_critic(b);
  nets.critic_opt = Adam::for_params(nets.critic, {});
  DdpgHyper h = small_hyper();
  h.discount = gamma;
  Transition t;
  t.reward = b * (1 - gamma);  // y = r + gamma b = b
  SupervisionSample s;
  s.q_to = b;
  const auto lg = critic_loss_gradient(nets, {t}, {s}, 0.5, h);
  CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-30));
  const AgentNets after = critic_update(nets, {t}, {s}, 0.5, h);
  CHECK(after.critic.biases[0] == nets.critic.biases[0]);
  CHECK(after.critic.weights[0] == nets.critic.weights[0]);
}

TEST_CASE("actor loss gradient matches finite differences") {
  const auto batch = random_transitions(6, 7);
  const auto sup = random_supervision(4, 8);
  for (bool through_target : {true, false}) {
    AgentNets nets = small_agent(6);
    DdpgHyper h = small_hyper();
    h.actor_uses_target_critic = through_target;
    for (double w : {0.0, 0.7}) {
      const auto lg = actor_loss_gradient(nets, batch, sup, w, h);
      const Mlp& critic = through_target ? nets.target_critic : nets.critic;
      auto loss = [&]() {
        double l = 0.0;
        for (const auto& t : batch) {
          const VectorXd z = nets.normalizer.state(t.state);
          VectorXd xu(8);
          xu << z, mlp_forward(nets.actor, z);
          l -= mlp_forward(critic, xu)(0) / static_cast<double>(batch.size());
        }
        for (const auto& s : sup) {
          const VectorXd d = mlp_forward(nets.actor, VectorXd(nets.normalizer.state(s.state))) -
                             VectorXd(nets.normalizer.action(s.action));
          l += w * d.squaredNorm() / static_cast<double>(sup.size());
        }
        return l;
      };
      CHECK(lg.loss == doctest::Approx(loss()).epsilon(1e-12));
      CHECK(worst_fd_error(nets.actor, lg.gradient, loss) < 1e-4);
    }
  }
}

TEST_CASE("toy actor u = theta against a linear critic") {
  AgentNets nets = small_agent(7);
  Mlp actor = mlp_init<double>({kStateDim, kActionDim}, Activation::tanh, Activation::identity, 1);
  actor.weights[0].setZero();
  actor.biases[0] << 0.2, -0.1;
  nets.actor = actor;
  nets.actor_opt = Adam::for_params(actor, {});
  Mlp critic = mlp_init<double>({kStateDim + kActionDim, 1}, Activation::tanh, Activation::identity, 1);
  critic.weights[0].setZero();
  critic.weights[0](0, 6) = 1.5;
  critic.weights[0](0, 7) = -0.5;
  nets.target_critic = critic;
  const auto batch = random_transitions(3, 9);
  const auto lg = actor_loss_gradient(nets, batch, {}, 0.0, small_hyper());
  // L(theta) = -(1.5 theta_x - 0.5 theta_y), so dL/dtheta = (-1.5, 0.5).
  CHECK(lg.gradient.biases[0](0) == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(lg.gradient.biases[0](1) == doctest::Approx(0.5).epsilon(1e-12));
  // Ascent moves theta along the critic's action gradient.
  const AgentNets after = actor_update(nets, batch, {}, 0.0, small_hyper());
  CHECK(after.actor.biases[0](0) > 0.2);
  CHECK(after.actor.biases[0](1) < -0.1);
}

TEST_CASE("heavy supervision drives the actor to the supervised action") {
  AgentNets nets = small_agent(8);
  DdpgHyper h = small_hyper();
  h.actor_lr = 1e-2;
  nets.actor_opt = Adam::for_params(nets.actor, {h.actor_lr});
  SupervisionSample s;
  s.state << 0.001, 0.002, 0.0, 0.0, 0.0, 0.0;
  s.action << 0.8, -1.2;  // N
  const auto batch = random_transitions(4, 10);
  for (int i = 0; i < 800; ++i) nets = actor_update(nets, batch, {s}, 1e4, h);
  CHECK((act(nets, s.state) - s.action).norm() < 1e-3);
}

TEST_CASE("guided updates with w_to = 0 are bitwise the pure DDPG updates") {
  const AgentNets nets = small_agent(9);
  const auto batch = random_transitions(16, 11);
  const auto sup = random_supervision(8, 12);
  const DdpgHyper h = small_hyper();
  const AgentNets gc = critic_update(nets, batch, sup, 0.0, h);
  const AgentNets pc = pure_ddpg_critic_update(nets, batch, h);
  const AgentNets ga = actor_update(gc, batch, sup, 0.0, h);
  const AgentNets pa = pure_ddpg_actor_update(pc, batch, h);
  for (int t = 0; t < nets.critic.num_layers(); ++t) {
    CHECK(gc.critic.weights[t] == pc.critic.weights[t]);
    CHECK(gc.critic.biases[t] == pc.critic.biases[t]);
  }
  for (int t = 0; t < nets.actor.num_layers(); ++t) {
    CHECK(ga.actor.weights[t] == pa.actor.weights[t]);
    CHECK(ga.actor.biases[t] == pa.actor.biases[t]);
  }
}

TEST_CASE("supervision is required when w_to > 0") {
  const AgentNets nets = small_agent(10);
  const auto batch = random_transitions(4, 13);
  CHECK_THROWS_AS(critic_update(nets, batch, {}, 0.5, small_hyper()), PreconditionError);
  CHECK_THROWS_AS(actor_update(nets, batch, {}, 0.5, small_hyper()), PreconditionError);
  CHECK_THROWS_AS(critic_update(nets, {}, {}, 0.0, small_hyper()), PreconditionError);
  CHECK_THROWS_AS(critic_update(nets, batch, {}, -1.0, small_hyper()), ConfigError);
}

TEST_CASE("target networks move only inside the segment towards the source") {
  AgentNets nets = small_agent(11);
  const auto batch = random_transitions(8, 14);
  const auto sup = random_supervision(8, 15);
  const DdpgHyper h = small_hyper();
  for (int i = 0; i < 5; ++i) {
    const AgentNets before = nets;
    nets = critic_update(nets, batch, sup, 0.3, h);
    nets = actor_update(nets, batch, sup, 0.3, h);
    CHECK(nets.target_actor.weights[0] == before.target_actor.weights[0]);
    CHECK(nets.target_critic.weights[1] == before.target_critic.weights[1]);
    const AgentNets updated = target_update(nets, 0.01);
    for (int t = 0; t < nets.critic.num_layers(); ++t) {
      const auto lo = before.target_critic.weights[t].cwiseMin(nets.critic.weights[t]);
      const auto hi = before.target_critic.weights[t].cwiseMax(nets.critic.weights[t]);
      CHECK(((updated.target_critic.weights[t] - lo).array() >= -1e-15).all());
      CHECK(((hi - updated.target_critic.weights[t]).array() >= -1e-15).all());
    }
    nets = updated;
  }
}

TEST_CASE("supervision_weight") {
  CHECK(supervision_weight(0, 5.0) == 1.0);
  CHECK(supervision_weight(999, 1.0) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(supervision_weight(900, 100.0) == doctest::Approx(0.1).epsilon(1e-12));
  double previous = 1.0;
  for (long n = 1; n < 5000; n += 37) {
    const double w = supervision_weight(n, 20.0);
    CHECK(w < previous);
    CHECK(w > 0.0);
    previous = w;
  }
  CHECK(supervision_weight(100000000, 1.0) < 1e-7);
  CHECK_THROWS_AS(supervision_weight(-1, 1.0), PreconditionError);
  CHECK_THROWS_AS(supervision_weight(0, 0.0), ConfigError);
}

TEST_CASE("Ornstein-Uhlenbeck noise") {
  SUBCASE("zero scale") {
    OrnsteinUhlenbeckNoise n(2, 0.15, 0.0, 0.01);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10; ++i) CHECK(n.next(rng).isZero());
  }
  SUBCASE("deterministic and matches the AR(1) recursion") {
    OrnsteinUhlenbeckNoise a(2, 0.15, 0.2, 0.01), b(2, 0.15, 0.2, 0.01);
    std::mt19937_64 ra(5), rb(5), ro(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorXd x = VectorXd::Zero(2);
    for (int i = 0; i < 100; ++i) {
      const VectorXd na = a.next(ra);
      CHECK(na == b.next(rb));
      for (int k = 0; k < 2; ++k) x(k) = (1 - 0.15 * 0.01) * x(k) + 0.2 * std::sqrt(0.01) * gauss(ro);
      CHECK((na - x).cwiseAbs().maxCoeff() < 1e-12);
    }
    // After reset the process restarts from zero.
    a.reset();
    OrnsteinUhlenbeckNoise c(2, 0.15, 0.2, 0.01);
    std::mt19937_64 r1(8), r2(8);
    CHECK(a.next(r1) == c.next(r2));
  }
  SUBCASE("zero mean within the correlated-sample bound") {
    // Faster mean reversion keeps the correlation time short.
    const double theta = 5.0, sigma = 1.0, dt = 0.01;
    OrnsteinUhlenbeckNoise n(1, theta, sigma, dt);
    std::mt19937_64 rng(17);
    const int count = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < count; ++i) {
      const double x = n.next(rng)(0);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / count;
    const double rho = 1 - theta * dt;
    const double sd = n.stationary_std();
    // Variance of the mean of a stationary AR(1) sequence.
    const double se = sd * std::sqrt((1 + rho) / (1 - rho) / count);
    CHECK(std::abs(mean) < 3 * se);
    CHECK(std::sqrt(sq / count) == doctest::Approx(sd).epsilon(0.05));
  }
}

TEST_CASE("agent checkpoint round trip") {
  const AgentNets nets = small_agent(12);
  std::stringstream buf;
  save_agent(buf, nets);
  const AgentNets back = load_agent(buf, small_hyper());
  CHECK(back.actor.weights[1] == nets.actor.weights[1]);
  CHECK(back.target_critic.biases[0] == nets.target_critic.biases[0]);
  CHECK(back.normalizer.state_scale == nets.normalizer.state_scale);
  const Vec6 s = Vec6::Constant(0.001);
  CHECK(act(back, s) == act(nets, s));
  std::stringstream bad("GDAGENT0garbage");
  CHECK_THROWS_AS(load_agent(bad, small_hyper()), IoError);
}

TEST_CASE("hyperparameter config") {
  const auto kv = KeyValueConfig::parse(
      "ddpg.discount = 0.95\nddpg.actor_hidden = 32, 16\nddpg.actor_uses_target_critic = false\n");
  const DdpgHyper h = load_ddpg_hyper(kv);
  CHECK(h.discount == 0.95);
  CHECK(h.actor_hidden == std::vector<int>{32, 16});
  CHECK_FALSE(h.actor_uses_target_critic);
  std::ostringstream out;
  write_ddpg_hyper(out, h);
  const DdpgHyper again = load_ddpg_hyper(KeyValueConfig::parse(out.str()));
  CHECK(again.discount == h.discount);
  CHECK(again.actor_hidden == h.actor_hidden);
  CHECK_THROWS_AS(load_ddpg_hyper(KeyValueConfig::parse("ddpg.discount = 1.0\n")), ConfigError);
  CHECK_THROWS_AS(load_ddpg_hyper(KeyValueConfig::parse("ddpg.target_rate = 0\n")), ConfigError);
}

TEST_CASE("act maps the normalized actor output back to newtons") {
  AgentNets nets = small_agent(13);
  for (auto& w : nets.actor.weights) w.setZero();
  nets.actor.biases.back() << 100.0, -100.0;  // saturates the tanh output
  const Vec2 a = act(nets, Vec6::Zero());
  CHECK(a.x() == doctest::Approx(2.0));
  CHECK(a.y() == doctest::Approx(-2.0));
}
