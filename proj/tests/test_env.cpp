#include <sstream>

#include "doctest.h"
#include "gddpg/env.hpp"
#include "gddpg/errors.hpp"

using namespace gddpg;

namespace {

// A state in the straight part of the hole, away from floor and chamfers.
EnvState in_hole(const InsertionEnvConfig& c, double x) {
  EnvState s;
  s.position = {x, -0.5 * c.hole_depth};
  return s;
}

}  // namespace

TEST_CASE("env_reset") {
  const InsertionEnvConfig c;
  const EnvState a = env_reset(c, 1);
  const EnvState b = env_reset(c, 1);
  CHECK(a.position == b.position);
  CHECK(a.velocity.isZero());
  CHECK(a.contact_force.isZero());
  CHECK(a.step == 0);
  CHECK(a.position.y() == c.start_height);
  CHECK(std::abs(a.position.x()) <= 0.003);
  CHECK(env_reset(c, 2).position != a.position);

  InsertionEnvConfig fixed = c;
  fixed.start_lateral_range = 0.0;
  CHECK(env_reset(fixed, 5).position == fixed.nominal_start());

  // Many seeds stay inside the +/- 3 mm band and cover both sides.
  double lo = 1.0, hi = -1.0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const double x = env_reset(c, seed).position.x();
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(lo >= -0.003);
  CHECK(hi <= 0.003);
  CHECK(lo < -0.0025);
  CHECK(hi > 0.0025);
}

TEST_CASE("free space with zero action keeps the peg at rest") {
  const InsertionEnvConfig c;
  EnvState s;
  s.position = {0.0, 0.004};
  const auto r = env_step(c, s, Vec2::Zero());
  CHECK(r.next.position == s.position);
  CHECK(r.next.velocity.isZero());
  CHECK(r.next.contact_force.isZero());
  CHECK(r.next.step == 1);
}

TEST_CASE("penalty spring against the right wall") {
  const InsertionEnvConfig c;
  const double delta = 2e-5;
  const double x = c.hole_half_width - c.peg_half_width + delta;
  const Vec2 f = contact_force(c, in_hole(c, x).position, Vec2::Zero());
  CHECK(f.x() == doctest::Approx(-c.wall_stiffness * delta).epsilon(1e-12));
  CHECK(f.y() == 0.0);
  // Mirror image on the left wall.
  const Vec2 g = contact_force(c, in_hole(c, -x).position, Vec2::Zero());
  CHECK(g.x() == doctest::Approx(c.wall_stiffness * delta).epsilon(1e-12));
}

TEST_CASE("contact force is continuous and vanishes at zero penetration") {
  const InsertionEnvConfig c;
  const double edge = c.hole_half_width - c.peg_half_width;
  CHECK(contact_force(c, in_hole(c, edge).position, Vec2::Zero()).isZero());
  CHECK(contact_force(c, in_hole(c, edge - 1e-9).position, Vec2::Zero()).isZero());
  double previous = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double depth = 1e-7 * i;
    const double fx = contact_force(c, in_hole(c, edge + depth).position, Vec2::Zero()).x();
    CHECK(std::abs(fx - previous) <= c.wall_stiffness * 1e-7 * (1 + 1e-9));
    previous = fx;
  }
  // The floor pushes up on both bottom corners.
  EnvState bottom;
  bottom.position = {0.0, -c.hole_depth - 1e-5};
  CHECK(contact_force(c, bottom.position, Vec2::Zero()).y() == doctest::Approx(2 * c.wall_stiffness * 1e-5));
}

TEST_CASE("wall damping opposes approach and never pulls") {
  const InsertionEnvConfig c;
  const double edge = c.hole_half_width - c.peg_half_width;
  const Vec2 p = in_hole(c, edge + 1e-6).position;
  const double at_rest = contact_force(c, p, Vec2::Zero()).x();
  CHECK(contact_force(c, p, Vec2(0.01, 0.0)).x() < at_rest);
  // Fast separation would make the spring-damper pull; the force is clipped at zero.
  CHECK(contact_force(c, p, Vec2(-10.0, 0.0)).x() == 0.0);
}

TEST_CASE("semi-implicit Euler under a constant force") {
  const InsertionEnvConfig c;
  EnvState s;
  s.position = {0.0, 1.0};  // far above the hole, no contact
  const Vec2 force(0.0, -1.5);
  const int n = 7;
  double y_closed = s.position.y();
  const double h = c.dt / c.substeps;
  for (int i = 0; i < n; ++i) s = env_step(c, s, force).next;
  CHECK(s.velocity.y() == doctest::Approx(n * c.dt * force.y() / c.mass).epsilon(1e-12));
  // Position: sum over substeps k = 1..N of h * (k h a) = h^2 a N (N + 1) / 2.
  const int N = n * c.substeps;
  y_closed += h * h * (force.y() / c.mass) * N * (N + 1) / 2.0;
  CHECK(s.position.y() == doctest::Approx(y_closed).epsilon(1e-12));
}

TEST_CASE("kinetic energy is conserved in free flight") {
  const InsertionEnvConfig c;
  EnvState s;
  s.position = {0.0, 0.5};
  s.velocity = {0.03, 0.02};
  const double ke = 0.5 * c.mass * s.velocity.squaredNorm();
  for (int i = 0; i < 20; ++i) {
    s = env_step(c, s, Vec2::Zero()).next;
    CHECK(0.5 * c.mass * s.velocity.squaredNorm() == doctest::Approx(ke).epsilon(1e-15));
  }
}

TEST_CASE("free damping decays velocity geometrically") {
  InsertionEnvConfig c;
  c.free_damping = 20.0;
  EnvState s;
  s.position = {0.0, 0.5};
  s.velocity = {0.1, 0.0};
  const double h = c.dt / c.substeps;
  const double per_step = std::pow(1.0 - h * c.free_damping / c.mass, c.substeps);
  s = env_step(c, s, Vec2::Zero()).next;
  CHECK(s.velocity.x() == doctest::Approx(0.1 * per_step).epsilon(1e-14));
}

TEST_CASE("cost") {
  const InsertionEnvConfig c;
  Vec6 s = Vec6::Zero();
  s.head<2>() = c.target_point();
  CHECK(cost(s, Vec2::Zero(), c) == 0.0);
  CHECK(cost(s, Vec2(3.0, 4.0), c) == doctest::Approx(5e-4).epsilon(1e-14));
  s.head<2>() = c.target_point() + Vec2(0.6, 0.8);
  CHECK(cost(s, Vec2::Zero(), c) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("rewards are negative costs of the clipped action and never positive") {
  const InsertionEnvConfig c;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  EnvState s = env_reset(c, 3);
  for (int t = 0; t < c.horizon; ++t) {
    const Vec2 a(u(rng), u(rng));
    const auto r = env_step(c, s, a);
    CHECK(r.transition.action.cwiseAbs().maxCoeff() <= c.action_bound);
    CHECK(r.transition.reward == -cost(s.flatten(), r.transition.action, c));
    CHECK(r.transition.reward <= 0.0);
    CHECK(r.transition.next_state.allFinite());
    s = r.next;
    if (r.transition.done) break;
  }
}

TEST_CASE("success rule") {
  const InsertionEnvConfig c;
  EnvState s;
  s.position = c.target_point();
  CHECK(success(s, c));
  s.position = {0.0, 0.001};
  CHECK_FALSE(success(s, c));
  s.position = c.target_point() + Vec2(0.0, 0.04 * c.hole_depth);
  CHECK(success(s, c));
  s.position = c.target_point() + Vec2(0.0, 0.06 * c.hole_depth);
  CHECK_FALSE(success(s, c));

  InsertionEnvConfig shifted = c;
  shifted.hole_center_offset = 0.0011;
  s.position = shifted.target_point();
  CHECK(success(s, shifted));
  s.position = shifted.nominal_target_point();
  CHECK_FALSE(success(s, shifted));
}

TEST_CASE("done on success or horizon, terminal only on success") {
  InsertionEnvConfig c;
  c.horizon = 3;
  EnvState s;
  s.position = {0.0, 0.5};
  for (int t = 0; t < 3; ++t) {
    const auto r = env_step(c, s, Vec2::Zero());
    CHECK(r.transition.done == (t == 2));
    CHECK_FALSE(r.transition.terminal);
    s = r.next;
  }
  EnvState near;
  near.position = c.target_point() + Vec2(0.0, 1e-4);
  const auto r = env_step(c, near, Vec2::Zero());
  CHECK(r.success);
  CHECK(r.transition.done);
  CHECK(r.transition.terminal);
}

TEST_CASE("a peg pushed straight down slides in and reaches the target") {
  InsertionEnvConfig c;
  c.start_lateral_range = 0.0;
  c.free_damping = 20.0;
  EnvState s = env_reset(c, 0);
  bool reached = false;
  for (int t = 0; t < c.horizon && !reached; ++t) {
    const auto r = env_step(c, s, Vec2(0.0, -2.0));
    reached = r.success;
    s = r.next;
  }
  CHECK(reached);
}

TEST_CASE("the chamfer guides an offset peg into the hole") {
  InsertionEnvConfig c;
  c.start_lateral_range = 0.0;
  c.free_damping = 20.0;
  c.hole_center_offset = 0.0011;
  EnvState s = env_reset(c, 0);
  double deepest = 0.0;
  for (int t = 0; t < c.horizon; ++t) {
    const auto r = env_step(c, s, Vec2(0.0, -2.0));
    s = r.next;
    deepest = std::min(deepest, s.position.y());
    if (r.transition.done) break;
  }
  CHECK(deepest < -0.9 * c.hole_depth);
  CHECK(std::abs(s.position.x() - c.hole_center_offset) <= c.clearance() + 1e-5);
}

TEST_CASE("trajectories are determined by config, seed and actions") {
  const InsertionEnvConfig c;
  auto run = [&]() {
    std::vector<Transition> out;
    EnvState s = env_reset(c, 9);
    for (int t = 0; t < 40; ++t) {
      const auto r = env_step(c, s, Vec2(0.3 * std::sin(t), -1.0));
      out.push_back(r.transition);
      s = r.next;
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("env_step rejects non-finite actions") {
  const InsertionEnvConfig c;
  CHECK_THROWS_AS(env_step(c, EnvState{}, Vec2(std::nan(""), 0.0)), InputError);
  CHECK_THROWS_AS(env_step(c, EnvState{}, Vec2(0.0, INFINITY)), InputError);
}

TEST_CASE("config validation and loading") {
  InsertionEnvConfig c;
  c.hole_half_width = c.peg_half_width - 1e-4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = InsertionEnvConfig{};
  c.dt = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const auto kv = KeyValueConfig::parse("env.clearance = 0.0001\nenv.wall_stiffness = 2e4\n");
  const InsertionEnvConfig loaded = load_env_config(kv);
  CHECK(loaded.clearance() == doctest::Approx(1e-4));
  CHECK(loaded.wall_stiffness == 2e4);

  std::ostringstream out;
  write_env_config(out, loaded);
  const InsertionEnvConfig again = load_env_config(KeyValueConfig::parse(out.str()));
  CHECK(again.hole_half_width == loaded.hole_half_width);
  CHECK(again.wall_stiffness == loaded.wall_stiffness);
}

TEST_CASE("trajectory CSV") {
  const InsertionEnvConfig c;
  std::vector<Transition> rollout;
  EnvState s = env_reset(c, 1);
  for (int t = 0; t < 3; ++t) {
    const auto r = env_step(c, s, Vec2(0.0, -1.0));
    rollout.push_back(r.transition);
    s = r.next;
  }
  std::ostringstream out;
  write_trajectory_csv(out, rollout);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,px,py,vx,vy,fx,fy,ax,ay,reward,done,terminal");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("normalizer round trip") {
  const InsertionEnvConfig c;
  const Normalizer n = Normalizer::for_env(c);
  Vec6 s;
  s << 0.001, -0.003, 0.02, -0.01, 1.5, -0.2;
  CHECK((n.unstate(n.state(s)) - s).cwiseAbs().maxCoeff() < 1e-15);
  Vec6 at_target = Vec6::Zero();
  at_target.head<2>() = c.nominal_target_point();
  CHECK(n.state(at_target).isZero());
  CHECK(n.action(Vec2(c.action_bound, -c.action_bound)) == Vec2(1.0, -1.0));
}
