#include "gddpg/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "gddpg/errors.hpp"

namespace gddpg {
namespace {

// Solid region {p : n_i . p <= b_i for all i}; n_i is the outward normal.
struct HalfPlane {
  Vec2 normal;
  double offset;
};

struct ConvexSolid {
  std::array<HalfPlane, 3> planes;
  int count;
};

// Penetration depth of `p` into `solid` and the direction that expels it.
bool penetration(const ConvexSolid& solid, const Vec2& p, double& depth, Vec2& normal) {
  depth = std::numeric_limits<double>::infinity();
  for (int i = 0; i < solid.count; ++i) {
    const auto& plane = solid.planes[i];
    const double d = plane.offset - plane.normal.dot(p);
    if (d <= 0.0) return false;
    if (d < depth) {
      depth = d;
      normal = plane.normal;
    }
  }
  return true;
}

std::array<ConvexSolid, 3> solids(const InsertionEnvConfig& c) {
  const double cx = c.hole_center_x();
  const double hw = c.hole_half_width;
  const double s = 1.0 / std::sqrt(2.0);
  ConvexSolid right{{HalfPlane{{0.0, 1.0}, 0.0}, HalfPlane{{-1.0, 0.0}, -(cx + hw)},
                     HalfPlane{{-s, s}, -(cx + hw + c.chamfer) * s}},
                    3};
  ConvexSolid left{{HalfPlane{{0.0, 1.0}, 0.0}, HalfPlane{{1.0, 0.0}, cx - hw},
                    HalfPlane{{s, s}, (cx - hw - c.chamfer) * s}},
                   3};
  ConvexSolid floor{{HalfPlane{{0.0, 1.0}, -c.hole_depth}, HalfPlane{}, HalfPlane{}}, 1};
  return {right, left, floor};
}

}  // namespace

void InsertionEnvConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("insertion env: ") + what);
  };
  require(peg_half_width > 0.0, "peg_half_width must be positive");
  require(hole_half_width >= peg_half_width, "hole_half_width must be >= peg_half_width");
  require(hole_depth > 0.0, "hole_depth must be positive");
  require(chamfer >= 0.0, "chamfer must be non-negative");
  require(wall_stiffness > 0.0, "wall_stiffness must be positive");
  require(wall_damping >= 0.0, "wall_damping must be non-negative");
  require(damping_depth > 0.0, "damping_depth must be positive");
  require(mass > 0.0, "mass must be positive");
  require(free_damping >= 0.0, "free_damping must be non-negative");
  require(dt > 0.0, "dt must be positive");
  require(substeps >= 1, "substeps must be >= 1");
  require(horizon >= 1, "horizon must be >= 1");
  require(action_bound > 0.0, "action_bound must be positive");
  require(start_lateral_range >= 0.0, "start_lateral_range must be non-negative");
  require(success_fraction > 0.0, "success_fraction must be positive");
  require(cost_action_weight >= 0.0 && cost_distance_weight >= 0.0, "cost weights must be >= 0");
  require(std::isfinite(hole_center_offset), "hole_center_offset must be finite");
}

InsertionEnvConfig load_env_config(const KeyValueConfig& kv, const std::string& prefix) {
  InsertionEnvConfig c;
  auto d = [&](const char* key, double& field) { field = kv.get_double(prefix + key, field); };
  d("peg_half_width", c.peg_half_width);
  d("hole_half_width", c.hole_half_width);
  if (kv.contains(prefix + "clearance")) {
    c.hole_half_width = c.peg_half_width + kv.get_double(prefix + "clearance", 0.0);
  }
  d("hole_depth", c.hole_depth);
  d("chamfer", c.chamfer);
  d("hole_center_offset", c.hole_center_offset);
  d("wall_stiffness", c.wall_stiffness);
  d("wall_damping", c.wall_damping);
  d("damping_depth", c.damping_depth);
  d("mass", c.mass);
  d("free_damping", c.free_damping);
  d("dt", c.dt);
  c.substeps = kv.get_int(prefix + "substeps", c.substeps);
  c.horizon = kv.get_int(prefix + "horizon", c.horizon);
  d("action_bound", c.action_bound);
  d("start_height", c.start_height);
  d("start_lateral_range", c.start_lateral_range);
  d("success_fraction", c.success_fraction);
  d("cost_action_weight", c.cost_action_weight);
  d("cost_distance_weight", c.cost_distance_weight);
  c.validate();
  return c;
}

void write_env_config(std::ostream& out, const InsertionEnvConfig& c, const std::string& prefix) {
  const auto flags = out.flags();
  out << std::setprecision(17);
  out << prefix << "peg_half_width = " << c.peg_half_width << "\n"
      << prefix << "hole_half_width = " << c.hole_half_width << "\n"
      << prefix << "hole_depth = " << c.hole_depth << "\n"
      << prefix << "chamfer = " << c.chamfer << "\n"
      << prefix << "hole_center_offset = " << c.hole_center_offset << "\n"
      << prefix << "wall_stiffness = " << c.wall_stiffness << "\n"
      << prefix << "wall_damping = " << c.wall_damping << "\n"
      << prefix << "damping_depth = " << c.damping_depth << "\n"
      << prefix << "mass = " << c.mass << "\n"
      << prefix << "free_damping = " << c.free_damping << "\n"
      << prefix << "dt = " << c.dt << "\n"
      << prefix << "substeps = " << c.substeps << "\n"
      << prefix << "horizon = " << c.horizon << "\n"
      << prefix << "action_bound = " << c.action_bound << "\n"
      << prefix << "start_height = " << c.start_height << "\n"
      << prefix << "start_lateral_range = " << c.start_lateral_range << "\n"
      << prefix << "success_fraction = " << c.success_fraction << "\n"
      << prefix << "cost_action_weight = " << c.cost_action_weight << "\n"
      << prefix << "cost_distance_weight = " << c.cost_distance_weight << "\n";
  out.flags(flags);
}

Vec6 EnvState::flatten() const {
  Vec6 s;
  s << position, velocity, contact_force;
  return s;
}

EnvState env_reset(const InsertionEnvConfig& config, std::mt19937_64& rng) {
  EnvState state;
  state.position = config.nominal_start();
  if (config.start_lateral_range > 0.0) {
    std::uniform_real_distribution<double> lateral(-config.start_lateral_range,
                                                   config.start_lateral_range);
    state.position.x() += lateral(rng);
  }
  return state;
}

EnvState env_reset(const InsertionEnvConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return env_reset(config, rng);
}

Vec2 contact_force(const InsertionEnvConfig& config, const Vec2& position, const Vec2& velocity) {
  Vec2 force = Vec2::Zero();
  const std::array<Vec2, 2> corners = {Vec2(position.x() - config.peg_half_width, position.y()),
                                       Vec2(position.x() + config.peg_half_width, position.y())};
  for (const auto& solid : solids(config)) {
    for (const auto& corner : corners) {
      double depth = 0.0;
      Vec2 normal;
      if (!penetration(solid, corner, depth, normal)) continue;
      const double ramp = std::min(1.0, depth / config.damping_depth);
      const double approach = velocity.dot(normal);
      const double magnitude =
          std::max(0.0, config.wall_stiffness * depth - config.wall_damping * approach * ramp);
      force += magnitude * normal;
    }
  }
  return force;
}

StepResult env_step(const InsertionEnvConfig& config, const EnvState& state, const Vec2& action) {
  if (!action.allFinite()) throw InputError("env_step: non-finite action");
  const Vec2 applied = action.cwiseMax(-config.action_bound).cwiseMin(config.action_bound);

  StepResult result;
  result.transition.state = state.flatten();
  result.transition.action = applied;
  result.transition.reward = -cost(result.transition.state, applied, config);

  Vec2 p = state.position;
  Vec2 v = state.velocity;
  const double h = config.dt / config.substeps;
  for (int i = 0; i < config.substeps; ++i) {
    const Vec2 f = contact_force(config, p, v);
    v += h * (applied + f - config.free_damping * v) / config.mass;
    p += h * v;
  }
  if (!p.allFinite() || !v.allFinite()) throw NumericalError("env_step: non-finite state");

  result.next.position = p;
  result.next.velocity = v;
  result.next.contact_force = contact_force(config, p, v);
  result.next.step = state.step + 1;
  result.success = success(result.next, config);
  result.transition.next_state = result.next.flatten();
  result.transition.done = result.success || result.next.step >= config.horizon;
  // Hitting the horizon is a time limit, not a task outcome; the time step is
  // not part of the state, so a value bootstrap is still the right target.
  result.transition.terminal = result.success;
  return result;
}

double cost(const Vec6& state, const Vec2& action, const InsertionEnvConfig& config) {
  const Vec2 position = state.head<2>();
  return config.cost_action_weight * action.norm() +
         config.cost_distance_weight * (position - config.target_point()).norm();
}

bool success(const EnvState& state, const InsertionEnvConfig& config) {
  const bool below_plane = state.position.y() < 0.0;
  const bool inside = std::abs(state.position.x() - config.hole_center_x()) < config.hole_half_width;
  const double distance = (state.position - config.target_point()).norm();
  return below_plane && inside && distance < config.success_tolerance();
}

void write_trajectory_csv(std::ostream& out, const std::vector<Transition>& rollout) {
  const auto flags = out.flags();
  out << "t,px,py,vx,vy,fx,fy,ax,ay,reward,done,terminal\n" << std::setprecision(17);
  for (std::size_t t = 0; t < rollout.size(); ++t) {
    const auto& tr = rollout[t];
    out << t;
    for (int i = 0; i < kStateDim; ++i) out << ',' << tr.state(i);
    out << ',' << tr.action.x() << ',' << tr.action.y() << ',' << tr.reward << ','
        << (tr.done ? 1 : 0) << ',' << (tr.terminal ? 1 : 0) << '\n';
  }
  out.flags(flags);
}

Normalizer Normalizer::for_env(const InsertionEnvConfig& config) {
  Normalizer n;
  const Vec2 target = config.nominal_target_point();
  n.state_shift << target.x(), target.y(), 0.0, 0.0, 0.0, 0.0;
  const double length = 0.01;
  const double speed = 0.1;
  n.state_scale << length, length, speed, speed, config.action_bound, config.action_bound;
  n.action_scale.setConstant(config.action_bound);
  return n;
}

}  // namespace gddpg
