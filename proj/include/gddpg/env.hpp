#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "gddpg/config.hpp"

namespace gddpg {

using Vec2 = Eigen::Vector2d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr int kStateDim = 6;
inline constexpr int kActionDim = 2;

/// Planar peg-in-hole task. The hole plane is y = 0, the nominal hole axis is
/// x = 0 and the hole bottom lies at y = -hole_depth. The hole entrance has
/// 45 degree chamfers of width `chamfer`. The peg is a point mass whose
/// reference point is the middle of its bottom face.
struct InsertionEnvConfig {
  double peg_half_width = 0.005;      // m
  double hole_half_width = 0.0055;    // m
  double hole_depth = 0.02;           // m
  double chamfer = 0.002;             // m
  double hole_center_offset = 0.0;    // m, lateral shift not visible to the policy
  double wall_stiffness = 1.0e4;      // N/m
  double wall_damping = 50.0;         // N s/m
  double damping_depth = 1.0e-4;      // m, penetration over which damping ramps in
  double mass = 1.0;                  // kg
  // Viscous drag on the peg everywhere (an impedance-controlled end effector);
  // zero gives the bare point mass.
  double free_damping = 0.0;          // N s/m
  double dt = 0.01;                   // s
  int substeps = 4;
  int horizon = 100;                  // steps
  double action_bound = 2.0;          // N, per axis
  double start_height = 0.005;        // m above the hole plane
  double start_lateral_range = 0.003; // m, uniform +/- around the nominal axis
  double success_fraction = 0.05;     // success radius as a fraction of hole_depth
  double cost_action_weight = 1.0e-4;
  double cost_distance_weight = 1.0;

  double clearance() const { return hole_half_width - peg_half_width; }
  double hole_center_x() const { return hole_center_offset; }
  /// Hole bottom center, the cost target.
  Vec2 target_point() const { return {hole_center_offset, -hole_depth}; }
  /// Where the policy believes the target is (offset unknown to it).
  Vec2 nominal_target_point() const { return {0.0, -hole_depth}; }
  Vec2 nominal_start() const { return {0.0, start_height}; }
  double success_tolerance() const { return success_fraction * hole_depth; }

  void validate() const;
};

InsertionEnvConfig load_env_config(const KeyValueConfig& kv, const std::string& prefix = "env.");
void write_env_config(std::ostream& out, const InsertionEnvConfig& config,
                      const std::string& prefix = "env.");

struct EnvState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Vec2 contact_force = Vec2::Zero();
  int step = 0;

  Vec6 flatten() const;
};

struct Transition {
  Vec6 state = Vec6::Zero();
  Vec2 action = Vec2::Zero();
  Vec6 next_state = Vec6::Zero();
  double reward = 0.0;
  bool done = false;      // episode ends here (success or horizon)
  bool terminal = false;  // success: nothing follows, so the critic target does not bootstrap

  bool operator==(const Transition&) const = default;
};

EnvState env_reset(const InsertionEnvConfig& config, std::mt19937_64& rng);
EnvState env_reset(const InsertionEnvConfig& config, std::uint64_t seed);

/// Penalty contact force on the peg at the given kinematic state.
Vec2 contact_force(const InsertionEnvConfig& config, const Vec2& position, const Vec2& velocity);

struct StepResult {
  EnvState next;
  Transition transition;
  bool success = false;
};

/// One control interval. The action is clipped to +/- action_bound before
/// it is applied and recorded.
StepResult env_step(const InsertionEnvConfig& config, const EnvState& state, const Vec2& action);

double cost(const Vec6& state, const Vec2& action, const InsertionEnvConfig& config);
bool success(const EnvState& state, const InsertionEnvConfig& config);

/// CSV rows `t,px,py,vx,vy,fx,fy,ax,ay,reward,done,terminal` with a header line.
void write_trajectory_csv(std::ostream& out, const std::vector<Transition>& rollout);

/// Fixed affine map between physical quantities and network coordinates.
struct Normalizer {
  Vec6 state_shift = Vec6::Zero();
  Vec6 state_scale = Vec6::Ones();
  Vec2 action_scale = Vec2::Ones();

  static Normalizer for_env(const InsertionEnvConfig& config);

  Vec6 state(const Vec6& s) const { return (s - state_shift).cwiseQuotient(state_scale); }
  Vec6 unstate(const Vec6& z) const { return state_shift + z.cwiseProduct(state_scale); }
  Vec2 action(const Vec2& a) const { return a.cwiseQuotient(action_scale); }
  Vec2 unaction(const Vec2& u) const { return u.cwiseProduct(action_scale); }
};

}  // namespace gddpg
