#pragma once

// Semi-supervisor machinery: time-varying linear-Gaussian dynamics fits,
// actor linearization, KL between linear-Gaussian controllers, and the
// KL-constrained LQG trajectory update with its dual/trust-region heuristics.
//
// All types are templated on the scalar and store per-time-step dense
// matrices. States are n-vectors, actions m-vectors.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gddpg/errors.hpp"
#include "gddpg/mlp.hpp"

namespace gddpg {

/// x_{t+1} ~ N(F_t [x_t; u_t] + f_t, Sigma_t).
template <typename Scalar>
struct LinearGaussianDynamics {
  std::vector<MatrixX<Scalar>> F;
  std::vector<VectorX<Scalar>> f;
  std::vector<MatrixX<Scalar>> noise_cov;
  int state_dim = 0;
  int action_dim = 0;

  int horizon() const { return static_cast<int>(F.size()); }
};

/// u_t ~ N(K_t x_t + k_t, C_t).
template <typename Scalar>
struct LinearGaussianPolicy {
  std::vector<MatrixX<Scalar>> K;
  std::vector<VectorX<Scalar>> k;
  std::vector<MatrixX<Scalar>> cov;

  int horizon() const { return static_cast<int>(K.size()); }
  int action_dim() const { return K.empty() ? 0 : static_cast<int>(K.front().rows()); }
  int state_dim() const { return K.empty() ? 0 : static_cast<int>(K.front().cols()); }

  VectorX<Scalar> mean_action(int t, const VectorX<Scalar>& x) const { return K[t] * x + k[t]; }
};

/// Gaussian state marginals induced by a policy under fitted dynamics.
/// `state_mean`/`state_cov` have T + 1 entries.
template <typename Scalar>
struct TrajectoryDistribution {
  std::vector<VectorX<Scalar>> state_mean;
  std::vector<MatrixX<Scalar>> state_cov;

  int horizon() const { return static_cast<int>(state_mean.size()) - 1; }
};

/// Per-step quadratic cost model in absolute coordinates:
/// l_t(xu) ~ 0.5 xu' H_t xu + g_t' xu + c_t.
template <typename Scalar>
struct QuadraticCost {
  std::vector<MatrixX<Scalar>> hessian;
  std::vector<VectorX<Scalar>> gradient;
  std::vector<Scalar> constant;

  int horizon() const { return static_cast<int>(hessian.size()); }
};

/// Sampled rollouts in the optimizer's coordinates. Rollout i has states
/// n x (T + 1) and actions m x T.
template <typename Scalar>
struct SampleSet {
  std::vector<MatrixX<Scalar>> states;
  std::vector<MatrixX<Scalar>> actions;

  int count() const { return static_cast<int>(states.size()); }
  int horizon() const { return states.empty() ? 0 : static_cast<int>(actions.front().cols()); }
  int state_dim() const { return states.empty() ? 0 : static_cast<int>(states.front().rows()); }
  int action_dim() const { return states.empty() ? 0 : static_cast<int>(actions.front().rows()); }
};

struct DualState {
  double eta = 1.0;
  double epsilon = 1.0;
  double nu = 1.0;
};

struct DualConfig {
  double eta_min = 1e-8;
  double eta_max = 1e16;
  double eta_factor = 10.0;
  double epsilon_min = 1e-4;
  double epsilon_max = 1e4;
  double shrink_ratio = 0.25;
  double grow_ratio = 0.75;
  double shrink_factor = 0.5;
  double grow_factor = 1.5;
  double kl_tolerance = 0.1;  // relative window around epsilon
  int max_iterations = 20;
};

struct FitOptions {
  double ridge = 1e-6;
  double noise_floor = 1e-6;  // added to the residual covariance diagonal
  int window = 0;             // pool time steps t - window .. t + window
};

namespace detail {

template <typename Scalar>
MatrixX<Scalar> symmetrize(const MatrixX<Scalar>& a) {
  return Scalar(0.5) * (a + a.transpose());
}

// Projects a symmetric matrix onto the PSD cone.
template <typename Scalar>
MatrixX<Scalar> clamp_psd(const MatrixX<Scalar>& a) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(symmetrize(a));
  VectorX<Scalar> values = eig.eigenvalues().cwiseMax(Scalar(0));
  return symmetrize<Scalar>(eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose());
}

template <typename Scalar>
Scalar log_det_spd(const MatrixX<Scalar>& a, const char* what) {
  Eigen::LLT<MatrixX<Scalar>> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": covariance not SPD");
  const auto diag = llt.matrixL().toDenseMatrix().diagonal();
  return Scalar(2) * diag.array().log().sum();
}

template <typename Scalar>
MatrixX<Scalar> joint_cov(const MatrixX<Scalar>& state_cov, const LinearGaussianPolicy<Scalar>& p,
                          int t) {
  const auto n = state_cov.rows();
  const auto m = p.K[t].rows();
  MatrixX<Scalar> s(n + m, n + m);
  s.topLeftCorner(n, n) = state_cov;
  s.topRightCorner(n, m) = state_cov * p.K[t].transpose();
  s.bottomLeftCorner(m, n) = p.K[t] * state_cov;
  s.bottomRightCorner(m, m) = p.K[t] * state_cov * p.K[t].transpose() + p.cov[t];
  return symmetrize(s);
}

template <typename Scalar>
VectorX<Scalar> joint_mean(const VectorX<Scalar>& state_mean, const LinearGaussianPolicy<Scalar>& p,
                           int t) {
  VectorX<Scalar> mu(state_mean.size() + p.K[t].rows());
  mu << state_mean, p.mean_action(t, state_mean);
  return mu;
}

}  // namespace detail

/// Per-step ridge regression of x_{t+1} on [x_t; u_t; 1]. The intercept is
/// not penalized; residual covariances are projected to PSD and floored.
template <typename Scalar>
LinearGaussianDynamics<Scalar> fit_dynamics(const SampleSet<Scalar>& samples,
                                            const FitOptions& options = {}) {
  if (samples.count() < 2) throw PreconditionError("fit_dynamics: need at least two rollouts");
  const int T = samples.horizon();
  const int n = samples.state_dim();
  const int m = samples.action_dim();
  for (int i = 0; i < samples.count(); ++i) {
    if (samples.actions[i].cols() != T || samples.states[i].cols() != T + 1 ||
        samples.states[i].rows() != n || samples.actions[i].rows() != m) {
      throw ShapeError("fit_dynamics: rollouts must share horizon and dimensions");
    }
  }
  if (T < 1) throw PreconditionError("fit_dynamics: empty rollouts");

  LinearGaussianDynamics<Scalar> dyn;
  dyn.state_dim = n;
  dyn.action_dim = m;
  const int d = n + m;
  for (int t = 0; t < T; ++t) {
    const int first = std::max(0, t - options.window);
    const int last = std::min(T - 1, t + options.window);
    const int per_rollout = last - first + 1;
    const int count = per_rollout * samples.count();
    MatrixX<Scalar> X(d, count);
    MatrixX<Scalar> Y(n, count);
    int col = 0;
    for (int i = 0; i < samples.count(); ++i) {
      for (int tau = first; tau <= last; ++tau) {
        X.block(0, col, n, 1) = samples.states[i].col(tau);
        X.block(n, col, m, 1) = samples.actions[i].col(tau);
        Y.col(col) = samples.states[i].col(tau + 1);
        ++col;
      }
    }
    const VectorX<Scalar> x_mean = X.rowwise().mean();
    const VectorX<Scalar> y_mean = Y.rowwise().mean();
    const MatrixX<Scalar> Xc = X.colwise() - x_mean;
    const MatrixX<Scalar> Yc = Y.colwise() - y_mean;
    MatrixX<Scalar> scatter = Xc * Xc.transpose();
    scatter.diagonal().array() += static_cast<Scalar>(options.ridge);
    Eigen::LLT<MatrixX<Scalar>> llt(scatter);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("fit_dynamics: rank-deficient regression at step " + std::to_string(t));
    }
    const MatrixX<Scalar> F = llt.solve(Xc * Yc.transpose()).transpose();
    const VectorX<Scalar> f = y_mean - F * x_mean;
    const MatrixX<Scalar> residual = Yc - F * Xc;
    MatrixX<Scalar> sigma = detail::clamp_psd<Scalar>(residual * residual.transpose() /
                                                      static_cast<Scalar>(std::max(1, count - 1)));
    sigma.diagonal().array() += static_cast<Scalar>(options.noise_floor);
    if (!F.allFinite() || !f.allFinite() || !sigma.allFinite()) {
      throw NumericalError("fit_dynamics: non-finite fit at step " + std::to_string(t));
    }
    dyn.F.push_back(F);
    dyn.f.push_back(f);
    dyn.noise_cov.push_back(sigma);
  }
  return dyn;
}

/// Affine approximation of a deterministic actor along sampled states: K_t is
/// the mean input Jacobian over the step-t states and k_t matches the mean
/// actor output at the mean state. Every step gets `noise_cov` as covariance.
template <typename Scalar>
LinearGaussianPolicy<Scalar> linearize_policy(const MlpParams<Scalar>& actor,
                                              const SampleSet<Scalar>& samples,
                                              const MatrixX<Scalar>& noise_cov) {
  if (samples.count() < 1) throw PreconditionError("linearize_policy: no samples");
  const int T = samples.horizon();
  const int n = samples.state_dim();
  const int m = actor.output_size();
  if (actor.input_size() != n) throw ShapeError("linearize_policy: actor input size mismatch");
  if (noise_cov.rows() != m || noise_cov.cols() != m) {
    throw ShapeError("linearize_policy: noise covariance must be m x m");
  }
  Eigen::LLT<MatrixX<Scalar>> check(noise_cov);
  if (check.info() != Eigen::Success) throw NumericalError("linearize_policy: noise covariance not SPD");

  LinearGaussianPolicy<Scalar> policy;
  for (int t = 0; t < T; ++t) {
    MatrixX<Scalar> states(n, samples.count());
    for (int i = 0; i < samples.count(); ++i) states.col(i) = samples.states[i].col(t);
    const auto tape = mlp_forward_tape(actor, states);
    MatrixX<Scalar> K = MatrixX<Scalar>::Zero(m, n);
    for (int j = 0; j < m; ++j) {
      MatrixX<Scalar> seed = MatrixX<Scalar>::Zero(m, samples.count());
      seed.row(j).setOnes();
      // Sum of per-sample input gradients of output j.
      K.row(j) = mlp_backward(actor, tape, seed).input_gradient.rowwise().sum().transpose();
    }
    K /= static_cast<Scalar>(samples.count());
    const VectorX<Scalar> x_mean = states.rowwise().mean();
    const VectorX<Scalar> u_mean = tape.output().rowwise().mean();
    if (!K.allFinite() || !u_mean.allFinite()) throw NumericalError("linearize_policy: non-finite fit");
    policy.K.push_back(K);
    policy.k.push_back(u_mean - K * x_mean);
    policy.cov.push_back(noise_cov);
  }
  return policy;
}

/// Closed-loop Gaussian marginal propagation.
template <typename Scalar>
TrajectoryDistribution<Scalar> lqg_forward(const LinearGaussianDynamics<Scalar>& dyn,
                                           const LinearGaussianPolicy<Scalar>& policy,
                                           const VectorX<Scalar>& initial_mean,
                                           const MatrixX<Scalar>& initial_cov) {
  const int T = dyn.horizon();
  if (policy.horizon() != T) throw ShapeError("lqg_forward: policy/dynamics horizon mismatch");
  if (initial_mean.size() != dyn.state_dim || initial_cov.rows() != dyn.state_dim) {
    throw ShapeError("lqg_forward: initial distribution has wrong dimension");
  }
  TrajectoryDistribution<Scalar> dist;
  dist.state_mean.push_back(initial_mean);
  dist.state_cov.push_back(initial_cov);
  for (int t = 0; t < T; ++t) {
    const auto mu = detail::joint_mean(dist.state_mean[t], policy, t);
    const auto sigma = detail::joint_cov(dist.state_cov[t], policy, t);
    dist.state_mean.push_back(dyn.F[t] * mu + dyn.f[t]);
    dist.state_cov.push_back(
        detail::symmetrize<Scalar>(dyn.F[t] * sigma * dyn.F[t].transpose() + dyn.noise_cov[t]));
  }
  return dist;
}

/// Expected per-step KL( p(u|x) || q(u|x) ) under the state marginals of
/// `dist` (which must be generated by p).
template <typename Scalar>
std::vector<Scalar> kl_divergence_per_step(const TrajectoryDistribution<Scalar>& dist,
                                           const LinearGaussianPolicy<Scalar>& p,
                                           const LinearGaussianPolicy<Scalar>& q) {
  const int T = p.horizon();
  if (q.horizon() != T || dist.horizon() < T) throw ShapeError("kl_divergence: horizon mismatch");
  std::vector<Scalar> out;
  out.reserve(T);
  for (int t = 0; t < T; ++t) {
    const auto m = p.K[t].rows();
    Eigen::LLT<MatrixX<Scalar>> q_llt(q.cov[t]);
    if (q_llt.info() != Eigen::Success) throw NumericalError("kl_divergence: reference covariance not SPD");
    const Scalar logdet_q = detail::log_det_spd<Scalar>(q.cov[t], "kl_divergence");
    const Scalar logdet_p = detail::log_det_spd<Scalar>(p.cov[t], "kl_divergence");
    const MatrixX<Scalar> dK = p.K[t] - q.K[t];
    const VectorX<Scalar> dmean = dK * dist.state_mean[t] + (p.k[t] - q.k[t]);
    const Scalar trace_cov = q_llt.solve(p.cov[t]).trace();
    const Scalar mean_term = dmean.dot(q_llt.solve(dmean));
    const Scalar gain_term = (dK.transpose() * q_llt.solve(dK) * dist.state_cov[t]).trace();
    const Scalar kl = Scalar(0.5) * (trace_cov - static_cast<Scalar>(m) + logdet_q - logdet_p +
                                     mean_term + gain_term);
    out.push_back(std::max(kl, Scalar(0)));
  }
  return out;
}

template <typename Scalar>
Scalar kl_divergence(const TrajectoryDistribution<Scalar>& dist, const LinearGaussianPolicy<Scalar>& p,
                     const LinearGaussianPolicy<Scalar>& q) {
  Scalar total = 0;
  for (Scalar v : kl_divergence_per_step(dist, p, q)) total += v;
  return total;
}

/// Expected cost of the quadratic model under the joint (x, u) marginals.
template <typename Scalar>
Scalar expected_cost(const TrajectoryDistribution<Scalar>& dist,
                     const LinearGaussianPolicy<Scalar>& policy, const QuadraticCost<Scalar>& cost) {
  Scalar total = 0;
  for (int t = 0; t < cost.horizon(); ++t) {
    const auto mu = detail::joint_mean(dist.state_mean[t], policy, t);
    const auto sigma = detail::joint_cov(dist.state_cov[t], policy, t);
    total += Scalar(0.5) * mu.dot(cost.hessian[t] * mu) +
             Scalar(0.5) * (cost.hessian[t] * sigma).trace() + cost.gradient[t].dot(mu) +
             cost.constant[t];
  }
  return total;
}

template <typename Scalar>
struct BackwardResult {
  LinearGaussianPolicy<Scalar> policy;
  std::vector<MatrixX<Scalar>> value_hessian;   // V_t, T + 1 entries
  std::vector<VectorX<Scalar>> value_gradient;  // v_t
  double regularization = 0.0;                  // final Levenberg-Marquardt shift on Q_uu
};

struct BackwardOptions {
  double initial_regularization = 1e-6;
  double max_regularization = 1e10;
};

/// Maximum-entropy LQG backward recursion for
///   min_p E_p[l] + eta * KL(p || prior),
/// i.e. the surrogate cost l - eta log prior(u|x) with controller covariance
/// C_t = eta Q_uu^{-1}. Without a prior this is plain finite-horizon LQR
/// (gains independent of eta). Q_uu is shifted by a Levenberg-Marquardt term
/// that doubles whenever a Cholesky factorization fails.
template <typename Scalar>
BackwardResult<Scalar> lqg_backward(const LinearGaussianDynamics<Scalar>& dyn,
                                    const QuadraticCost<Scalar>& cost,
                                    const LinearGaussianPolicy<Scalar>* prior, double eta,
                                    const BackwardOptions& options = {}) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw PreconditionError("lqg_backward: eta must be positive");
  const int T = dyn.horizon();
  const int n = dyn.state_dim;
  const int m = dyn.action_dim;
  if (cost.horizon() != T || (prior && prior->horizon() != T)) {
    throw ShapeError("lqg_backward: horizon mismatch");
  }
  const Scalar eta_s = static_cast<Scalar>(eta);

  double mu = 0.0;
  while (true) {
    BackwardResult<Scalar> result;
    result.policy.K.resize(T);
    result.policy.k.resize(T);
    result.policy.cov.resize(T);
    result.value_hessian.assign(T + 1, MatrixX<Scalar>::Zero(n, n));
    result.value_gradient.assign(T + 1, VectorX<Scalar>::Zero(n));
    bool failed = false;
    for (int t = T - 1; t >= 0; --t) {
      MatrixX<Scalar> H = cost.hessian[t];
      VectorX<Scalar> g = cost.gradient[t];
      if (prior) {
        // -log N(u; Kx + k, C) = 0.5 (u - Kx - k)' C^-1 (u - Kx - k) + const.
        Eigen::LLT<MatrixX<Scalar>> c_llt(prior->cov[t]);
        if (c_llt.info() != Eigen::Success) throw NumericalError("lqg_backward: prior covariance not SPD");
        const MatrixX<Scalar> P = c_llt.solve(MatrixX<Scalar>::Identity(m, m));
        const MatrixX<Scalar>& Kp = prior->K[t];
        const VectorX<Scalar>& kp = prior->k[t];
        H.topLeftCorner(n, n) += eta_s * Kp.transpose() * P * Kp;
        H.topRightCorner(n, m) -= eta_s * Kp.transpose() * P;
        H.bottomLeftCorner(m, n) -= eta_s * P * Kp;
        H.bottomRightCorner(m, m) += eta_s * P;
        g.head(n) += eta_s * Kp.transpose() * P * kp;
        g.tail(m) -= eta_s * P * kp;
      }
      const MatrixX<Scalar>& V = result.value_hessian[t + 1];
      const VectorX<Scalar>& v = result.value_gradient[t + 1];
      const MatrixX<Scalar> Q = detail::symmetrize<Scalar>(H + dyn.F[t].transpose() * V * dyn.F[t]);
      const VectorX<Scalar> q = g + dyn.F[t].transpose() * (V * dyn.f[t] + v);

      const MatrixX<Scalar> Qxx = Q.topLeftCorner(n, n);
      const MatrixX<Scalar> Qux = Q.bottomLeftCorner(m, n);
      MatrixX<Scalar> Quu = Q.bottomRightCorner(m, m);
      const VectorX<Scalar> qx = q.head(n);
      const VectorX<Scalar> qu = q.tail(m);
      MatrixX<Scalar> Quu_reg = Quu;
      Quu_reg.diagonal().array() += static_cast<Scalar>(mu);
      Eigen::LLT<MatrixX<Scalar>> llt(Quu_reg);
      if (llt.info() != Eigen::Success) {
        failed = true;
        break;
      }
      const MatrixX<Scalar> K = -llt.solve(Qux);
      const VectorX<Scalar> k = -llt.solve(qu);
      MatrixX<Scalar> C = eta_s * llt.solve(MatrixX<Scalar>::Identity(m, m));
      C = detail::symmetrize<Scalar>(C);
      result.policy.K[t] = K;
      result.policy.k[t] = k;
      result.policy.cov[t] = C;
      result.value_hessian[t] = detail::symmetrize<Scalar>(
          Qxx + Qux.transpose() * K + K.transpose() * Qux + K.transpose() * Quu * K);
      result.value_gradient[t] = qx + Qux.transpose() * k + K.transpose() * qu + K.transpose() * Quu * k;
      if (!result.value_hessian[t].allFinite() || !result.value_gradient[t].allFinite()) {
        failed = true;
        break;
      }
    }
    if (!failed) {
      result.regularization = mu;
      return result;
    }
    mu = mu == 0.0 ? options.initial_regularization : 2.0 * mu;
    if (mu > options.max_regularization) {
      throw NumericalError("lqg_backward: Q_uu not positive definite after regularization");
    }
  }
}

/// Multiplicative dual step: KL below the bound lowers eta, otherwise eta rises.
inline DualState update_eta(const DualState& dual, double achieved_kl, double epsilon,
                            const DualConfig& config = {}) {
  if (achieved_kl < 0.0) throw PreconditionError("update_eta: KL must be non-negative");
  DualState next = dual;
  next.eta = achieved_kl < epsilon ? dual.eta / config.eta_factor : dual.eta * config.eta_factor;
  next.eta = std::clamp(next.eta, config.eta_min, config.eta_max);
  return next;
}

/// Trust-region step size from the ratio of realized to predicted improvement.
inline DualState update_epsilon(const DualState& dual, double expected_improvement,
                                double actual_improvement, const DualConfig& config = {}) {
  if (!std::isfinite(expected_improvement)) {
    throw PreconditionError("update_epsilon: expected improvement must be finite");
  }
  DualState next = dual;
  if (expected_improvement <= 0.0 || !std::isfinite(actual_improvement)) return next;
  const double ratio = actual_improvement / expected_improvement;
  if (ratio < config.shrink_ratio) {
    next.epsilon *= config.shrink_factor;
  } else if (ratio > config.grow_ratio) {
    next.epsilon *= config.grow_factor;
  }
  next.epsilon = std::clamp(next.epsilon, config.epsilon_min, config.epsilon_max);
  return next;
}

enum class TrajectoryStatus { converged, constraint_inactive, best_feasible };

inline const char* to_string(TrajectoryStatus status) {
  switch (status) {
    case TrajectoryStatus::converged:
      return "converged";
    case TrajectoryStatus::constraint_inactive:
      return "constraint_inactive";
    case TrajectoryStatus::best_feasible:
      return "best_feasible";
  }
  return "unknown";
}

struct DualIteration {
  double eta = 0.0;
  double kl = 0.0;
  double expected_cost = 0.0;
};

template <typename Scalar>
struct TrajectoryUpdate {
  LinearGaussianPolicy<Scalar> policy;
  TrajectoryDistribution<Scalar> distribution;
  DualState dual;
  double achieved_kl = 0.0;
  double prior_expected_cost = 0.0;
  double expected_cost = 0.0;
  TrajectoryStatus status = TrajectoryStatus::converged;
  std::vector<DualIteration> iterations;

  double expected_improvement() const { return prior_expected_cost - expected_cost; }
};

/// Solves min_p E_p[l] s.t. KL(p || prior) <= epsilon through its dual:
/// the LQG backward pass at fixed eta, then eta adjusted from the achieved
/// KL. While no bracket [eta_lo, eta_hi] around epsilon exists, eta moves by
/// `update_eta`; afterwards by geometric bisection.
template <typename Scalar>
TrajectoryUpdate<Scalar> update_trajectory(const LinearGaussianDynamics<Scalar>& dyn,
                                           const LinearGaussianPolicy<Scalar>& prior,
                                           const DualState& dual, const QuadraticCost<Scalar>& cost,
                                           const VectorX<Scalar>& initial_mean,
                                           const MatrixX<Scalar>& initial_cov,
                                           const DualConfig& config = {},
                                           const BackwardOptions& backward = {}) {
  if (!(dual.epsilon > 0.0)) throw PreconditionError("update_trajectory: epsilon must be positive");
  const double epsilon = dual.epsilon;
  const auto prior_dist = lqg_forward(dyn, prior, initial_mean, initial_cov);

  TrajectoryUpdate<Scalar> out;
  out.prior_expected_cost = static_cast<double>(expected_cost(prior_dist, prior, cost));

  std::optional<TrajectoryUpdate<Scalar>> best;  // feasible with the largest KL
  double eta_lo = 0.0;                            // largest eta seen with KL > epsilon
  double eta_hi = std::numeric_limits<double>::infinity();  // smallest eta with KL <= epsilon
  double eta = std::clamp(dual.eta, config.eta_min, config.eta_max);
  std::vector<DualIteration> trace;

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    double kl = std::numeric_limits<double>::infinity();
    std::optional<TrajectoryUpdate<Scalar>> candidate;
    try {
      auto back = lqg_backward(dyn, cost, &prior, eta, backward);
      TrajectoryUpdate<Scalar> c;
      c.distribution = lqg_forward(dyn, back.policy, initial_mean, initial_cov);
      kl = static_cast<double>(kl_divergence(c.distribution, back.policy, prior));
      c.policy = std::move(back.policy);
      c.achieved_kl = kl;
      c.expected_cost = static_cast<double>(expected_cost(c.distribution, c.policy, cost));
      c.prior_expected_cost = out.prior_expected_cost;
      c.dual = dual;
      c.dual.eta = eta;
      if (!std::isfinite(kl) || !std::isfinite(c.expected_cost)) throw NumericalError("non-finite");
      candidate = std::move(c);
    } catch (const NumericalError&) {
      kl = std::numeric_limits<double>::infinity();
    }
    trace.push_back({eta, kl, candidate ? candidate->expected_cost : std::nan("")});

    if (candidate && std::abs(kl - epsilon) <= config.kl_tolerance * epsilon) {
      candidate->status = TrajectoryStatus::converged;
      candidate->iterations = trace;
      return std::move(*candidate);
    }
    if (candidate && kl <= epsilon) {
      if (!best || kl > best->achieved_kl) best = std::move(candidate);
      eta_hi = std::min(eta_hi, eta);
      if (eta <= config.eta_min) {
        best->status = TrajectoryStatus::constraint_inactive;
        best->iterations = trace;
        return std::move(*best);
      }
    } else {
      eta_lo = std::max(eta_lo, eta);
      if (eta >= config.eta_max) break;
    }
    if (eta_lo > 0.0 && std::isfinite(eta_hi)) {
      eta = std::sqrt(eta_lo * eta_hi);
    } else {
      DualState step = dual;
      step.eta = eta;
      eta = update_eta(step, kl, epsilon, config).eta;
    }
  }
  if (!best) throw NumericalError("update_trajectory: no controller satisfies the KL bound");
  best->status = TrajectoryStatus::best_feasible;
  best->iterations = trace;
  return std::move(*best);
}

/// Q^to_t = sum_{k >= t} gamma^(k - t) r_k.
template <typename Scalar>
std::vector<Scalar> cost_to_go(const std::vector<Scalar>& rewards, Scalar discount) {
  std::vector<Scalar> out(rewards.size());
  Scalar running = 0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    running = rewards[i] + discount * running;
    out[i] = running;
  }
  return out;
}

}  // namespace gddpg
