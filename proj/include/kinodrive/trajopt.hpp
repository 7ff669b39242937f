#pragma once

#include "kinodrive/common.hpp"
#include "kinodrive/cost.hpp"
#include "kinodrive/linear_gaussian.hpp"

#include <vector>

namespace kinodrive::opt {

/// PD feedback used to initialise linear-Gaussian policies. Actions are
/// [accel, steer]; observations start with [delta_y, delta_phi, v].
struct PdGains {
  double steer_dy = -0.2;
  double steer_dphi = -0.6;
  double accel_dv = -0.8;
  double v_ref = 6.0;
  // Gap feedback on the front-vehicle block [rel_x, rel_y, rel_vx, rel_vy].
  double accel_gap = 0.0;
  double accel_closing = 0.0;
  double gap_ref = 20.0;
  double accel_std = 0.5;
  double steer_std = 0.1;
};

/// Time-invariant policy built from PD gains; extra observation dimensions
/// get zero gain.
LinearGaussianPolicy pd_init_policy(int dim_s, int dim_a, int horizon, const PdGains& gains = {});

/// Joint Gaussian marginals over [s_t; a_t] for t < policy horizon. Throws
/// "numerical blow-up" if a covariance loses positive semi-definiteness.
TrajMarginals forward_marginals(const LinearGaussianDynamics& dyn, const LinearGaussianPolicy& pol,
                                const Vec& init_mean, const Mat& init_cov);

/// Sum over t of the expected conditional KL(pi_new || pi_old) under the
/// state marginals of `marginals_new`.
double traj_kl(const LinearGaussianDynamics& dyn, const LinearGaussianPolicy& pol_new,
               const LinearGaussianPolicy& pol_old, const TrajMarginals& marginals_new);

/// Maximum-entropy LQG: K = -Quu^-1 Qus, k = -Quu^-1 qu, C = Quu^-1 with no
/// terminal value. Throws "backward pass failed" if Quu is indefinite.
LinearGaussianPolicy lqg_backward(const LinearGaussianDynamics& dyn, const cost::QuadraticCost& q);

/// Expected value of the quadratic model under the marginals.
double expected_quadratic_cost(const cost::QuadraticCost& q, const TrajMarginals& m);

struct DgdConfig {
  double epsilon = 1.0;
  double lambda0 = 1.0;
  double alpha_dual = 0.5;
  int max_iter = 20;
  double lambda_min = 1e-4;
  double lambda_max = 1e6;
  // Raw lambda += alpha * (kl - epsilon) instead of the multiplicative rule.
  bool additive = false;
};

/// One multiplier update given the constraint violation kl - epsilon.
double dual_update(double lambda, double violation, const DgdConfig& cfg);

struct DgdProblem {
  LinearGaussianDynamics dyn;
  LinearGaussianPolicy prev_policy;
  Vec init_mean;
  Mat init_cov;
  cost::CostFn cost;
};

struct DgdResult {
  LinearGaussianPolicy policy;
  double lambda = 0.0;
  double kl = 0.0;
  double predicted_cost = 0.0;
  double prev_predicted_cost = 0.0;
  bool success = false;
  int iterations = 0;
};

/// KL-constrained policy update by dual gradient descent on lambda.
/// Throws "trust region unsatisfiable" if every iterate exceeds 10 epsilon.
DgdResult dgd_solve(const DgdProblem& problem, const DgdConfig& cfg);

}  // namespace kinodrive::opt
