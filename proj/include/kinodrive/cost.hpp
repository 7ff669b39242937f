#pragma once

#include "kinodrive/common.hpp"
#include "kinodrive/linear_gaussian.hpp"
#include "kinodrive/sim.hpp"

#include <functional>
#include <vector>

namespace kinodrive::cost {

struct CostWeights {
  double alpha_l = 1.0;
  double alpha_y = 0.5;
  double alpha_v = 0.5;
  double alpha_a = 0.1;
  double alpha_sigma = 0.1;
  double v_ref = 6.0;
  double beta_s = 0.5;
  double beta_v = 1.0;
  double collision_penalty = 500.0;
  // Charged on the step that leaves the road. Zero keeps off-road a plain
  // termination.
  double off_road_penalty = 0.0;

  bool operator==(const CostWeights&) const = default;
};

/// Obstacle cost is active strictly below this along-lane distance.
inline constexpr double kObstacleGate = 20.0;

/// Five-term lane tracking cost on [delta_y, delta_phi, v].
double tracking_cost(const Eigen::Vector3d& lane_obs, const sim::Action& action,
                     const CostWeights& w);

/// beta_s (20 - s) + beta_v max(0, v_ego - v_front) for a same-lane front
/// vehicle closer than 20 m, else 0.
double obstacle_cost(const sim::WorldState& w, const CostWeights& weights);

struct StepCost {
  double cost = 0.0;
  bool terminal = false;
};

/// Cost of taking `action` in `pre`, given the events of the resulting step.
StepCost step_cost(const sim::WorldState& pre, const sim::Action& action,
                   const sim::StepEvents& events, const CostWeights& weights);

/// The same cost written over a model-based observation (observe_mb layout,
/// dim 3 or 7) and an action vector [accel, steer]. The obstacle gate uses the
/// ego-frame offset of the front vehicle: |rel_y| below half a lane and
/// 0 < rel_x < 20.
double observation_cost(const Vec& obs, const Vec& action, const CostWeights& w,
                        double lane_width = 3.5);

/// observation_cost with the obstacle kinks replaced by softplus ramps of
/// width `smoothing` (meters, and a tenth of it in m/s for the approach
/// term). Converges to observation_cost as smoothing -> 0.
double smoothed_observation_cost(const Vec& obs, const Vec& action, const CostWeights& w,
                                 double lane_width, double smoothing);

using CostFn = std::function<double(const Vec& s, const Vec& a)>;

/// cost(z) ~= 0.5 dz' C dz + c' dz + c0 with dz = z - nominal, z = [s; a].
struct QuadraticCost {
  std::vector<Mat> C;
  std::vector<Vec> c;
  std::vector<double> c0;
  std::vector<Vec> nominal;

  int horizon() const { return static_cast<int>(C.size()); }
};

inline constexpr double kFiniteDifferenceStep = 1e-4;
inline constexpr double kActionEigenFloor = 1e-6;

/// Central finite-difference second-order expansion of `l` around each
/// nominal [s; a]. No flooring is applied.
QuadraticCost expand_cost(const std::vector<Vec>& nominal_s, const std::vector<Vec>& nominal_a,
                          const CostFn& l);

/// Exact quadratic form of -log N(a; K s + k, C) around the nominal points,
/// including the log normaliser. Throws "degenerate policy" when a covariance
/// is not positive definite.
QuadraticCost policy_nll_expansion(const std::vector<Vec>& nominal_s,
                                   const std::vector<Vec>& nominal_a,
                                   const LinearGaussianPolicy& prev_policy);

/// Adds (1/lambda) * cost + nll and floors the action block eigenvalues.
QuadraticCost combine_augmented(const QuadraticCost& cost, const QuadraticCost& nll, double lambda,
                                int dim_s);

/// Augmented cost l / lambda - log pi_prev(a | s), expanded around the
/// nominal trajectory.
QuadraticCost quadratize_cost(const std::vector<Vec>& nominal_s, const std::vector<Vec>& nominal_a,
                              double lambda, const LinearGaussianPolicy& prev_policy,
                              const CostFn& l);

/// Floors the eigenvalues of a symmetric matrix.
Mat floor_eigenvalues(const Mat& m, double floor);

}  // namespace kinodrive::cost
