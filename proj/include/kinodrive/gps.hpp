#pragma once

#include "kinodrive/cost.hpp"
#include "kinodrive/dynfit.hpp"
#include "kinodrive/linear_gaussian.hpp"
#include "kinodrive/sim.hpp"
#include "kinodrive/trajopt.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace kinodrive::opt {

struct GpsConfig {
  int n_traj = 4;
  int max_iters = 25;
  DgdConfig dgd{};
  int gmm_components = 20;
  int gmm_window = 20;
  int em_iters = 10;
  double dyn_reg = 1e-6;
  bool with_obstacle = false;
  PdGains pd_init{};
  double init_cov_floor = 1e-4;
  // Start each dual search from the previous iteration's multiplier.
  bool warm_start_lambda = true;
  // Softplus width for the obstacle gate in the optimised cost; 0 = exact.
  double gate_smoothing = 2.0;
};

struct GpsRow {
  int iter = 0;
  long env_steps = 0;
  double mean_cost = 0.0;
  double kl = 0.0;
  double lambda = 0.0;
  double wall_ms = 0.0;
  bool success = false;
};

struct GpsResult {
  LinearGaussianPolicy policy;
  std::vector<GpsRow> log;
};

using GpsCallback = std::function<void(const LinearGaussianPolicy&, const GpsRow&)>;

/// Outer loop: sample, refit the GMM prior, fit local dynamics, run the dual
/// gradient descent update. `on_iteration` sees the policy after each update.
GpsResult gps_train(const sim::ScenarioConfig& env, const cost::CostWeights& weights,
                    const GpsConfig& cfg, std::uint64_t seed, const GpsCallback& on_iteration = {});

}  // namespace kinodrive::opt
