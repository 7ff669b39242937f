#pragma once

#include "kinodrive/cost.hpp"
#include "kinodrive/linear_gaussian.hpp"
#include "kinodrive/sim.hpp"
#include "kinodrive/trajopt.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace kinodrive::cem {

struct CemState {
  Vec mu;
  Vec sigma;
  int population = 16;
  double elite_frac = 0.2;
  double sigma_floor = 1e-3;
};

int elite_count(const CemState& s);

/// Scores a whole population; lower is better.
using Objective = std::function<std::vector<double>(const std::vector<Vec>& candidates)>;

struct CemStep {
  std::vector<Vec> candidates;
  std::vector<double> scores;
  std::vector<int> elite;  // indices, best first
};

/// One sample / score / refit round. mu becomes the elite mean, sigma the
/// elite standard deviation floored at sigma_floor.
CemStep cem_step(CemState& s, const Objective& f, std::mt19937_64& rng);

/// theta = [row-major K, k] of a time-invariant policy over observe_mb.
Vec policy_to_theta(const Mat& K, const Vec& k);

/// Per-coordinate initial spread: `sigma` in units of typical action
/// magnitude per typical observation magnitude, so every coordinate moves
/// the action by a comparable amount.
Vec initial_sigma(int dim_s, double sigma);
LinearGaussianPolicy theta_to_policy(const Vec& theta, int dim_s, int horizon, const Mat& cov);

struct CemConfig {
  int population = 16;
  double elite_frac = 0.2;
  double sigma_floor = 1e-3;
  double init_sigma = 0.5;
  int rollouts = 4;
  int iters = 30;
  bool with_obstacle = false;
  opt::PdGains pd_init{};
};

struct CemRow {
  int iter = 0;
  long env_steps = 0;
  double best_cost = 0.0;   // best candidate's mean rollout cost
  double mean_cost = 0.0;   // population mean
  double sigma_mean = 0.0;
};

struct CemResult {
  LinearGaussianPolicy policy;  // mean parameters with the exploration covariance
  CemState state;
  std::vector<CemRow> log;
};

using CemCallback = std::function<void(const LinearGaussianPolicy&, const CemRow&)>;

/// Candidates are scored on `rollouts` episodes sharing scenario and noise
/// seeds within an iteration. Throws "degenerate scenario" if every rollout
/// of an iteration ends before its first step.
CemResult cem_train(const sim::ScenarioConfig& env, const cost::CostWeights& weights,
                    const CemConfig& cfg, std::uint64_t seed, const CemCallback& on_iteration = {});

}  // namespace kinodrive::cem
