#pragma once

#include "kinodrive/cost.hpp"
#include "kinodrive/linear_gaussian.hpp"
#include "kinodrive/sim.hpp"
#include "kinodrive/trajopt.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace kinodrive::rollout {

/// Maps the current world to an ego action. `noise` is the episode's
/// exploration stream.
using WorldPolicy = std::function<sim::Action(const sim::WorldState& w, int t, std::mt19937_64& noise)>;

struct Episode {
  Trajectory traj;  // model-based observations, executed actions, step costs
  int steps = 0;
  bool collision = false;
  bool off_road = false;
  std::vector<sim::DumpRow> dump;

  double total_cost() const { return traj.total_cost(); }
};

/// Runs one episode from spawn_scenario(cfg, seed) until done.
Episode run_episode(const sim::ScenarioConfig& cfg, const cost::CostWeights& weights,
                    std::uint64_t seed, const WorldPolicy& policy, bool with_obstacle,
                    std::uint64_t noise_seed, bool record_dump = false);

/// Linear-Gaussian policy over observe_mb. Past its horizon the last step's
/// gains are reused.
WorldPolicy linear_gaussian(const LinearGaussianPolicy& pol, bool with_obstacle, bool stochastic);

/// Deterministic PD controller on observe_mb.
WorldPolicy pd_controller(const opt::PdGains& gains);

/// Gains of the hand-tuned PD reference controller used as the convergence
/// yardstick.
opt::PdGains reference_pd_gains();

/// Reference with linear feedback on the front-vehicle gap and closing speed,
/// for scenarios with a front obstacle.
opt::PdGains reference_obstacle_pd_gains();

struct EvalSummary {
  int episodes = 0;
  double mean_cost = 0.0;
  double std_cost = 0.0;
  double collision_rate = 0.0;
  double off_road_rate = 0.0;
  long env_steps = 0;
};

/// One episode per seed. When `episodes` is given, each episode is appended
/// to it with its trajectory dump recorded.
EvalSummary evaluate(const sim::ScenarioConfig& cfg, const cost::CostWeights& weights,
                     const WorldPolicy& policy, bool with_obstacle,
                     const std::vector<std::uint64_t>& seeds, std::vector<Episode>* episodes = nullptr);

/// Fixed evaluation seeds, disjoint from training seed streams.
std::vector<std::uint64_t> eval_seeds(int n, std::uint64_t base = 900001);

}  // namespace kinodrive::rollout
