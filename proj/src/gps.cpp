#include "kinodrive/gps.hpp"

#include "kinodrive/rollout.hpp"

#include <chrono>

namespace kinodrive::opt {

namespace {

void moments_of_initial_states(const std::vector<Trajectory>& trajs, double floor, Vec& mean,
                               Mat& cov) {
  const Eigen::Index d = trajs.front().states.front().size();
  mean = Vec::Zero(d);
  for (const auto& tr : trajs) mean += tr.states.front();
  mean /= static_cast<double>(trajs.size());
  cov = floor * Mat::Identity(d, d);
  for (const auto& tr : trajs) {
    const Vec c = tr.states.front() - mean;
    cov += c * c.transpose() / static_cast<double>(trajs.size());
  }
}

}  // namespace

GpsResult gps_train(const sim::ScenarioConfig& env, const cost::CostWeights& weights,
                    const GpsConfig& cfg, std::uint64_t seed, const GpsCallback& on_iteration) {
  const int T = env.horizon;
  const int ds = cfg.with_obstacle ? sim::kMbObstacleDim : sim::kMbDim;
  PdGains pd = cfg.pd_init;
  pd.v_ref = weights.v_ref;
  GpsResult result;
  result.policy = pd_init_policy(ds, 2, T, pd);
  if (cfg.max_iters <= 0) return result;

  std::mt19937_64 rng(seed);
  dyn::GmmDynamicsPrior prior(cfg.gmm_components, cfg.gmm_window, cfg.em_iters);
  const cost::CostFn cost_fn = [weights, lw = env.lane_width, sm = cfg.gate_smoothing](
                                   const Vec& s, const Vec& a) {
    return cost::smoothed_observation_cost(s, a, weights, lw, sm);
  };
  double lambda = cfg.dgd.lambda0;
  long env_steps = 0;

  for (int it = 0; it < cfg.max_iters; ++it) {
    const auto start = std::chrono::steady_clock::now();
    try {
      std::vector<Trajectory> trajs;
      double cost_sum = 0.0;
      const auto policy = rollout::linear_gaussian(result.policy, cfg.with_obstacle, true);
      for (int n = 0; n < cfg.n_traj; ++n) {
        const std::uint64_t scenario_seed = rng();
        const std::uint64_t noise_seed = rng();
        rollout::Episode ep =
            rollout::run_episode(env, weights, scenario_seed, policy, cfg.with_obstacle, noise_seed);
        env_steps += ep.steps;
        cost_sum += ep.total_cost();
        trajs.push_back(std::move(ep.traj));
      }

      prior.update(trajs, rng);
      LinearGaussianDynamics dyn = dyn::fit_local_dynamics(trajs, &prior.gmm(), cfg.dyn_reg);
      while (dyn.horizon() < T) {
        dyn.A.push_back(dyn.A.back());
        dyn.B.push_back(dyn.B.back());
        dyn.f.push_back(dyn.f.back());
        dyn.F.push_back(dyn.F.back());
      }

      DgdProblem pb;
      pb.dyn = std::move(dyn);
      pb.prev_policy = result.policy;
      moments_of_initial_states(trajs, cfg.init_cov_floor, pb.init_mean, pb.init_cov);
      pb.cost = cost_fn;
      DgdConfig dcfg = cfg.dgd;
      if (cfg.warm_start_lambda) dcfg.lambda0 = lambda;
      const DgdResult res = dgd_solve(pb, dcfg);
      result.policy = res.policy;
      lambda = res.lambda;

      GpsRow row;
      row.iter = it;
      row.env_steps = env_steps;
      row.mean_cost = cost_sum / static_cast<double>(cfg.n_traj);
      row.kl = res.kl;
      row.lambda = res.lambda;
      row.success = res.success;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      result.log.push_back(row);
      if (on_iteration) on_iteration(result.policy, row);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " (gps iteration " + std::to_string(it) + ")");
    }
  }
  return result;
}

}  // namespace kinodrive::opt
