#include "kinodrive/rollout.hpp"

#include <algorithm>
#include <cmath>

namespace kinodrive::rollout {

Episode run_episode(const sim::ScenarioConfig& cfg, const cost::CostWeights& weights,
                    std::uint64_t seed, const WorldPolicy& policy, bool with_obstacle,
                    std::uint64_t noise_seed, bool record_dump) {
  sim::WorldState w = sim::spawn_scenario(cfg, seed);
  std::mt19937_64 noise(noise_seed);
  Episode ep;
  ep.traj.states.push_back(sim::observe_mb(w, with_obstacle));
  while (!w.done) {
    const sim::Action raw = policy(w, w.t, noise);
    const sim::Action act = sim::clamp_action(raw, cfg.limits);
    auto [next, ev] = sim::step_world(w, act);
    const cost::StepCost sc = cost::step_cost(w, act, ev, weights);
    if (record_dump) ep.dump.push_back({w.t, w.ego, act, ev.collision});
    ep.traj.actions.push_back(Eigen::Vector2d(act.accel, act.steer));
    ep.traj.costs.push_back(sc.cost);
    ++ep.steps;
    ep.collision = ev.collision;
    ep.off_road = ev.off_road;
    w = std::move(next);
    try {
      ep.traj.states.push_back(sim::observe_mb(w, with_obstacle));
    } catch (const Error&) {
      // Unobservable terminal state: keep the cost, drop the final tuple.
      ep.traj.actions.pop_back();
      const double c = ep.traj.costs.back();
      ep.traj.costs.pop_back();
      if (!ep.traj.costs.empty()) ep.traj.costs.back() += c;
      break;
    }
  }
  if (record_dump) ep.dump.push_back({w.t, w.ego, sim::Action{}, ep.collision});
  return ep;
}

WorldPolicy linear_gaussian(const LinearGaussianPolicy& pol, bool with_obstacle, bool stochastic) {
  std::vector<Mat> chol;
  for (const auto& C : pol.C) chol.push_back(Eigen::LLT<Mat>(C).matrixL());
  return [pol, with_obstacle, stochastic, chol](const sim::WorldState& w, int t,
                                                std::mt19937_64& noise) {
    const int i = std::min(t, pol.horizon() - 1);
    const Vec s = sim::observe_mb(w, with_obstacle);
    Vec a = pol.mean_action(i, s);
    if (stochastic) {
      std::normal_distribution<double> n01;
      Vec z(a.size());
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = n01(noise);
      a += chol[static_cast<std::size_t>(i)] * z;
    }
    return sim::Action{a[0], a[1]};
  };
}

WorldPolicy pd_controller(const opt::PdGains& g) {
  const bool gap = g.accel_gap != 0.0 || g.accel_closing != 0.0;
  return [g, gap](const sim::WorldState& w, int, std::mt19937_64&) {
    const Vec s = sim::observe_mb(w, gap);
    double accel = g.accel_dv * (s[2] - g.v_ref);
    if (gap) accel += g.accel_gap * (s[3] - g.gap_ref) + g.accel_closing * s[5];
    return sim::Action{accel, g.steer_dy * s[0] + g.steer_dphi * s[1]};
  };
}

opt::PdGains reference_obstacle_pd_gains() {
  opt::PdGains g = reference_pd_gains();
  g.accel_gap = 0.4;
  g.accel_closing = 2.0;
  return g;
}

opt::PdGains reference_pd_gains() {
  opt::PdGains g;
  g.steer_dy = -1.0;
  g.steer_dphi = -2.5;
  g.accel_dv = -2.0;
  g.accel_std = 0.0;
  g.steer_std = 0.0;
  return g;
}

EvalSummary evaluate(const sim::ScenarioConfig& cfg, const cost::CostWeights& weights,
                     const WorldPolicy& policy, bool with_obstacle,
                     const std::vector<std::uint64_t>& seeds, std::vector<Episode>* episodes) {
  EvalSummary s;
  s.episodes = static_cast<int>(seeds.size());
  if (seeds.empty()) return s;
  std::vector<double> costs;
  int collisions = 0;
  int off_road = 0;
  for (const auto seed : seeds) {
    Episode ep = run_episode(cfg, weights, seed, policy, with_obstacle, seed ^ 0x5bd1e995ULL, episodes != nullptr);
    costs.push_back(ep.total_cost());
    collisions += ep.collision ? 1 : 0;
    off_road += ep.off_road ? 1 : 0;
    s.env_steps += ep.steps;
    if (episodes) episodes->push_back(std::move(ep));
  }
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= static_cast<double>(costs.size());
  double var = 0.0;
  for (double c : costs) var += (c - mean) * (c - mean);
  s.mean_cost = mean;
  s.std_cost = std::sqrt(var / static_cast<double>(costs.size()));
  s.collision_rate = static_cast<double>(collisions) / static_cast<double>(seeds.size());
  s.off_road_rate = static_cast<double>(off_road) / static_cast<double>(seeds.size());
  return s;
}

std::vector<std::uint64_t> eval_seeds(int n, std::uint64_t base) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(base + static_cast<std::uint64_t>(i) * 7919ULL);
  return out;
}

}  // namespace kinodrive::rollout
