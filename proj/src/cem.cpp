#include "kinodrive/cem.hpp"

#include "kinodrive/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kinodrive::cem {

int elite_count(const CemState& s) {
  return std::clamp(static_cast<int>(std::lround(s.elite_frac * s.population)), 1, s.population);
}

CemStep cem_step(CemState& s, const Objective& f, std::mt19937_64& rng) {
  if (s.population < 1) throw Error("population must be positive");
  if (s.mu.size() != s.sigma.size()) throw Error("dimension mismatch: mu and sigma");
  if ((s.sigma.array() <= 0.0).any()) throw Error("sigma must be positive");
  CemStep step;
  std::normal_distribution<double> n01;
  for (int i = 0; i < s.population; ++i) {
    Vec th(s.mu.size());
    for (Eigen::Index j = 0; j < th.size(); ++j) th[j] = s.mu[j] + s.sigma[j] * n01(rng);
    step.candidates.push_back(std::move(th));
  }
  step.scores = f(step.candidates);
  if (static_cast<int>(step.scores.size()) != s.population) throw Error("objective returned wrong count");
  std::vector<int> order(static_cast<std::size_t>(s.population));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return step.scores[static_cast<std::size_t>(a)] < step.scores[static_cast<std::size_t>(b)];
  });
  const int ne = elite_count(s);
  step.elite.assign(order.begin(), order.begin() + ne);

  Vec mean = Vec::Zero(s.mu.size());
  for (int i : step.elite) mean += step.candidates[static_cast<std::size_t>(i)];
  mean /= static_cast<double>(ne);
  Vec var = Vec::Zero(s.mu.size());
  for (int i : step.elite) var += (step.candidates[static_cast<std::size_t>(i)] - mean).cwiseAbs2();
  var /= static_cast<double>(ne);
  s.mu = mean;
  s.sigma = var.cwiseSqrt().cwiseMax(s.sigma_floor);
  return step;
}

Vec policy_to_theta(const Mat& K, const Vec& k) {
  Vec th(K.size() + k.size());
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < K.rows(); ++r)
    for (Eigen::Index c = 0; c < K.cols(); ++c) th[i++] = K(r, c);
  th.tail(k.size()) = k;
  return th;
}

Vec initial_sigma(int dim_s, double sigma) {
  // [dy, dphi, v, rel_x, rel_y, rel_vx, rel_vy] and [accel, steer]
  static const double obs_scale[] = {1.0, 0.2, 6.0, 30.0, 1.0, 3.0, 1.0};
  static const double act_scale[] = {1.0, 0.1};
  if (dim_s > 7) throw Error("dimension mismatch: theta");
  Vec s(2 * dim_s + 2);
  Eigen::Index i = 0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < dim_s; ++c) s[i++] = sigma * act_scale[r] / obs_scale[c];
  for (int r = 0; r < 2; ++r) s[i++] = sigma * act_scale[r];
  return s;
}

LinearGaussianPolicy theta_to_policy(const Vec& theta, int dim_s, int horizon, const Mat& cov) {
  const Eigen::Index da = cov.rows();
  if (theta.size() != da * dim_s + da) throw Error("dimension mismatch: theta");
  Mat K(da, dim_s);
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < da; ++r)
    for (Eigen::Index c = 0; c < dim_s; ++c) K(r, c) = theta[i++];
  const Vec k = theta.tail(da);
  LinearGaussianPolicy p;
  p.K.assign(static_cast<std::size_t>(horizon), K);
  p.k.assign(static_cast<std::size_t>(horizon), k);
  p.C.assign(static_cast<std::size_t>(horizon), cov);
  return p;
}

CemResult cem_train(const sim::ScenarioConfig& env, const cost::CostWeights& weights,
                    const CemConfig& cfg, std::uint64_t seed, const CemCallback& on_iteration) {
  const int ds = cfg.with_obstacle ? sim::kMbObstacleDim : sim::kMbDim;
  opt::PdGains pd = cfg.pd_init;
  pd.v_ref = weights.v_ref;
  const LinearGaussianPolicy init = opt::pd_init_policy(ds, 2, env.horizon, pd);
  const Mat cov = init.C.front();

  CemResult result;
  result.state.mu = policy_to_theta(init.K.front(), init.k.front());
  result.state.sigma = initial_sigma(ds, cfg.init_sigma);
  result.state.population = cfg.population;
  result.state.elite_frac = cfg.elite_frac;
  result.state.sigma_floor = cfg.sigma_floor;
  result.policy = init;

  std::mt19937_64 rng(seed);
  long env_steps = 0;
  for (int it = 0; it < cfg.iters; ++it) {
    std::vector<std::uint64_t> scen(static_cast<std::size_t>(cfg.rollouts));
    std::vector<std::uint64_t> noise(static_cast<std::size_t>(cfg.rollouts));
    for (int r = 0; r < cfg.rollouts; ++r) {
      scen[static_cast<std::size_t>(r)] = rng();
      noise[static_cast<std::size_t>(r)] = rng();
    }
    long iter_steps = 0;
    const Objective score = [&](const std::vector<Vec>& cands) {
      std::vector<double> out;
      for (const Vec& th : cands) {
        const auto pol = rollout::linear_gaussian(theta_to_policy(th, ds, env.horizon, cov),
                                                  cfg.with_obstacle, true);
        double total = 0.0;
        for (int r = 0; r < cfg.rollouts; ++r) {
          const rollout::Episode ep = rollout::run_episode(env, weights, scen[static_cast<std::size_t>(r)],
                                                           pol, cfg.with_obstacle,
                                                           noise[static_cast<std::size_t>(r)]);
          iter_steps += ep.steps;
          total += ep.total_cost();
        }
        out.push_back(total / static_cast<double>(cfg.rollouts));
      }
      return out;
    };
    const CemStep step = cem_step(result.state, score, rng);
    if (iter_steps == 0) throw Error("degenerate scenario");
    env_steps += iter_steps;

    CemRow row;
    row.iter = it;
    row.env_steps = env_steps;
    row.best_cost = step.scores[static_cast<std::size_t>(step.elite.front())];
    row.mean_cost = std::accumulate(step.scores.begin(), step.scores.end(), 0.0) /
                    static_cast<double>(step.scores.size());
    row.sigma_mean = result.state.sigma.mean();
    result.policy = theta_to_policy(result.state.mu, ds, env.horizon, cov);
    result.log.push_back(row);
    if (on_iteration) on_iteration(result.policy, row);
  }
  return result;
}

}  // namespace kinodrive::cem
