#include "kinodrive/cost.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>

namespace kinodrive::cost {

double tracking_cost(const Eigen::Vector3d& lane_obs, const sim::Action& action,
                     const CostWeights& w) {
  const double dy = lane_obs[0];
  const double dphi = lane_obs[1];
  const double dv = lane_obs[2] - w.v_ref;
  return w.alpha_l * dy * dy + w.alpha_y * dphi * dphi + w.alpha_v * dv * dv +
         w.alpha_a * action.accel * action.accel + w.alpha_sigma * action.steer * action.steer;
}

double obstacle_cost(const sim::WorldState& w, const CostWeights& weights) {
  const sim::FrontVehicle fv = sim::front_vehicle(w, kObstacleGate);
  if (fv.index < 0 || fv.gap_s >= kObstacleGate) return 0.0;
  const double v_front = w.others[static_cast<std::size_t>(fv.index)].state.v;
  const double approach = std::max(0.0, w.ego.v - v_front);
  return weights.beta_s * (kObstacleGate - fv.gap_s) + weights.beta_v * approach;
}

StepCost step_cost(const sim::WorldState& pre, const sim::Action& action,
                   const sim::StepEvents& events, const CostWeights& weights) {
  StepCost out;
  // An ego already off the map contributes only the penalty-free terms it can.
  double lane = 0.0;
  try {
    lane = tracking_cost(sim::ego_lane_features(pre), action, weights);
  } catch (const Error&) {
    lane = weights.alpha_a * action.accel * action.accel +
           weights.alpha_sigma * action.steer * action.steer;
  }
  out.cost = lane + obstacle_cost(pre, weights);
  if (events.collision) out.cost += weights.collision_penalty;
  if (events.off_road) out.cost += weights.off_road_penalty;
  out.terminal = events.done;
  return out;
}

double observation_cost(const Vec& obs, const Vec& action, const CostWeights& w,
                        double lane_width) {
  double c = tracking_cost(obs.head<3>(), sim::Action{action[0], action[1]}, w);
  if (obs.size() >= sim::kMbObstacleDim) {
    const double rel_x = obs[3];
    const double rel_y = obs[4];
    const double rel_vx = obs[5];
    if (std::abs(rel_y) < 0.5 * lane_width && rel_x > 0.0 && rel_x < kObstacleGate) {
      c += w.beta_s * (kObstacleGate - rel_x) + w.beta_v * std::max(0.0, -rel_vx);
    }
  }
  return c;
}

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double smoothed_observation_cost(const Vec& obs, const Vec& action, const CostWeights& w,
                                 double lane_width, double smoothing) {
  if (!(smoothing > 0.0)) return observation_cost(obs, action, w, lane_width);
  double c = tracking_cost(obs.head<3>(), sim::Action{action[0], action[1]}, w);
  if (obs.size() >= sim::kMbObstacleDim) {
    const double rel_x = obs[3];
    const double rel_y = obs[4];
    const double rel_vx = obs[5];
    if (std::abs(rel_y) < 0.5 * lane_width && rel_x > 0.0) {
      const double ws = smoothing;
      const double wv = 0.1 * smoothing;
      c += w.beta_s * ws * softplus((kObstacleGate - rel_x) / ws) +
           w.beta_v * wv * softplus(-rel_vx / wv) * sigmoid((kObstacleGate - rel_x) / ws);
    }
  }
  return c;
}

Mat floor_eigenvalues(const Mat& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues().cwiseMax(floor);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

QuadraticCost expand_cost(const std::vector<Vec>& nominal_s, const std::vector<Vec>& nominal_a,
                          const CostFn& l) {
  if (nominal_s.size() != nominal_a.size()) throw Error("nominal length mismatch");
  const double h = kFiniteDifferenceStep;
  QuadraticCost q;
  for (std::size_t t = 0; t < nominal_s.size(); ++t) {
    const Eigen::Index ds = nominal_s[t].size();
    const Eigen::Index d = ds + nominal_a[t].size();
    Vec z(d);
    z << nominal_s[t], nominal_a[t];
    auto f = [&](const Vec& zz) { return l(zz.head(ds), zz.tail(d - ds)); };
    const double f0 = f(z);
    Vec fp(d), fm(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      Vec zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      fp[i] = f(zp);
      fm[i] = f(zm);
    }
    Vec g = (fp - fm) / (2.0 * h);
    Mat H(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      H(i, i) = (fp[i] - 2.0 * f0 + fm[i]) / (h * h);
      for (Eigen::Index j = i + 1; j < d; ++j) {
        Vec z1 = z, z2 = z, z3 = z, z4 = z;
        z1[i] += h; z1[j] += h;
        z2[i] += h; z2[j] -= h;
        z3[i] -= h; z3[j] += h;
        z4[i] -= h; z4[j] -= h;
        H(i, j) = H(j, i) = (f(z1) - f(z2) - f(z3) + f(z4)) / (4.0 * h * h);
      }
    }
    q.C.push_back(H);
    q.c.push_back(g);
    q.c0.push_back(f0);
    q.nominal.push_back(z);
  }
  return q;
}

QuadraticCost policy_nll_expansion(const std::vector<Vec>& nominal_s,
                                   const std::vector<Vec>& nominal_a,
                                   const LinearGaussianPolicy& prev) {
  if (static_cast<int>(nominal_s.size()) > prev.horizon()) throw Error("policy horizon too short");
  QuadraticCost q;
  for (std::size_t t = 0; t < nominal_s.size(); ++t) {
    const Eigen::Index ds = nominal_s[t].size();
    const Eigen::Index da = nominal_a[t].size();
    Eigen::LLT<Mat> llt(prev.C[t]);
    if (llt.info() != Eigen::Success) throw Error("degenerate policy");
    const Mat prec = llt.solve(Mat::Identity(da, da));
    Mat M(da, ds + da);
    M << -prev.K[t], Mat::Identity(da, da);
    Vec z(ds + da);
    z << nominal_s[t], nominal_a[t];
    const Vec r = M * z - prev.k[t];
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    q.C.push_back(symmetrize(M.transpose() * prec * M));
    q.c.push_back(M.transpose() * prec * r);
    q.c0.push_back(0.5 * r.dot(prec * r) +
                   0.5 * (logdet + static_cast<double>(da) * std::log(2.0 * std::numbers::pi)));
    q.nominal.push_back(z);
  }
  return q;
}

QuadraticCost combine_augmented(const QuadraticCost& cost, const QuadraticCost& nll, double lambda,
                                int dim_s) {
  if (!(lambda > 0.0)) throw Error("lambda must be positive");
  QuadraticCost q;
  for (int t = 0; t < cost.horizon(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    Mat C = symmetrize(cost.C[i] / lambda + nll.C[i]);
    const Eigen::Index da = C.rows() - dim_s;
    C.bottomRightCorner(da, da) = floor_eigenvalues(C.bottomRightCorner(da, da), kActionEigenFloor);
    q.C.push_back(C);
    q.c.push_back(cost.c[i] / lambda + nll.c[i]);
    q.c0.push_back(cost.c0[i] / lambda + nll.c0[i]);
    q.nominal.push_back(cost.nominal[i]);
  }
  return q;
}

QuadraticCost quadratize_cost(const std::vector<Vec>& nominal_s, const std::vector<Vec>& nominal_a,
                              double lambda, const LinearGaussianPolicy& prev_policy,
                              const CostFn& l) {
  if (!(lambda > 0.0)) throw Error("lambda must be positive");
  const QuadraticCost nll = policy_nll_expansion(nominal_s, nominal_a, prev_policy);
  const QuadraticCost base = expand_cost(nominal_s, nominal_a, l);
  const int dim_s = nominal_s.empty() ? 0 : static_cast<int>(nominal_s.front().size());
  return combine_augmented(base, nll, lambda, dim_s);
}

}  // namespace kinodrive::cost
