#include "kinodrive/cost.hpp"
#include "kinodrive/trajopt.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace kinodrive;
using namespace kinodrive::cost;

namespace {

sim::WorldState straight(double s, double v) {
  sim::ScenarioConfig cfg;
  sim::WorldState w = sim::spawn_scenario(cfg, 3);
  const sim::Pose2 p = w.road.lanes[0].pose_at(s);
  w.ego = {p.x, p.y, wrap_angle(p.heading), v};
  return w;
}

sim::OtherVehicle on_lane(const sim::WorldState& w, int lane, double s, double v) {
  const sim::Pose2 p = w.road.lanes[static_cast<std::size_t>(lane)].pose_at(s);
  sim::OtherVehicle o;
  o.state = {p.x, p.y, wrap_angle(p.heading), v};
  o.lane_id = lane;
  return o;
}

}  // namespace

TEST(Tracking, ZeroAtReference) {
  EXPECT_EQ(tracking_cost({0, 0, 6}, {0, 0}, CostWeights{}), 0.0);
}

TEST(Tracking, SingleTerm) {
  CostWeights w{};
  w.alpha_l = 1;
  w.alpha_y = w.alpha_v = w.alpha_a = w.alpha_sigma = 0;
  EXPECT_DOUBLE_EQ(tracking_cost({2, 0.3, 1}, {1, 0.2}, w), 4.0);
}

TEST(Tracking, NonNegative) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 1000; ++i)
    EXPECT_GE(tracking_cost({n(rng), n(rng), 5 * n(rng)}, {n(rng), n(rng)}, CostWeights{}), 0.0);
}

TEST(Obstacle, AdjacentLaneIgnored) {
  auto w = straight(10, 8);
  w.others = {on_lane(w, 1, 15, 6)};
  EXPECT_EQ(obstacle_cost(w, CostWeights{}), 0.0);
}

TEST(Obstacle, StrictGate) {
  auto w = straight(10, 8);
  w.others = {on_lane(w, 0, 30, 6)};
  EXPECT_EQ(obstacle_cost(w, CostWeights{}), 0.0);
}

TEST(Obstacle, MonotoneInDistance) {
  double prev = 1e300;
  for (double gap = 1; gap < 20; gap += 0.5) {
    auto w = straight(10, 8);
    w.others = {on_lane(w, 0, 10 + gap, 6)};
    const double c = obstacle_cost(w, CostWeights{});
    EXPECT_LE(c, prev);
    prev = c;
  }
}

TEST(Obstacle, RecedingAddsNothing) {
  auto w = straight(10, 5);
  w.others = {on_lane(w, 0, 20, 9)};
  EXPECT_DOUBLE_EQ(obstacle_cost(w, CostWeights{}), 0.5 * 10);
}

TEST(StepCost, NominalIsTrackingOnly) {
  auto w = straight(10, 6);
  const sim::Action a{0.2, 0.01};
  const auto [n, ev] = sim::step_world(w, a);
  const StepCost c = step_cost(w, a, ev, CostWeights{});
  EXPECT_DOUBLE_EQ(c.cost, tracking_cost(sim::ego_lane_features(w), a, CostWeights{}));
  EXPECT_FALSE(c.terminal);
}

TEST(StepCost, OffRoadTerminalWithoutPenalty) {
  auto w = straight(10, 6);
  w.ego.yaw = 1.2;
  w.ego.y += 3.0;
  sim::StepEvents ev;
  sim::WorldState cur = w;
  sim::WorldState pre = w;
  while (!ev.done) {
    pre = cur;
    std::tie(cur, ev) = sim::step_world(cur, {0, 0});
  }
  ASSERT_TRUE(ev.off_road);
  const StepCost c = step_cost(pre, {0, 0}, ev, CostWeights{});
  EXPECT_TRUE(c.terminal);
  EXPECT_LT(c.cost, 100.0);
  CostWeights pen{};
  pen.off_road_penalty = 500;
  EXPECT_NEAR(step_cost(pre, {0, 0}, ev, pen).cost - c.cost, 500.0, 1e-9);
}

TEST(Quadratize, LambdaLargeLeavesPolicyTerm) {
  const int T = 3;
  std::vector<Vec> ns, na;
  LinearGaussianPolicy prev = opt::pd_init_policy(3, 2, T);
  for (int t = 0; t < T; ++t) {
    ns.push_back((Vec(3) << 0.2, 0.01, 5).finished());
    na.push_back((Vec(2) << 0.1, 0.0).finished());
  }
  const CostFn l = [](const Vec& s, const Vec& a) { return observation_cost(s, a, CostWeights{}); };
  const QuadraticCost q = quadratize_cost(ns, na, 1e9, prev, l);
  const QuadraticCost nll = policy_nll_expansion(ns, na, prev);
  for (int t = 0; t < T; ++t) EXPECT_LT((q.C[t] - nll.C[t]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Quadratize, DegeneratePolicy) {
  LinearGaussianPolicy p = opt::pd_init_policy(3, 2, 1);
  p.C[0] = Mat::Zero(2, 2);
  const std::vector<Vec> ns{Vec::Zero(3)}, na{Vec::Zero(2)};
  EXPECT_THROW(policy_nll_expansion(ns, na, p), Error);
}

TEST(Quadratize, GateStraddleStaysFinite) {
  CostWeights w{};
  std::vector<Vec> ns, na;
  for (double gap : {19.9, 20.0, 20.1}) {
    ns.push_back((Vec(7) << 0, 0, 6, gap, 0, -2, 0).finished());
    na.push_back(Vec::Zero(2));
  }
  const LinearGaussianPolicy prev = opt::pd_init_policy(7, 2, 3);
  const CostFn l = [&](const Vec& s, const Vec& a) { return observation_cost(s, a, w); };
  const QuadraticCost q = quadratize_cost(ns, na, 1.0, prev, l);
  for (int t = 0; t < 3; ++t) {
    EXPECT_TRUE(q.C[t].allFinite());
    Eigen::SelfAdjointEigenSolver<Mat> es(q.C[t].bottomRightCorner(2, 2));
    EXPECT_GE(es.eigenvalues().minCoeff(), 1e-6 - 1e-12);
  }
}

TEST(Quadratize, LinearTermMatchesGradient) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  const CostWeights w{};
  LinearGaussianPolicy prev = opt::pd_init_policy(3, 2, 20);
  const CostFn l = [&](const Vec& s, const Vec& a) { return observation_cost(s, a, w); };
  std::vector<Vec> ns, na;
  for (int t = 0; t < 20; ++t) {
    ns.push_back((Vec(3) << 0.5 * n(rng), 0.1 * n(rng), 6 + n(rng)).finished());
    na.push_back((Vec(2) << 0.5 * n(rng), 0.05 * n(rng)).finished());
  }
  const double lambda = 2.0;
  const QuadraticCost q = quadratize_cost(ns, na, lambda, prev, l);
  for (int t = 0; t < 20; ++t) {
    auto aug = [&](const Vec& z) {
      const Vec s = z.head(3), a = z.tail(2);
      const Vec r = a - prev.mean_action(t, s);
      return l(s, a) / lambda + 0.5 * r.dot(prev.C[t].inverse() * r);
    };
    Vec z(5);
    z << ns[t], na[t];
    for (int i = 0; i < 5; ++i) {
      Vec zp = z, zm = z;
      zp[i] += 1e-5;
      zm[i] -= 1e-5;
      const double g = (aug(zp) - aug(zm)) / 2e-5;
      EXPECT_LE(std::abs(g - q.c[t][i]), 1e-4 * std::max(1.0, std::abs(g)));
    }
  }
}

TEST(Smoothing, ConvergesToExact) {
  const CostWeights w{};
  const Vec s = (Vec(7) << 0.1, 0.0, 6, 12, 0.3, -1.5, 0).finished();
  const Vec a = (Vec(2) << 0.1, 0.01).finished();
  EXPECT_NEAR(smoothed_observation_cost(s, a, w, 3.5, 1e-6), observation_cost(s, a, w), 1e-5);
}
