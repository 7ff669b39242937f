#include "kinodrive/sim.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace kinodrive;
using namespace kinodrive::sim;

namespace {

WorldState empty_straight(double s, double v) {
  ScenarioConfig cfg;
  cfg.horizon = 50;
  WorldState w = spawn_scenario(cfg, 7);
  const Pose2 p = w.road.lanes[0].pose_at(s);
  w.ego = {p.x, p.y, wrap_angle(p.heading), v};
  return w;
}

OtherVehicle on_lane(const WorldState& w, int lane, double s, double v) {
  const Pose2 p = w.road.lanes[static_cast<std::size_t>(lane)].pose_at(s);
  OtherVehicle o;
  o.state = {p.x, p.y, wrap_angle(p.heading), v};
  o.lane_id = lane;
  return o;
}

}  // namespace

TEST(Vehicle, ZeroActionCoasts) {
  const VehicleState s = step_vehicle({1, 2, 0.3, 4}, {0, 0}, 0.1);
  EXPECT_NEAR(s.x, 1 + 0.4 * std::cos(0.3), 1e-12);
  EXPECT_NEAR(s.y, 2 + 0.4 * std::sin(0.3), 1e-12);
  EXPECT_DOUBLE_EQ(s.yaw, 0.3);
  EXPECT_DOUBLE_EQ(s.v, 4);
}

TEST(Vehicle, RejectsBadInput) {
  EXPECT_THROW(step_vehicle({0, 0, 0, NAN}, {0, 0}, 0.1), Error);
  EXPECT_THROW(step_vehicle({0, 0, 0, 1}, {10, 0}, 0.1), Error);
  EXPECT_THROW(step_vehicle({0, 0, 0, 1}, {0, 1.0}, 0.1), Error);
}

TEST(Vehicle, SpeedNonNegativeAndYawWrapped) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 5000; ++i) {
    VehicleState s{10 * u(rng), 10 * u(rng), std::numbers::pi * u(rng), 5 + 5 * u(rng)};
    const Action a{3 * u(rng), 0.6 * u(rng)};
    for (int k = 0; k < 20; ++k) s = step_vehicle(s, a, 0.1);
    EXPECT_GE(s.v, 0.0);
    EXPECT_GT(s.yaw, -std::numbers::pi);
    EXPECT_LE(s.yaw, std::numbers::pi);
  }
}

TEST(Vehicle, ClampAction) {
  const Action a = clamp_action({5, -2});
  EXPECT_DOUBLE_EQ(a.accel, 3.0);
  EXPECT_DOUBLE_EQ(a.steer, -0.6);
}

TEST(Frenet, StraightLine) {
  const Centerline cl({0, 0, 0}, {{100, 0}});
  const Frenet f = frenet_project(cl, {3, 0.5, 0, 1});
  EXPECT_NEAR(f.delta_y, 0.5, 1e-12);
  EXPECT_NEAR(f.delta_phi, 0.0, 1e-12);
  EXPECT_NEAR(f.s, 3.0, 1e-12);
}

TEST(Frenet, OnCenterlineIsIdentity) {
  for (Scenario sc : {Scenario::straight, Scenario::turn90, Scenario::roundabout, Scenario::town}) {
    ScenarioConfig cfg;
    cfg.scenario = sc;
    const Road road = build_road(cfg);
    for (const Centerline& cl : road.lanes) {
      for (int i = 0; i <= 50; ++i) {
        const double s = cl.total_length() * i / 50.0;
        const Pose2 p = cl.pose_at(s);
        const Frenet f = frenet_project(cl, {p.x, p.y, wrap_angle(p.heading), 1});
        EXPECT_NEAR(f.delta_y, 0.0, 1e-9) << to_string(sc) << " s=" << s;
        EXPECT_NEAR(f.delta_phi, 0.0, 1e-9);
      }
    }
  }
}

TEST(Frenet, OffMap) {
  const Centerline cl({0, 0, 0}, {{100, 0}});
  EXPECT_THROW(frenet_project(cl, {50, 80, 0, 1}), Error);
}

TEST(Idm, FreeRoadAtDesiredSpeed) {
  const IdmParams p;
  EXPECT_LT(std::abs(idm_accel(1e9, p.v0, p.v0, p)), 1e-6 * p.a_max);
}

TEST(Idm, StandstillAtMinimumGap) {
  const IdmParams p;
  EXPECT_NEAR(idm_accel(p.s0, 0, 0, p), 0.0, 1e-12);
}

TEST(Idm, NonPositiveGapBrakesHard) {
  const IdmParams p;
  EXPECT_DOUBLE_EQ(idm_accel(0.0, 5, 5, p), -2 * p.b_comf);
  EXPECT_DOUBLE_EQ(idm_accel(-1.0, 5, 5, p), -2 * p.b_comf);
}

TEST(Scenario, EmptyStraight) {
  ScenarioConfig cfg;
  const WorldState w = spawn_scenario(cfg, 7);
  EXPECT_TRUE(w.others.empty());
  EXPECT_GE(w.ego.v, 4.0);
  EXPECT_LE(w.ego.v, 8.0);
}

TEST(Scenario, Deterministic) {
  ScenarioConfig cfg;
  cfg.scenario = Scenario::town;
  cfg.n_vehicles = 8;
  EXPECT_EQ(spawn_scenario(cfg, 11), spawn_scenario(cfg, 11));
  EXPECT_NE(spawn_scenario(cfg, 11).ego, spawn_scenario(cfg, 12).ego);
}

TEST(Scenario, VehiclesSpacedApart) {
  ScenarioConfig cfg;
  cfg.scenario = Scenario::town;
  cfg.n_vehicles = 10;
  for (std::uint64_t seed = 1; seed < 20; ++seed) {
    const WorldState w = spawn_scenario(cfg, seed);
    EXPECT_FALSE(ego_collides(w));
    for (std::size_t i = 0; i < w.others.size(); ++i) {
      for (std::size_t j = i + 1; j < w.others.size(); ++j) {
        const auto& a = w.others[i];
        const auto& b = w.others[j];
        EXPECT_GE(std::hypot(a.state.x - b.state.x, a.state.y - b.state.y), 2 * kVehicleRadius);
        if (a.lane_id != b.lane_id) continue;
        const Centerline& lane = w.road.lanes[static_cast<std::size_t>(a.lane_id)];
        const double gap = std::abs(frenet_project_unbounded(lane, a.state).s - frenet_project_unbounded(lane, b.state).s);
        EXPECT_GE(gap, 8.0 - 1e-9);
      }
    }
  }
}

TEST(Scenario, Overfull) {
  ScenarioConfig cfg;
  cfg.n_vehicles = 100;
  EXPECT_THROW(spawn_scenario(cfg, 1), Error);
}

TEST(World, OnlyEgoMovesWhenAlone) {
  WorldState w = empty_straight(10, 5);
  const auto [n, ev] = step_world(w, {0, 0});
  EXPECT_NE(n.ego, w.ego);
  EXPECT_TRUE(n.others.empty());
  EXPECT_FALSE(ev.collision);
  EXPECT_EQ(n.t, 1);
}

TEST(World, CollisionTerminates) {
  WorldState w = empty_straight(10, 5);
  w.others = {on_lane(w, 0, 11.5, 5)};
  const auto [n, ev] = step_world(w, {0, 0});
  EXPECT_TRUE(ev.collision);
  EXPECT_TRUE(ev.done);
  EXPECT_THROW(step_world(n, {0, 0}), Error);
}

TEST(World, HorizonEndsEpisode) {
  WorldState w = empty_straight(10, 5);
  w.cfg.horizon = 3;
  StepEvents ev;
  for (int i = 0; i < 3; ++i) std::tie(w, ev) = step_world(w, {0, 0});
  EXPECT_TRUE(ev.done);
  EXPECT_FALSE(ev.collision);
}

TEST(World, DeterministicTrajectory) {
  ScenarioConfig cfg;
  cfg.scenario = Scenario::town;
  cfg.n_vehicles = 8;
  cfg.horizon = 100;
  auto run = [&] {
    WorldState w = spawn_scenario(cfg, 5);
    std::vector<VehicleState> out;
    for (int t = 0; t < 100 && !w.done; ++t) {
      w = step_world(w, {0.3 * std::sin(t * 0.1), 0.05 * std::cos(t * 0.2)}).first;
      out.push_back(w.ego);
      for (const auto& o : w.others) out.push_back(o.state);
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Observe, CenterlineAtReference) {
  WorldState w = empty_straight(10, 6);
  const Vec o = observe_mb(w, false);
  ASSERT_EQ(o.size(), 3);
  EXPECT_NEAR(o[0], 0, 1e-9);
  EXPECT_NEAR(o[1], 0, 1e-9);
  EXPECT_NEAR(o[2], 6, 1e-12);
}

TEST(Observe, ObstacleSentinel) {
  WorldState w = empty_straight(10, 6);
  const Vec o = observe_mb(w, true);
  ASSERT_EQ(o.size(), 7);
  EXPECT_EQ(o.tail(4), (Vec(4) << 50, 0, 0, 0).finished());
}

TEST(Observe, StateVectorEmptyTail) {
  WorldState w = empty_straight(10, 6);
  const Vec sv = observe_state_vector(w);
  ASSERT_EQ(sv.size(), kStateVectorDim);
  EXPECT_TRUE(sv.tail(40).isZero(0));
}

TEST(Observe, StateVectorKeepsNearestTen) {
  WorldState w = empty_straight(5, 6);
  for (int i = 0; i < 6; ++i) {
    w.others.push_back(on_lane(w, 0, 15 + 4.0 * i, 6));
    w.others.push_back(on_lane(w, 1, 17 + 4.0 * i, 6));
  }
  const Vec sv = observe_state_vector(w);
  double prev = 0;
  for (int k = 0; k < kStateVectorSlots; ++k) {
    const double d = std::hypot(sv[3 + 4 * k], sv[4 + 4 * k]);
    EXPECT_GT(d, 0);
    EXPECT_GE(d, prev);
    prev = d;
  }
}

TEST(Observe, StateVectorOrderInvariant) {
  ScenarioConfig cfg;
  cfg.scenario = Scenario::town;
  cfg.n_vehicles = 10;
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 1; seed < 10; ++seed) {
    WorldState w = spawn_scenario(cfg, seed);
    const Vec ref = observe_state_vector(w);
    std::shuffle(w.others.begin(), w.others.end(), rng);
    EXPECT_EQ(observe_state_vector(w), ref);
  }
}

TEST(Observe, GraphTopology) {
  WorldState w = empty_straight(10, 6);
  GraphObs g = observe_graph(w);
  EXPECT_EQ(g.vertices.size(), 1u);
  EXPECT_TRUE(g.edges.empty());
  w.others = {on_lane(w, 0, 20, 5), on_lane(w, 1, 25, 5), on_lane(w, 0, 35, 5)};
  g = observe_graph(w);
  EXPECT_EQ(g.vertices.size(), 4u);
  ASSERT_EQ(g.edges.size(), 3u);
  for (const auto& e : g.edges) {
    EXPECT_GE(e.src, 1);
    EXPECT_EQ(e.feature.size(), 4);
  }
  EXPECT_EQ(g.vertices[0][3], 0.0);
}

TEST(Observe, GraphExcludesOutOfRange) {
  WorldState w = empty_straight(10, 6);
  w.others = {on_lane(w, 0, 20, 5), on_lane(w, 0, 90, 5)};
  EXPECT_EQ(observe_graph(w).edges.size(), 1u);
}

TEST(Dump, Header) {
  std::ostringstream os;
  write_trajectory_csv(os, {{0, {1, 2, 0, 3}, {0.5, 0.1}, false}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "t,ego_x,ego_y,ego_yaw,ego_v,accel,steer,collision");
}
