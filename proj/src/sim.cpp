#include "kinodrive/sim.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <ostream>
#include <tuple>

namespace kinodrive::sim {

namespace {

constexpr double kPi = std::numbers::pi;

bool finite_state(const VehicleState& s) {
  return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.yaw) && std::isfinite(s.v);
}

VehicleState integrate_bicycle(const VehicleState& s, double accel, double steer, double dt,
                               double wheelbase) {
  VehicleState n;
  n.x = s.x + s.v * std::cos(s.yaw) * dt;
  n.y = s.y + s.v * std::sin(s.yaw) * dt;
  n.yaw = wrap_angle(s.yaw + (s.v / wheelbase) * std::tan(steer) * dt);
  n.v = std::max(0.0, s.v + accel * dt);
  return n;
}

struct Projection {
  double s = 0.0;
  double dist = std::numeric_limits<double>::infinity();
  Pose2 foot;
};

// Closest point on a single segment, arclength measured from the segment start.
Projection project_segment(const Segment& seg, double px, double py) {
  const double h = seg.start.heading;
  double ds = 0.0;
  if (seg.curvature == 0.0) {
    ds = (px - seg.start.x) * std::cos(h) + (py - seg.start.y) * std::sin(h);
    ds = std::clamp(ds, 0.0, seg.length);
  } else {
    const double r = 1.0 / seg.curvature;
    const double cx = seg.start.x - r * std::sin(h);
    const double cy = seg.start.y + r * std::cos(h);
    const double psi = std::atan2(py - cy, px - cx);
    const double base = h - (seg.curvature > 0 ? kPi / 2 : -kPi / 2);
    ds = wrap_angle(psi - base) / seg.curvature;
    if (ds < 0.0 || ds > seg.length) {
      const Pose2 a = seg.at(0.0);
      const Pose2 b = seg.at(seg.length);
      const double da = std::hypot(px - a.x, py - a.y);
      const double db = std::hypot(px - b.x, py - b.y);
      ds = da <= db ? 0.0 : seg.length;
    }
  }
  Projection p;
  p.s = ds;
  p.foot = seg.at(ds);
  p.dist = std::hypot(px - p.foot.x, py - p.foot.y);
  return p;
}

}  // namespace

Action clamp_action(const Action& a, const VehicleLimits& limits) {
  return {std::clamp(a.accel, -limits.accel_max, limits.accel_max),
          std::clamp(a.steer, -limits.steer_max, limits.steer_max)};
}

VehicleState step_vehicle(const VehicleState& state, const Action& action, double dt,
                          const VehicleLimits& limits) {
  if (!finite_state(state) || !std::isfinite(action.accel) || !std::isfinite(action.steer) ||
      !std::isfinite(dt) || dt <= 0.0) {
    throw Error("invalid state");
  }
  if (std::abs(action.accel) > limits.accel_max || std::abs(action.steer) > limits.steer_max) {
    throw Error("action out of bounds");
  }
  return integrate_bicycle(state, action.accel, action.steer, dt, limits.wheelbase);
}

// ---------------------------------------------------------------------------

Pose2 Segment::at(double ds) const {
  const double h = start.heading;
  if (curvature == 0.0) {
    return {start.x + ds * std::cos(h), start.y + ds * std::sin(h), wrap_angle(h)};
  }
  const double th = h + curvature * ds;
  return {start.x + (std::sin(th) - std::sin(h)) / curvature,
          start.y - (std::cos(th) - std::cos(h)) / curvature, wrap_angle(th)};
}

Centerline::Centerline(Pose2 start, const std::vector<Piece>& pieces) {
  if (pieces.empty()) throw Error("empty centerline");
  Pose2 cur = start;
  double s = 0.0;
  for (const auto& p : pieces) {
    if (!(p.length > 0.0) || !std::isfinite(p.curvature)) throw Error("invalid centerline piece");
    Segment seg{cur, p.length, p.curvature};
    segments_.push_back(seg);
    seg_start_s_.push_back(s);
    s += p.length;
    cur = seg.at(p.length);
  }
  total_length_ = s;
}

Pose2 Centerline::pose_at(double s) const {
  if (s <= 0.0) {
    const Pose2 p = segments_.front().start;
    return {p.x + s * std::cos(p.heading), p.y + s * std::sin(p.heading), wrap_angle(p.heading)};
  }
  if (s >= total_length_) {
    const Pose2 p = segments_.back().at(segments_.back().length);
    const double ext = s - total_length_;
    return {p.x + ext * std::cos(p.heading), p.y + ext * std::sin(p.heading), p.heading};
  }
  const auto it = std::upper_bound(seg_start_s_.begin(), seg_start_s_.end(), s);
  const std::size_t i = static_cast<std::size_t>(std::distance(seg_start_s_.begin(), it)) - 1;
  return segments_[i].at(s - seg_start_s_[i]);
}

Centerline Centerline::offset(double d) const {
  const Pose2 s0 = segments_.front().start;
  const Pose2 start{s0.x - d * std::sin(s0.heading), s0.y + d * std::cos(s0.heading), s0.heading};
  std::vector<Piece> pieces;
  for (const auto& seg : segments_) {
    const double scale = 1.0 - seg.curvature * d;
    if (scale <= 0.0) throw Error("offset exceeds curvature radius");
    pieces.push_back({seg.length * scale, seg.curvature / scale});
  }
  return Centerline(start, pieces);
}

Frenet frenet_project_unbounded(const Centerline& cl, const VehicleState& pose) {
  Projection best;
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < cl.segments().size(); ++i) {
    const Projection p = project_segment(cl.segments()[i], pose.x, pose.y);
    if (p.dist < best.dist) {
      best = p;
      best_i = i;
    }
  }
  double s = 0.0;
  for (std::size_t i = 0; i < best_i; ++i) s += cl.segments()[i].length;
  s += best.s;

  Pose2 foot = best.foot;
  // Extrapolate along the end tangents.
  const double tx = std::cos(foot.heading);
  const double ty = std::sin(foot.heading);
  const double along = (pose.x - foot.x) * tx + (pose.y - foot.y) * ty;
  if ((s <= 0.0 && along < 0.0) || (s >= cl.total_length() && along > 0.0)) {
    s += along;
    foot.x += along * tx;
    foot.y += along * ty;
  }
  Frenet f;
  f.s = s;
  f.delta_y = tx * (pose.y - foot.y) - ty * (pose.x - foot.x);
  f.delta_phi = wrap_angle(pose.yaw - foot.heading);
  return f;
}

Frenet frenet_project(const Centerline& cl, const VehicleState& pose) {
  if (!finite_state(pose)) throw Error("invalid state");
  Projection best;
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < cl.segments().size(); ++i) {
    const Projection p = project_segment(cl.segments()[i], pose.x, pose.y);
    if (p.dist < best.dist) {
      best = p;
      best_i = i;
    }
  }
  if (best.dist > kMaxProjectionDistance) throw Error("off map");
  double s = best.s;
  for (std::size_t i = 0; i < best_i; ++i) s += cl.segments()[i].length;
  const double tx = std::cos(best.foot.heading);
  const double ty = std::sin(best.foot.heading);
  Frenet f;
  f.s = std::clamp(s, 0.0, cl.total_length());
  f.delta_y = tx * (pose.y - best.foot.y) - ty * (pose.x - best.foot.x);
  f.delta_phi = wrap_angle(pose.yaw - best.foot.heading);
  return f;
}

// ---------------------------------------------------------------------------

double idm_accel(double gap, double v, double v_lead, const IdmParams& p) {
  const double floor = -2.0 * p.b_comf;
  if (gap <= 0.0) return floor;
  const double dyn = v * p.time_headway + v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b_comf));
  const double s_star = p.s0 + std::max(0.0, dyn);
  const double a =
      p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - (s_star / gap) * (s_star / gap));
  return std::clamp(a, floor, p.a_max);
}

// ---------------------------------------------------------------------------

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::straight: return "straight";
    case Scenario::turn90: return "turn90";
    case Scenario::roundabout: return "roundabout";
    case Scenario::town: return "town";
  }
  return "unknown";
}

Scenario parse_scenario(const std::string& name) {
  if (name == "straight") return Scenario::straight;
  if (name == "turn90") return Scenario::turn90;
  if (name == "roundabout") return Scenario::roundabout;
  if (name == "town") return Scenario::town;
  throw Error("unknown scenario: " + name);
}

Road build_road(const ScenarioConfig& cfg) {
  if (cfg.n_lanes < 1) throw Error("n_lanes must be positive");
  std::vector<Centerline::Piece> pieces;
  switch (cfg.scenario) {
    case Scenario::straight:
      pieces = {{300.0, 0.0}};
      break;
    case Scenario::turn90:
      pieces = {{30.0, 0.0}, {20.0 * kPi / 2, 1.0 / 20.0}, {120.0, 0.0}};
      break;
    case Scenario::roundabout:
      // Right-hand entry, then half a circulation to the left.
      pieces = {{30.0, 0.0}, {15.0 * kPi / 4, -1.0 / 15.0}, {25.0 * kPi, 1.0 / 25.0}, {80.0, 0.0}};
      break;
    case Scenario::town:
      pieces = {{100.0, 0.0},         {30.0 * kPi / 2, 1.0 / 30.0}, {80.0, 0.0},
                {40.0 * kPi / 2, -1.0 / 40.0}, {100.0, 0.0},    {40.0 * kPi / 2, 1.0 / 40.0},
                {140.0, 0.0}};
      break;
  }
  Road road;
  road.lane_width = cfg.lane_width;
  const Centerline base(Pose2{0.0, 0.0, 0.0}, pieces);
  road.lanes.push_back(base);
  for (int k = 1; k < cfg.n_lanes; ++k) road.lanes.push_back(base.offset(k * cfg.lane_width));
  return road;
}

WorldState spawn_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.n_vehicles < 0 || cfg.n_vehicles > 100) throw Error("n_vehicles out of range [0, 100]");
  if (cfg.horizon <= 0) throw Error("horizon must be positive");
  WorldState w;
  w.cfg = cfg;
  w.road = build_road(cfg);
  w.rng.seed(seed);
  auto& rng = w.rng;

  int n = cfg.n_vehicles;
  if (cfg.randomize_count && n > 0) {
    n = std::uniform_int_distribution<int>(std::min(3, n), n)(rng);
  }

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const Centerline& lane0 = w.road.lanes[0];
  const double ego_s = uniform(0.0, 2.0);
  const double ego_dy = uniform(-0.5, 0.5);
  const double ego_dphi = uniform(-0.1, 0.1);
  const double ego_v = uniform(cfg.ego_v_min, cfg.ego_v_max);
  const Pose2 p0 = lane0.pose_at(ego_s);
  w.ego = {p0.x - ego_dy * std::sin(p0.heading), p0.y + ego_dy * std::cos(p0.heading),
           wrap_angle(p0.heading + ego_dphi), ego_v};

  auto place = [&](int lane, double s, const IdmParams& idm, double v) {
    const Pose2 p = w.road.lanes[static_cast<std::size_t>(lane)].pose_at(s);
    w.others.push_back({VehicleState{p.x, p.y, p.heading, v}, lane, idm});
  };

  double obstacle_s = -1e9;
  if (cfg.front_obstacle) {
    obstacle_s = ego_s + uniform(25.0, 35.0);
    IdmParams idm;
    idm.v0 = cfg.obstacle_speed;
    place(0, obstacle_s, idm, cfg.obstacle_speed);
  }

  // Traffic occupies 10 m slots with +-1 m jitter, which keeps centers >= 8 m apart.
  constexpr double kSlot = 10.0;
  const double s_begin = ego_s + 12.0;
  std::vector<std::pair<int, double>> slots;
  for (int lane = 0; lane < cfg.n_lanes; ++lane) {
    const double len = w.road.lanes[static_cast<std::size_t>(lane)].total_length();
    for (double c = s_begin + kSlot / 2; c + kSlot / 2 <= len - 5.0; c += kSlot) {
      if (lane == 0 && std::abs(c - obstacle_s) < kSlot) continue;
      slots.emplace_back(lane, c);
    }
  }
  if (static_cast<std::size_t>(n) > slots.size()) throw Error("scenario overfull");
  for (int i = 0; i < n; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        std::uniform_int_distribution<std::size_t>(0, slots.size() - 1 - static_cast<std::size_t>(i))(rng);
    std::swap(slots[static_cast<std::size_t>(i)], slots[j]);
  }
  std::sort(slots.begin(), slots.begin() + n);
  for (int i = 0; i < n; ++i) {
    const auto [lane, center] = slots[static_cast<std::size_t>(i)];
    const double s = center + uniform(-1.0, 1.0);
    IdmParams idm;
    idm.v0 = uniform(cfg.traffic_v0_min, cfg.traffic_v0_max);
    const double v = idm.v0 * uniform(0.5, 1.0);
    place(lane, s, idm, v);
  }
  return w;
}

int nearest_lane(const Road& road, const VehicleState& pose) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < road.lanes.size(); ++k) {
    const double d = std::abs(frenet_project_unbounded(road.lanes[k], pose).delta_y);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

bool ego_collides(const WorldState& w) {
  for (const auto& o : w.others) {
    if (std::hypot(o.state.x - w.ego.x, o.state.y - w.ego.y) < 2.0 * kVehicleRadius) return true;
  }
  return false;
}

bool ego_off_road(const WorldState& w) {
  const Centerline& lane0 = w.road.lanes[0];
  Frenet f;
  try {
    f = frenet_project(lane0, w.ego);
  } catch (const Error&) {
    return true;
  }
  const double half = 0.5 * w.road.lane_width + w.cfg.offroad_margin;
  const double left = (static_cast<double>(w.road.lanes.size()) - 1.0) * w.road.lane_width + half;
  return f.delta_y < -half || f.delta_y > left;
}

std::pair<WorldState, StepEvents> step_world(const WorldState& w, const Action& ego_action) {
  if (w.done) throw Error("episode finished");
  WorldState n = w;
  n.ego = step_vehicle(w.ego, clamp_action(ego_action, w.cfg.limits), kDt, w.cfg.limits);

  // Leaders are resolved on the pre-step state so all vehicles update synchronously.
  const std::size_t m = w.others.size();
  std::vector<double> s_on_lane(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& lane = w.road.lanes[static_cast<std::size_t>(w.others[i].lane_id)];
    s_on_lane[i] = frenet_project_unbounded(lane, w.others[i].state).s;
  }
  const int ego_lane = nearest_lane(w.road, w.ego);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& me = w.others[i];
    const auto& lane = w.road.lanes[static_cast<std::size_t>(me.lane_id)];
    double gap = std::numeric_limits<double>::infinity();
    double v_lead = me.state.v;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || w.others[j].lane_id != me.lane_id) continue;
      const double ds = s_on_lane[j] - s_on_lane[i];
      if (ds > 0.0 && ds < gap) {
        gap = ds;
        v_lead = w.others[j].state.v;
      }
    }
    if (ego_lane == me.lane_id) {
      const double ds = frenet_project_unbounded(lane, w.ego).s - s_on_lane[i];
      if (ds > 0.0 && ds < gap) {
        gap = ds;
        v_lead = w.ego.v;
      }
    }
    const double accel = std::isinf(gap) ? idm_accel(1e9, me.state.v, v_lead, me.idm)
                                          : idm_accel(gap - 2.0 * kVehicleRadius, me.state.v,
                                                      v_lead, me.idm);
    // Pure pursuit onto the own lane.
    const double lookahead = std::max(4.0, me.state.v * 1.0);
    const Pose2 target = lane.pose_at(s_on_lane[i] + lookahead);
    const double alpha =
        wrap_angle(std::atan2(target.y - me.state.y, target.x - me.state.x) - me.state.yaw);
    double steer = std::atan(2.0 * w.cfg.limits.wheelbase * std::sin(alpha) / lookahead);
    steer = std::clamp(steer, -w.cfg.limits.steer_max, w.cfg.limits.steer_max);
    n.others[i].state = integrate_bicycle(me.state, accel, steer, kDt, w.cfg.limits.wheelbase);
  }

  n.t = w.t + 1;
  StepEvents ev;
  ev.collision = ego_collides(n);
  ev.off_road = ego_off_road(n);
  ev.done = ev.collision || ev.off_road || n.t >= n.cfg.horizon;
  n.done = ev.done;
  return {std::move(n), ev};
}

// ---------------------------------------------------------------------------

Eigen::Vector4d relative_in_ego_frame(const VehicleState& ego, const VehicleState& other) {
  const double c = std::cos(ego.yaw);
  const double s = std::sin(ego.yaw);
  const double dx = other.x - ego.x;
  const double dy = other.y - ego.y;
  const double dvx = other.v * std::cos(other.yaw) - ego.v * c;
  const double dvy = other.v * std::sin(other.yaw) - ego.v * s;
  return {c * dx + s * dy, -s * dx + c * dy, c * dvx + s * dvy, -s * dvx + c * dvy};
}

Eigen::Vector3d ego_lane_features(const WorldState& w) {
  const Frenet f = frenet_project(w.road.lanes[0], w.ego);
  return {f.delta_y, f.delta_phi, w.ego.v};
}

FrontVehicle front_vehicle(const WorldState& w, double range) {
  FrontVehicle best;
  const int lane = nearest_lane(w.road, w.ego);
  const auto& cl = w.road.lanes[static_cast<std::size_t>(lane)];
  const double ego_s = frenet_project_unbounded(cl, w.ego).s;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.others.size(); ++i) {
    if (nearest_lane(w.road, w.others[i].state) != lane) continue;
    const double gap = frenet_project_unbounded(cl, w.others[i].state).s - ego_s;
    if (gap > 0.0 && gap <= range && gap < best_gap) {
      best_gap = gap;
      best.index = static_cast<int>(i);
      best.gap_s = gap;
    }
  }
  return best;
}

Vec observe_mb(const WorldState& w, bool with_obstacle) {
  const Eigen::Vector3d ego = ego_lane_features(w);
  if (!with_obstacle) return ego;
  Vec obs(kMbObstacleDim);
  obs.head<3>() = ego;
  const FrontVehicle fv = front_vehicle(w);
  if (fv.index < 0) {
    obs.tail<4>() << kDetectRange, 0.0, 0.0, 0.0;
  } else {
    obs.tail<4>() = relative_in_ego_frame(w.ego, w.others[static_cast<std::size_t>(fv.index)].state);
  }
  return obs;
}

namespace {

// In-range vehicles relative to the ego, sorted by distance then features.
std::vector<Eigen::Vector4d> sorted_neighbours(const WorldState& w) {
  std::vector<std::pair<double, Eigen::Vector4d>> rel;
  for (const auto& o : w.others) {
    const double d = std::hypot(o.state.x - w.ego.x, o.state.y - w.ego.y);
    if (d <= kDetectRange) rel.emplace_back(d, relative_in_ego_frame(w.ego, o.state));
  }
  std::sort(rel.begin(), rel.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return std::lexicographical_compare(a.second.data(), a.second.data() + 4, b.second.data(),
                                        b.second.data() + 4);
  });
  std::vector<Eigen::Vector4d> out;
  out.reserve(rel.size());
  for (auto& r : rel) out.push_back(r.second);
  return out;
}

}  // namespace

Vec observe_state_vector(const WorldState& w) {
  Vec obs = Vec::Zero(kStateVectorDim);
  obs.head<3>() = ego_lane_features(w);
  const auto rel = sorted_neighbours(w);
  const std::size_t k = std::min<std::size_t>(rel.size(), kStateVectorSlots);
  for (std::size_t i = 0; i < k; ++i) obs.segment<4>(3 + 4 * static_cast<Eigen::Index>(i)) = rel[i];
  return obs;
}

GraphObs observe_graph(const WorldState& w) {
  GraphObs g;
  Vec ego(4);
  ego << ego_lane_features(w), 0.0;
  g.vertices.push_back(ego);
  const auto rel = sorted_neighbours(w);
  for (std::size_t i = 0; i < rel.size(); ++i) {
    g.vertices.emplace_back(rel[i]);
    g.edges.push_back({static_cast<int>(i + 1), Vec(rel[i])});
  }
  return g;
}

void write_trajectory_csv(std::ostream& os, const std::vector<DumpRow>& rows) {
  os << "t,ego_x,ego_y,ego_yaw,ego_v,accel,steer,collision\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.t << ',' << r.ego.x << ',' << r.ego.y << ',' << r.ego.yaw << ',' << r.ego.v << ','
       << r.action.accel << ',' << r.action.steer << ',' << (r.collision ? 1 : 0) << '\n';
  }
}

}  // namespace kinodrive::sim
