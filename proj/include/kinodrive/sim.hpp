#pragma once

#include "kinodrive/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace kinodrive::sim {

/// Simulation step in seconds.
inline constexpr double kDt = 0.1;
/// Vehicles are discs of this radius for collision tests.
inline constexpr double kVehicleRadius = 1.0;
/// Range within which other vehicles are observable.
inline constexpr double kDetectRange = 50.0;
/// Frenet projection fails beyond this lateral distance.
inline constexpr double kMaxProjectionDistance = 50.0;

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // (-pi, pi]
  double v = 0.0;    // longitudinal speed, >= 0

  bool operator==(const VehicleState&) const = default;
};

struct Action {
  double accel = 0.0;
  double steer = 0.0;

  bool operator==(const Action&) const = default;
};

struct VehicleLimits {
  double accel_max = 3.0;
  double steer_max = 0.6;
  double wheelbase = 2.7;

  bool operator==(const VehicleLimits&) const = default;
};

Action clamp_action(const Action& a, const VehicleLimits& limits = {});

/// Kinematic bicycle step. Throws "invalid state" on non-finite input and
/// "action out of bounds" when the action exceeds `limits`.
VehicleState step_vehicle(const VehicleState& state, const Action& action, double dt,
                          const VehicleLimits& limits = {});

// ---------------------------------------------------------------------------
// Road geometry

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

/// A line (curvature 0) or circular arc starting at a given pose.
struct Segment {
  Pose2 start;
  double length = 0.0;
  double curvature = 0.0;

  Pose2 at(double ds) const;
  bool operator==(const Segment& o) const {
    return start.x == o.start.x && start.y == o.start.y && start.heading == o.start.heading &&
           length == o.length && curvature == o.curvature;
  }
};

/// G1-continuous chain of line and arc segments.
class Centerline {
 public:
  struct Piece {
    double length;
    double curvature;
  };

  Centerline() = default;
  Centerline(Pose2 start, const std::vector<Piece>& pieces);

  const std::vector<Segment>& segments() const { return segments_; }
  double total_length() const { return total_length_; }

  /// Pose at arclength s. Values outside [0, total_length] extrapolate
  /// along the end tangents.
  Pose2 pose_at(double s) const;

  /// Parallel curve displaced `d` meters to the left.
  Centerline offset(double d) const;

  bool operator==(const Centerline&) const = default;

 private:
  std::vector<Segment> segments_;
  std::vector<double> seg_start_s_;
  double total_length_ = 0.0;
};

struct Frenet {
  double delta_y = 0.0;    // signed lateral offset, left positive
  double delta_phi = 0.0;  // heading error
  double s = 0.0;          // arclength along the centerline
};

/// Nearest-point projection onto `cl`. Throws "off map" when no point of the
/// centerline lies within 50 m.
Frenet frenet_project(const Centerline& cl, const VehicleState& pose);

/// Like frenet_project, but arclength extrapolates past the ends along the
/// end tangents and no range check is made.
Frenet frenet_project_unbounded(const Centerline& cl, const VehicleState& pose);

// ---------------------------------------------------------------------------
// Traffic

struct IdmParams {
  double v0 = 12.0;
  double time_headway = 1.5;
  double a_max = 1.5;
  double b_comf = 2.0;
  double s0 = 2.0;
  double delta = 4.0;

  bool operator==(const IdmParams&) const = default;
};

/// Intelligent-driver-model acceleration, clamped to [-2 b_comf, a_max].
double idm_accel(double gap, double v, double v_lead, const IdmParams& p);

// ---------------------------------------------------------------------------
// World

enum class Scenario { straight, turn90, roundabout, town };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& name);

struct ScenarioConfig {
  Scenario scenario = Scenario::straight;
  int n_vehicles = 0;
  bool randomize_count = false;
  // Places one slow vehicle ahead of the ego in its lane, on top of
  // n_vehicles.
  bool front_obstacle = false;
  double obstacle_speed = 3.0;
  int horizon = 50;
  int n_lanes = 2;
  double lane_width = 3.5;
  double offroad_margin = 0.5;
  double ego_v_min = 4.0;
  double ego_v_max = 8.0;
  double traffic_v0_min = 3.0;
  double traffic_v0_max = 8.0;
  VehicleLimits limits{};

  bool operator==(const ScenarioConfig&) const = default;
};

struct Road {
  std::vector<Centerline> lanes;  // lane 0 is the ego reference lane
  double lane_width = 3.5;

  bool operator==(const Road&) const = default;
};

Road build_road(const ScenarioConfig& cfg);

struct OtherVehicle {
  VehicleState state;
  int lane_id = 0;
  IdmParams idm;

  bool operator==(const OtherVehicle&) const = default;
};

struct WorldState {
  ScenarioConfig cfg;
  Road road;
  VehicleState ego;
  std::vector<OtherVehicle> others;
  int t = 0;
  bool done = false;
  std::mt19937_64 rng;

  bool operator==(const WorldState&) const = default;
};

struct StepEvents {
  bool collision = false;
  bool off_road = false;
  bool done = false;
};

/// Deterministic scenario sampling. Draw order from the seeded generator:
/// vehicle count (only when randomize_count, uniform on [min(3, n), n]),
/// ego arclength, lateral offset, heading error and speed, then the front
/// obstacle gap, then traffic slots and per-vehicle parameters.
WorldState spawn_scenario(const ScenarioConfig& cfg, std::uint64_t seed);

std::pair<WorldState, StepEvents> step_world(const WorldState& w, const Action& ego_action);

/// Lane whose centerline is laterally closest to the pose.
int nearest_lane(const Road& road, const VehicleState& pose);

bool ego_collides(const WorldState& w);
bool ego_off_road(const WorldState& w);

// ---------------------------------------------------------------------------
// Observations

/// Relative [x, y, vx, vy] of `other` in the ego body frame.
Eigen::Vector4d relative_in_ego_frame(const VehicleState& ego, const VehicleState& other);

/// [delta_y, delta_phi, v] of the ego relative to lane 0.
Eigen::Vector3d ego_lane_features(const WorldState& w);

struct FrontVehicle {
  int index = -1;
  double gap_s = 0.0;  // along-lane center distance
};

/// Nearest vehicle ahead of the ego in the ego's current lane within range.
FrontVehicle front_vehicle(const WorldState& w, double range = kDetectRange);

inline constexpr int kMbDim = 3;
inline constexpr int kMbObstacleDim = 7;
inline constexpr int kStateVectorSlots = 10;
inline constexpr int kStateVectorDim = 3 + 4 * kStateVectorSlots;

Vec observe_mb(const WorldState& w, bool with_obstacle);
Vec observe_state_vector(const WorldState& w);

struct GraphEdge {
  int src = 0;  // >= 1, always targets vertex 0
  Vec feature;
};

struct GraphObs {
  std::vector<Vec> vertices;  // vertex 0 is the ego
  std::vector<GraphEdge> edges;
};

GraphObs observe_graph(const WorldState& w);

// ---------------------------------------------------------------------------
// Trajectory dump

struct DumpRow {
  int t;
  VehicleState ego;
  Action action;
  bool collision;
};

void write_trajectory_csv(std::ostream& os, const std::vector<DumpRow>& rows);

}  // namespace kinodrive::sim
