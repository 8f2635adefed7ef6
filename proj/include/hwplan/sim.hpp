#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hwplan/projection.hpp"

namespace hwplan {

struct VehicleState {
  double x = 0.0, y = 0.0;
  double psi = 0.0;  // heading, rad
  double v = 0.0;    // speed, m/s
  double length = 5.0;
  double width = 2.0;
  int lane = 0;
};

/// Straight multi-lane road. Lane l has its center at y = l * lane_width, so
/// the drivable surface spans [-lane_width / 2, (lane_count - 0.5) * lane_width].
struct RoadSpec {
  int lane_count = 2;
  double lane_width = 4.0;
  double length = 10000.0;
  RoadCurvature curvature;

  double lane_center(int lane) const { return lane * lane_width; }
  double right_edge() const { return -0.5 * lane_width; }
  double left_edge() const { return (lane_count - 0.5) * lane_width; }
  int nearest_lane(double y) const;
  void validate() const;
};

struct IdmParams {
  double time_headway = 1.5;  // T_h, s
  double min_gap = 2.0;       // s0, m
  double max_accel = 1.5;     // a_idm, m/s^2
  double comfort_decel = 2.0; // b_idm, m/s^2
  double exponent = 4.0;      // delta
  double hard_decel = 9.0;    // b_hard, m/s^2
};

struct MobilParams {
  double politeness = 0.3;
  double safe_decel = 4.0;   // b_safe
  double threshold = 0.1;    // a_th
  double lateral_speed = 1.5;     // m/s while changing lanes
  double cooldown = 2.0;          // s between lane-change decisions
};

struct ScenarioConfig {
  std::string name = "scenario";
  RoadSpec road;
  double density = 1.0;        // mean spawn spacing is base_spacing / density
  double base_spacing = 30.0;  // m
  int vehicle_count = 20;
  std::uint64_t seed = 0;
  int episode_length = 150;    // steps
  double dt = 0.1;
  int ego_lane = 0;
  double ego_speed = 20.0;
  double ego_wheelbase = 2.5;
  double neighbor_speed = 22.0;  // mean IDM desired speed
  double speed_spread = 0.15;    // desired speeds uniform in +-spread around the mean
  IdmParams idm;
  MobilParams mobil;

  void validate() const;
};

/// JSON object with the fields above; unknown keys are rejected.
ScenarioConfig scenario_from_json(const std::string& text);
std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig load_scenario(const std::string& path);

struct Neighbor {
  VehicleState state;
  double desired_speed = 22.0;
  int target_lane = 0;
  double cooldown = 0.0;  // time left before MOBIL is evaluated again
};

struct Controls {
  double accel = 0.0;
  double steer = 0.0;
};

struct World {
  RoadSpec road;
  IdmParams idm;
  MobilParams mobil;
  double ego_wheelbase = 2.5;
  double ego_desired_speed = 30.0;  // used when a neighbor evaluates the ego as its follower
  VehicleState ego;
  std::vector<Neighbor> neighbors;
  int step = 0;
  double time = 0.0;
};

/// Deterministic initial traffic for a scenario: the ego at x = 0 and the
/// neighbors ahead of it with spacing drawn around base_spacing / density.
World make_world(const ScenarioConfig& config);

/// a = a_idm (1 - (v / v0)^delta - (s*(v, dv) / gap)^2),
/// s* = s0 + v T_h + v dv / (2 sqrt(a_idm b_idm)), clamped to [-b_hard, a_idm].
/// `approach_rate` is v - v_leader. A non-positive gap returns -b_hard.
double idm_accel(double gap, double v, double approach_rate, double desired_speed,
                 const IdmParams& params);

/// Leader and follower of position x among the vehicles occupying a lane. Vehicle ids are 0 for the ego
/// and i + 1 for neighbors[i]; -1 when absent. Gaps are bumper to bumper.
struct LaneQuery {
  int leader = -1;
  int follower = -1;
  double leader_gap = 0.0;
  double follower_gap = 0.0;
};

/// A vehicle occupies its own lane plus any lane its footprint overlaps.
bool occupies_lane(const World& world, int id, int lane);
LaneQuery query_lane(const World& world, int lane, double x, double length, int exclude_id);
int vehicle_lane(const World& world, int id);
const VehicleState& vehicle_state(const World& world, int id);

struct LaneChangeDecision {
  bool change = false;
  bool safe = false;
  double incentive = 0.0;          // own gain + politeness * followers' gain
  double new_follower_accel = 0.0; // after the change
};

/// MOBIL evaluation of moving neighbors[index] into `target_lane`.
LaneChangeDecision mobil_lane_change(const World& world, int index, int target_lane,
                                     const MobilParams& params);

/// Kinematic bicycle (rear-axle reference) integrated with one RK4 step:
/// x' = v cos psi, y' = v sin psi, psi' = v tan(steer) / wheelbase, v' = accel.
/// Speed is floored at zero after the step.
VehicleState bicycle_step(const VehicleState& s, const Controls& u, double wheelbase, double dt);

/// Separating-axis overlap test of two oriented footprint rectangles.
bool rectangles_overlap(const VehicleState& a, const VehicleState& b);

struct StepEvents {
  bool collision = false;
  int collided_with = -1;  // neighbor index
  bool lane_departure = false;
};

/// Advances the world by dt: the ego by RK4 bicycle kinematics, neighbors by
/// IDM and MOBIL evaluated on the pre-step state. Collision and lane-departure
/// checks run on the post-step state.
StepEvents step_world(World& world, const Controls& ego_controls, double dt);

inline constexpr int kObservedNeighbors = 10;
inline constexpr int kNeighborFields = 5;
inline constexpr int kObservationSize = 3 + kObservedNeighbors * kNeighborFields + 2;
inline constexpr double kSentinelRange = 1e4;

/// Observation layout:
///   [0..2]   ego heading, longitudinal speed, lateral speed
///   [3..52]  10 nearest neighbors by center distance, each
///            (dx, dy, dvx, dvy, dpsi) relative to the ego center; empty
///            slots hold (1e4, 0, 0, 0, 0)
///   [53..54] distance to the left road edge, distance to the right road edge
Eigen::VectorXd observe(const World& world);

}  // namespace hwplan
