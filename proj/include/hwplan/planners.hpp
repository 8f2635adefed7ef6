#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hwplan/bilevel.hpp"
#include "hwplan/sim.hpp"

namespace hwplan {

/// What every planner receives at a replan: the observation vector plus the
/// ego's own last applied controls and the road geometry.
struct PlanningInput {
  Eigen::VectorXd observation;
  Controls last_controls;
  RoadSpec road;
  double ego_station = 0.0;  // ego x along the road, for looking up curvature
  double dt = 0.1;
  int control_steps = 5;
};

struct PlanDiagnostics {
  double solve_time = 0.0;  // wall seconds, not part of any deterministic output
  double upper_cost = 0.0;
  double residual = 0.0;
  int samples = 0;
  int iterations = 0;
  int num_obstacles = 0;   // real neighbors in the constraint spec
  bool degraded = false;
  bool braking_fallback = false;  // plan reached standstill, controls replaced by braking
  Eigen::VectorXd best_p;
};

struct Plan {
  TrajectoryCoeffs xi;
  std::vector<Controls> controls;  // one per simulator step from the replan instant
  PlanDiagnostics diag;
};

class Planner {
 public:
  virtual ~Planner() = default;
  virtual std::string name() const = 0;
  /// Called at the start of every episode.
  virtual void reset(std::uint64_t seed) = 0;
  virtual Plan plan(const PlanningInput& input) = 0;
};

struct PlannerConfig {
  int order = 10;
  int num_samples = 50;
  double horizon = 10.0;
  BasisFamily basis_family = BasisFamily::Legendre;
  TrackingGains gains;
  int segments = 4;

  int batch_size = 100;
  int constraint_elite = 15;
  int elite = 5;
  int iterations = 3;
  double learning_rate = 0.7;
  double gamma = 0.9;
  double residual_weight = 1e4;
  double cov_floor = 1e-6;
  ProjectionConfig projection;

  double v_max = 30.0;
  double v_min = 0.0;
  double a_max = 4.0;
  double kappa_max = 0.2;
  double c_max = 4.0;
  double ellipse_a = 7.07;  // circumscribes a 10 m x 4 m inflated footprint
  double ellipse_b = 2.83;
  double lane_margin = 1.0;  // lateral bounds are the outer lane centers +- margin
  int max_obstacles = 8;     // nearest neighbors turned into constraints, padded with far dummies

  double lane_weight = 5.0;  // upper-level pull toward lane centers
  double lateral_std = 1.5;
  double velocity_std = 5.0;
  bool warm_start_mean = false;    // bi-level: next cycle's mean from this cycle's optimum, snapped to lane centers
  std::string warm_start_file;     // optional sample file used on the first iteration of each cycle
  double wheelbase = 2.5;
  std::uint64_t seed = 0;

  double vanilla_speed = 30.0;     // fixed velocity set-point of the vanilla planner
  std::vector<double> grid_speed_fractions{0.5, 0.75, 1.0};
  int grid_cap = 1024;

  BiLevelConfig bilevel_config() const;
  void validate() const;
};

/// Ego-relative planning problem recovered from an observation: x = 0 at the
/// ego, y in road coordinates, neighbors predicted at constant velocity.
struct PlanningProblem {
  BiLevelProblem problem;
  double ego_y = 0.0;
  double speed = 0.0;
  int ego_lane = 0;
  int num_real_obstacles = 0;
};

PlanningProblem build_problem(const PlanningInput& input, const PlannerConfig& config,
                              const PolynomialBasis& basis);

/// Mean at the current lane center and speed, diagonal covariance.
SamplingDistribution initial_distribution(const BehaviorLayout& layout, double lane_y, double speed,
                                          const PlannerConfig& config);

/// Controls on the simulator grid recovered from flat outputs, saturated at
/// |accel| <= a_max and |steer| <= atan(kappa_max * wheelbase).
std::vector<Controls> controls_from_plan(const PolynomialBasis& control_basis, const TrajectoryCoeffs& xi,
                                         const PlannerConfig& config, bool* braking_fallback = nullptr);

/// Per-dimension value lists; the Cartesian product enumerates the samples in
/// lexicographic order with the last dimension varying fastest.
struct GridSpec {
  std::vector<std::vector<double>> values;

  std::size_t size() const;
  Eigen::MatrixXd enumerate() const;
};

/// Lateral set-points: current lane for the first half of the segments, then
/// the current and adjacent lane centers; velocities from the fraction list.
GridSpec default_grid(const BehaviorLayout& layout, const RoadSpec& road, int ego_lane,
                      const PlannerConfig& config);

/// Known kinds: mpc-bilevel, mpc-vanilla, mpc-grid, mpc-random, batch-mpc-goal,
/// and full-throttle (a blind constant-control baseline for sanity runs).
std::unique_ptr<Planner> make_planner(const std::string& kind, const PlannerConfig& config);
std::vector<std::string> planner_kinds();

}  // namespace hwplan
