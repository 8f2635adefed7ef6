#pragma once

#include <vector>

#include <Eigen/Dense>

#include "hwplan/basis.hpp"
#include "hwplan/batch_qp.hpp"

namespace hwplan {

/// Predicted center of one neighbor at every sample instant of the grid.
struct ObstacleTrack {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Tabulated center-line curvature kappa(x), linearly interpolated and held
/// constant beyond the table ends. An empty table is a straight road.
struct RoadCurvature {
  std::vector<double> stations;
  std::vector<double> kappa;

  bool straight() const { return stations.empty(); }
  double at(double x) const;
};

struct ConstraintSpec {
  std::vector<ObstacleTrack> obstacles;
  double ellipse_a = 7.0;  // longitudinal semi-axis, m
  double ellipse_b = 2.8;  // lateral semi-axis, m
  double v_min = 0.0;
  double v_max = 30.0;
  double a_max = 4.0;
  double kappa_max = 0.2;
  double c_max = 4.0;
  double lane_lb = -1.0;
  double lane_ub = 5.0;
  RoadCurvature road;

  /// Throws InvalidArgument if bounds are inconsistent or an obstacle track
  /// does not have `num_samples` entries.
  void validate(int num_samples) const;
};

/// Per-constraint-family sums of positive violations; `total()` is the
/// residual r = sum max(0, g).
struct ResidualBreakdown {
  double collision = 0.0;
  double velocity = 0.0;
  double acceleration = 0.0;
  double curvature = 0.0;
  double centripetal = 0.0;
  double lane = 0.0;
  double total() const {
    return collision + velocity + acceleration + curvature + centripetal + lane;
  }
};

/// Evaluates every inequality of the constraint table directly on sampled
/// positions and derivatives. Shares nothing with the projection iterates.
ResidualBreakdown evaluate_constraints(const SampledTrajectory& s, const ConstraintSpec& spec);
double constraint_residual(const PolynomialBasis& basis, const ConstraintSpec& spec,
                           const TrajectoryCoeffs& xi);

/// Polar auxiliaries (angle, magnitude) for obstacles, velocity and acceleration.
struct PolarSplit {
  std::vector<Eigen::VectorXd> alpha_o, d_o;  // one vector per obstacle
  Eigen::VectorXd alpha_v, d_v;
  Eigen::VectorXd alpha_a, d_a;
};

/// Closed-form minimizer of |F xi - h(alpha, d)|^2 over (alpha, d), ignoring
/// the magnitude bounds. atan2(0, 0) is taken as 0 with d = 0.
PolarSplit polar_decompose(const SampledTrajectory& s, const std::vector<ObstacleTrack>& obstacles,
                           double ellipse_a, double ellipse_b);

/// Stacked observation matrix F = blkdiag([F_o; Wdot; Wddot], [F_o; Wdot; Wddot]).
Eigen::MatrixXd observation_matrix(const PolynomialBasis& basis, int num_obstacles);

/// h(alpha, d) in the row layout of `observation_matrix`.
Eigen::VectorXd reconstruct_observations(const PolarSplit& polar,
                                         const std::vector<ObstacleTrack>& obstacles,
                                         double ellipse_a, double ellipse_b);

/// Bounds on the velocity and acceleration magnitudes at one sample once the
/// curvature and centripetal limits are folded in.
struct MagnitudeClip {
  double d_v = 0.0;
  double d_a = 0.0;
  double v_lower = 0.0;
  double v_upper = 0.0;
  double a_upper = 0.0;
  bool infeasible = false;  // v_lower > v_upper; d_v was clamped to v_upper
};

inline constexpr double kSinFloor = 1e-8;

/// `prev_d_a` is the clipped acceleration magnitude of the previous iterate,
/// `abs_sin_dalpha` = |sin(alpha_a - alpha_v)|, `cos2_alpha_v` = cos^2(alpha_v),
/// `road_kappa` = |kappa(x)| at the previous iterate.
MagnitudeClip clip_speed_accel(double d_v, double d_a, double prev_d_a, double abs_sin_dalpha,
                               double cos2_alpha_v, double road_kappa, const ConstraintSpec& spec);

/// Single-sample state of the alternating minimization.
struct ProjectionState {
  TrajectoryCoeffs xi;
  PolarSplit polar;
  Eigen::VectorXd prev_d_a;    // d_a of the previous iterate (after clipping)
  Eigen::VectorXd road_kappa;  // |kappa(x)| at the previous iterate
  Eigen::VectorXd slack;       // lane slacks, [upper rows; lower rows]
  Eigen::VectorXd lambda;      // multipliers over xi
  double rho = 1.0;
  int infeasible_bounds = 0;   // samples where v_lower > v_upper in the last clip
};

/// Applies the magnitude clips to `state.polar` in place of a copy.
ProjectionState clip_magnitudes(ProjectionState state, const ConstraintSpec& spec);

struct ProjectionConfig {
  double rho = 1.0;
  double multiplier_step = 3.0;  // multiplier ascent step, in units of rho
  int max_iters = 100;
  double tolerance = 1e-3;
};

struct ProjectionReport {
  TrajectoryCoeffs xi;
  double residual = 0.0;          // from evaluate_constraints on xi
  double initial_residual = 0.0;  // of the unprojected input
  std::vector<double> residual_history;  // after each AM iteration
  int iterations_used = 0;
  int infeasible_bounds = 0;
};

/// Batched projector. The augmented KKT matrix depends only on the basis,
/// the equality rows, rho and the obstacle count, so it is factorized once
/// per instance and shared across every column and iteration.
class BatchProjector {
 public:
  BatchProjector(const QPStructure& qp, int num_obstacles, const ProjectionConfig& config);

  int num_obstacles() const { return num_obstacles_; }
  const ProjectionConfig& config() const { return config_; }

  /// `xi_bar` holds one stacked coefficient column per sample; `b_eq` the
  /// matching equality right-hand sides.
  std::vector<ProjectionReport> project(const Eigen::MatrixXd& xi_bar, const Eigen::MatrixXd& b_eq,
                                        const ConstraintSpec& spec) const;

 private:
  void project_chunk(const Eigen::MatrixXd& xi_bar, const Eigen::MatrixXd& b_eq,
                     const ConstraintSpec& spec, Eigen::Index begin, Eigen::Index count,
                     std::vector<ProjectionReport>& out) const;

  PolynomialBasis basis_;
  ProjectionConfig config_;
  int num_obstacles_;
  KktSystem kkt_;
};

std::vector<ProjectionReport> project_batch(const QPSolutionBatch& batch, const Eigen::MatrixXd& b_eq,
                                            const ConstraintSpec& spec, const QPStructure& qp,
                                            const ProjectionConfig& config);

}  // namespace hwplan
