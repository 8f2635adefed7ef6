#pragma once

#include <Eigen/Dense>

namespace hwplan {

/// Polynomial family used for the columns of W, in normalized time tau = t / horizon.
///   Monomial: tau^k
///   Legendre: P_k(2 tau - 1), shifted Legendre polynomials
/// Both span the same space. Legendre columns are nearly orthogonal on the
/// sample grid, which keeps coefficient-space distances meaningful.
enum class BasisFamily { Monomial, Legendre };

/// Sampled polynomial basis. Row i of `W` evaluates every basis polynomial at
/// times[i]; `Wdot` and `Wddot` are the exact first and second derivatives
/// with respect to physical time t, so x = W cx, xdot = Wdot cx, xddot = Wddot cx.
struct PolynomialBasis {
  BasisFamily family = BasisFamily::Legendre;
  int order = 0;
  double horizon = 0.0;
  Eigen::VectorXd times;
  Eigen::MatrixXd W;
  Eigen::MatrixXd Wdot;
  Eigen::MatrixXd Wddot;

  int num_samples() const { return static_cast<int>(times.size()); }
  int num_coeffs() const { return order + 1; }
};

/// Uniform grid times[i] = i * horizon / (num_samples - 1).
PolynomialBasis build_basis(int order, int num_samples, double horizon,
                            BasisFamily family = BasisFamily::Legendre);

/// Same basis family evaluated at arbitrary instants; used to resample a
/// planned trajectory on the simulator clock.
PolynomialBasis build_basis_at(int order, double horizon, const Eigen::VectorXd& times,
                               BasisFamily family = BasisFamily::Legendre);

/// Decision variable of the lower-level problem, xi = (cx, cy).
struct TrajectoryCoeffs {
  Eigen::VectorXd cx;
  Eigen::VectorXd cy;

  Eigen::VectorXd stacked() const;
  static TrajectoryCoeffs from_stacked(const Eigen::Ref<const Eigen::VectorXd>& xi);
};

struct SampledTrajectory {
  Eigen::VectorXd x, y;
  Eigen::VectorXd xdot, ydot;
  Eigen::VectorXd xddot, yddot;
};

SampledTrajectory eval_trajectory(const PolynomialBasis& basis, const TrajectoryCoeffs& xi);

/// Signed path curvature (ydd*xd - xdd*yd) / (xd^2 + yd^2)^1.5.
double path_curvature(double xd, double yd, double xdd, double ydd);

/// Controls recovered from flat outputs of the kinematic bicycle model.
struct FlatControls {
  Eigen::VectorXd heading;       // rad
  Eigen::VectorXd speed;         // m/s
  Eigen::VectorXd steering;      // rad
  Eigen::VectorXd acceleration;  // m/s^2, along the heading
  Eigen::VectorXd curvature;     // 1/m
};

FlatControls flat_to_controls(const PolynomialBasis& basis, const TrajectoryCoeffs& xi,
                              double wheelbase, double min_speed = 1e-3);

}  // namespace hwplan
