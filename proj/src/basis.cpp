#include "hwplan/basis.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "hwplan/errors.hpp"

namespace hwplan {

namespace {

void fill_monomial_row(double tau, double inv_t, PolynomialBasis& b, Eigen::Index i) {
  double pk = 1.0, pk1 = 0.0, pk2 = 0.0;  // tau^k, tau^(k-1), tau^(k-2)
  for (int k = 0; k <= b.order; ++k) {
    b.W(i, k) = pk;
    b.Wdot(i, k) = k * pk1 * inv_t;
    b.Wddot(i, k) = k * (k - 1) * pk2 * inv_t * inv_t;
    pk2 = pk1;
    pk1 = pk;
    pk *= tau;
  }
}

// Bonnet recursion for P_k and the derivative identity
// P'_{k+1} = P'_{k-1} + (2k + 1) P_k, applied twice.
void fill_legendre_row(double tau, double inv_t, PolynomialBasis& b, Eigen::Index i) {
  const double x = 2.0 * tau - 1.0;
  const double dx = 2.0 * inv_t;
  const int n = b.order + 1;
  std::vector<double> p(n), dp(n), ddp(n);
  p[0] = 1.0;
  dp[0] = 0.0;
  ddp[0] = 0.0;
  if (n > 1) {
    p[1] = x;
    dp[1] = 1.0;
    ddp[1] = 0.0;
  }
  for (int k = 1; k + 1 < n; ++k) {
    p[k + 1] = ((2 * k + 1) * x * p[k] - k * p[k - 1]) / (k + 1);
    dp[k + 1] = dp[k - 1] + (2 * k + 1) * p[k];
    ddp[k + 1] = ddp[k - 1] + (2 * k + 1) * dp[k];
  }
  for (int k = 0; k < n; ++k) {
    b.W(i, k) = p[k];
    b.Wdot(i, k) = dp[k] * dx;
    b.Wddot(i, k) = ddp[k] * dx * dx;
  }
}

}  // namespace

PolynomialBasis build_basis_at(int order, double horizon, const Eigen::VectorXd& times,
                               BasisFamily family) {
  if (!(horizon > 0.0)) throw InvalidArgument("basis horizon must be positive");
  if (order < 1) throw InvalidArgument("basis order must be at least 1");
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw InvalidArgument("basis times must be strictly increasing");
  }

  const Eigen::Index m = times.size();
  const int n = order + 1;
  PolynomialBasis basis;
  basis.order = order;
  basis.horizon = horizon;
  basis.times = times;
  basis.W.setZero(m, n);
  basis.Wdot.setZero(m, n);
  basis.Wddot.setZero(m, n);

  basis.family = family;
  const double inv_t = 1.0 / horizon;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double tau = times[i] * inv_t;
    if (family == BasisFamily::Monomial) {
      fill_monomial_row(tau, inv_t, basis, i);
    } else {
      fill_legendre_row(tau, inv_t, basis, i);
    }
  }
  return basis;
}

PolynomialBasis build_basis(int order, int num_samples, double horizon, BasisFamily family) {
  if (!(horizon > 0.0)) throw InvalidArgument("basis horizon must be positive");
  if (num_samples < order + 1) {
    throw InvalidArgument("num_samples " + std::to_string(num_samples) +
                          " underdetermines a polynomial of order " + std::to_string(order));
  }
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(num_samples, 0.0, horizon);
  times[num_samples - 1] = horizon;
  return build_basis_at(order, horizon, times, family);
}

Eigen::VectorXd TrajectoryCoeffs::stacked() const {
  Eigen::VectorXd xi(cx.size() + cy.size());
  xi << cx, cy;
  return xi;
}

TrajectoryCoeffs TrajectoryCoeffs::from_stacked(const Eigen::Ref<const Eigen::VectorXd>& xi) {
  if (xi.size() % 2 != 0) throw InvalidArgument("stacked coefficient vector must have even length");
  const Eigen::Index n = xi.size() / 2;
  return {xi.head(n), xi.tail(n)};
}

SampledTrajectory eval_trajectory(const PolynomialBasis& basis, const TrajectoryCoeffs& xi) {
  if (xi.cx.size() != basis.num_coeffs() || xi.cy.size() != basis.num_coeffs()) {
    throw InvalidArgument("coefficient length does not match basis order");
  }
  return {basis.W * xi.cx,    basis.W * xi.cy,    basis.Wdot * xi.cx,
          basis.Wdot * xi.cy, basis.Wddot * xi.cx, basis.Wddot * xi.cy};
}

double path_curvature(double xd, double yd, double xdd, double ydd) {
  const double v2 = xd * xd + yd * yd;
  return (ydd * xd - xdd * yd) / std::pow(v2, 1.5);
}

FlatControls flat_to_controls(const PolynomialBasis& basis, const TrajectoryCoeffs& xi,
                              double wheelbase, double min_speed) {
  const SampledTrajectory s = eval_trajectory(basis, xi);
  const Eigen::Index m = s.x.size();
  FlatControls c;
  c.heading.resize(m);
  c.speed.resize(m);
  c.steering.resize(m);
  c.acceleration.resize(m);
  c.curvature.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double v = std::hypot(s.xdot[i], s.ydot[i]);
    if (!(v > min_speed)) {
      throw SpeedSingularity("speed " + std::to_string(v) + " m/s at sample " + std::to_string(i) +
                             " is below the flatness floor");
    }
    c.heading[i] = std::atan2(s.ydot[i], s.xdot[i]);
    c.speed[i] = v;
    c.acceleration[i] = (s.xdot[i] * s.xddot[i] + s.ydot[i] * s.yddot[i]) / v;
    c.curvature[i] = path_curvature(s.xdot[i], s.ydot[i], s.xddot[i], s.yddot[i]);
    c.steering[i] = std::atan(c.curvature[i] * wheelbase);
  }
  return c;
}

}  // namespace hwplan
