#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "hwplan/basis.hpp"
#include "hwplan/batch_qp.hpp"

namespace testing_support {

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

// Least-squares coefficients reproducing f on the basis grid.
template <typename F>
Eigen::VectorXd fit(const hwplan::PolynomialBasis& b, F f) {
  Eigen::VectorXd y(b.num_samples());
  for (int i = 0; i < b.num_samples(); ++i) y[i] = f(b.times[i]);
  return b.W.colPivHouseholderQr().solve(y);
}

// Smooth trajectory: cruising at `speed` with a gentle lane drift.
inline hwplan::TrajectoryCoeffs cruise(const hwplan::PolynomialBasis& b, double speed, double drift,
                                       double y0 = 0.0) {
  const double T = b.horizon;
  hwplan::TrajectoryCoeffs xi;
  xi.cx = fit(b, [&](double t) { return speed * t; });
  xi.cy = fit(b, [&](double t) {
    const double s = t / T;
    return y0 + drift * s * s * (3.0 - 2.0 * s);
  });
  return xi;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testing_support
