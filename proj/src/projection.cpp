#include "hwplan/projection.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "hwplan/errors.hpp"

namespace hwplan {

double RoadCurvature::at(double x) const {
  if (stations.empty()) return 0.0;
  if (x <= stations.front()) return kappa.front();
  if (x >= stations.back()) return kappa.back();
  const auto it = std::upper_bound(stations.begin(), stations.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - stations.begin());
  const std::size_t lo = hi - 1;
  const double w = (x - stations[lo]) / (stations[hi] - stations[lo]);
  return (1.0 - w) * kappa[lo] + w * kappa[hi];
}

void ConstraintSpec::validate(int num_samples) const {
  if (!(v_min < v_max)) throw InvalidArgument("v_min must be below v_max");
  if (!(a_max > 0.0 && kappa_max > 0.0 && c_max > 0.0)) {
    throw InvalidArgument("acceleration, curvature and centripetal bounds must be positive");
  }
  if (!(ellipse_a > 0.0 && ellipse_b > 0.0)) throw InvalidArgument("ellipse axes must be positive");
  if (!(lane_lb < lane_ub)) throw InvalidArgument("lane lower bound must be below upper bound");
  if (road.stations.size() != road.kappa.size()) {
    throw InvalidArgument("road curvature table columns differ in length");
  }
  for (const auto& o : obstacles) {
    if (o.x.size() != num_samples || o.y.size() != num_samples) {
      throw InvalidArgument("obstacle track length " + std::to_string(o.x.size()) +
                            " does not match the " + std::to_string(num_samples) + "-sample grid");
    }
  }
}

namespace {

using ColRef = Eigen::Ref<const Eigen::VectorXd>;

ResidualBreakdown evaluate_columns(const ColRef& x, const ColRef& y, const ColRef& xd,
                                   const ColRef& yd, const ColRef& xdd, const ColRef& ydd,
                                   const ConstraintSpec& spec) {
  ResidualBreakdown r;
  const Eigen::Index m = x.size();
  const double inv_a2 = 1.0 / (spec.ellipse_a * spec.ellipse_a);
  const double inv_b2 = 1.0 / (spec.ellipse_b * spec.ellipse_b);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (const auto& o : spec.obstacles) {
      const double dx = x[i] - o.x[i];
      const double dy = y[i] - o.y[i];
      r.collision += std::max(0.0, 1.0 - dx * dx * inv_a2 - dy * dy * inv_b2);
    }
    const double v2 = xd[i] * xd[i] + yd[i] * yd[i];
    const double v = std::sqrt(v2);
    r.velocity += std::max(0.0, v - spec.v_max) + std::max(0.0, spec.v_min - v);
    r.acceleration += std::max(0.0, std::hypot(xdd[i], ydd[i]) - spec.a_max);
    if (v > 1e-9) {
      const double kappa = path_curvature(xd[i], yd[i], xdd[i], ydd[i]);
      r.curvature += std::max(0.0, std::abs(kappa) - spec.kappa_max);
    }
    r.centripetal += std::max(0.0, xd[i] * xd[i] * std::abs(spec.road.at(x[i])) - spec.c_max);
    r.lane += std::max(0.0, y[i] - spec.lane_ub) + std::max(0.0, spec.lane_lb - y[i]);
  }
  return r;
}

// Unit direction with the atan2(0, 0) = 0 convention.
inline void direction(double cx, double cy, double norm, double& ux, double& uy) {
  if (norm > 0.0) {
    ux = cx / norm;
    uy = cy / norm;
  } else {
    ux = 1.0;
    uy = 0.0;
  }
}

}  // namespace

ResidualBreakdown evaluate_constraints(const SampledTrajectory& s, const ConstraintSpec& spec) {
  return evaluate_columns(s.x, s.y, s.xdot, s.ydot, s.xddot, s.yddot, spec);
}

double constraint_residual(const PolynomialBasis& basis, const ConstraintSpec& spec,
                           const TrajectoryCoeffs& xi) {
  return evaluate_constraints(eval_trajectory(basis, xi), spec).total();
}

PolarSplit polar_decompose(const SampledTrajectory& s, const std::vector<ObstacleTrack>& obstacles,
                           double ellipse_a, double ellipse_b) {
  const Eigen::Index m = s.x.size();
  PolarSplit p;
  for (const auto& o : obstacles) {
    Eigen::VectorXd alpha(m), d(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double u = (s.x[i] - o.x[i]) / ellipse_a;
      const double w = (s.y[i] - o.y[i]) / ellipse_b;
      alpha[i] = std::atan2(w, u);
      d[i] = std::hypot(u, w);
    }
    p.alpha_o.push_back(std::move(alpha));
    p.d_o.push_back(std::move(d));
  }
  p.alpha_v.resize(m);
  p.d_v.resize(m);
  p.alpha_a.resize(m);
  p.d_a.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    p.alpha_v[i] = std::atan2(s.ydot[i], s.xdot[i]);
    p.d_v[i] = std::hypot(s.xdot[i], s.ydot[i]);
    p.alpha_a[i] = std::atan2(s.yddot[i], s.xddot[i]);
    p.d_a[i] = std::hypot(s.xddot[i], s.yddot[i]);
  }
  return p;
}

Eigen::MatrixXd observation_matrix(const PolynomialBasis& basis, int num_obstacles) {
  const int m = basis.num_samples();
  const int n = basis.num_coeffs();
  const int rows = (num_obstacles + 2) * m;
  Eigen::MatrixXd block(rows, n);
  for (int i = 0; i < num_obstacles; ++i) block.middleRows(i * m, m) = basis.W;
  block.middleRows(num_obstacles * m, m) = basis.Wdot;
  block.middleRows((num_obstacles + 1) * m, m) = basis.Wddot;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2 * rows, 2 * n);
  f.topLeftCorner(rows, n) = block;
  f.bottomRightCorner(rows, n) = block;
  return f;
}

Eigen::VectorXd reconstruct_observations(const PolarSplit& polar,
                                         const std::vector<ObstacleTrack>& obstacles,
                                         double ellipse_a, double ellipse_b) {
  const Eigen::Index m = polar.d_v.size();
  const Eigen::Index no = static_cast<Eigen::Index>(obstacles.size());
  const Eigen::Index rows = (no + 2) * m;
  Eigen::VectorXd h(2 * rows);
  for (Eigen::Index k = 0; k < no; ++k) {
    const auto& a = polar.alpha_o[k].array();
    const auto& d = polar.d_o[k].array();
    h.segment(k * m, m) = obstacles[k].x.array() + ellipse_a * d * a.cos();
    h.segment(rows + k * m, m) = obstacles[k].y.array() + ellipse_b * d * a.sin();
  }
  h.segment(no * m, m) = polar.d_v.array() * polar.alpha_v.array().cos();
  h.segment((no + 1) * m, m) = polar.d_a.array() * polar.alpha_a.array().cos();
  h.segment(rows + no * m, m) = polar.d_v.array() * polar.alpha_v.array().sin();
  h.segment(rows + (no + 1) * m, m) = polar.d_a.array() * polar.alpha_a.array().sin();
  return h;
}

MagnitudeClip clip_speed_accel(double d_v, double d_a, double prev_d_a, double abs_sin_dalpha,
                               double cos2_alpha_v, double road_kappa, const ConstraintSpec& spec) {
  MagnitudeClip c;
  c.v_lower = spec.v_min;
  const double lateral = prev_d_a * abs_sin_dalpha;
  if (lateral > 0.0) c.v_lower = std::max(spec.v_min, std::sqrt(lateral / spec.kappa_max));
  c.v_upper = spec.v_max;
  if (road_kappa > 0.0 && cos2_alpha_v > 0.0) {
    c.v_upper = std::min(spec.v_max, std::sqrt(spec.c_max / (road_kappa * cos2_alpha_v)));
  }
  if (c.v_lower > c.v_upper) {
    c.infeasible = true;
    c.d_v = c.v_upper;
  } else {
    c.d_v = std::clamp(d_v, c.v_lower, c.v_upper);
  }
  const double s = std::max(abs_sin_dalpha, kSinFloor);
  c.a_upper = std::min(spec.a_max, c.d_v * c.d_v * spec.kappa_max / s);
  c.d_a = std::clamp(d_a, 0.0, c.a_upper);
  return c;
}

ProjectionState clip_magnitudes(ProjectionState state, const ConstraintSpec& spec) {
  PolarSplit& p = state.polar;
  for (auto& d : p.d_o) d = d.cwiseMax(1.0);
  const Eigen::Index m = p.d_v.size();
  if (state.prev_d_a.size() != m) state.prev_d_a = p.d_a;
  if (state.road_kappa.size() != m) state.road_kappa = Eigen::VectorXd::Zero(m);
  state.infeasible_bounds = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double abs_sin = std::abs(std::sin(p.alpha_a[i] - p.alpha_v[i]));
    const double cos_v = std::cos(p.alpha_v[i]);
    const MagnitudeClip c = clip_speed_accel(p.d_v[i], p.d_a[i], state.prev_d_a[i], abs_sin,
                                             cos_v * cos_v, std::abs(state.road_kappa[i]), spec);
    p.d_v[i] = c.d_v;
    p.d_a[i] = c.d_a;
    if (c.infeasible) ++state.infeasible_bounds;
  }
  state.prev_d_a = p.d_a;
  return state;
}

namespace {

Eigen::MatrixXd projection_hessian(const PolynomialBasis& basis, int num_obstacles, double rho) {
  const int n = basis.num_coeffs();
  const Eigen::MatrixXd wtw = basis.W.transpose() * basis.W;
  const Eigen::MatrixXd block = num_obstacles * wtw + basis.Wdot.transpose() * basis.Wdot +
                                basis.Wddot.transpose() * basis.Wddot;
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(2 * n, 2 * n);
  h.topLeftCorner(n, n) += rho * block;
  // Lane rows G = [W; -W] act on cy only, so G^T G = 2 W^T W.
  h.bottomRightCorner(n, n) += rho * (block + 2.0 * wtw);
  return h;
}

}  // namespace

BatchProjector::BatchProjector(const QPStructure& qp, int num_obstacles,
                               const ProjectionConfig& config)
    : basis_(qp.basis()),
      config_(config),
      num_obstacles_(num_obstacles),
      kkt_(projection_hessian(qp.basis(), num_obstacles, config.rho), qp.A_eq()) {
  if (num_obstacles < 0) throw InvalidArgument("negative obstacle count");
  if (!(config.rho > 0.0) || !(config.multiplier_step > 0.0) || config.max_iters < 0 ||
      !(config.tolerance >= 0.0)) {
    throw InvalidArgument("projection config needs rho > 0, multiplier_step > 0, max_iters >= 0, tolerance >= 0");
  }
}

namespace {

// Working arrays for one chunk of columns: the sampled trajectory plus the
// polar targets h(alpha, d) after clipping.
struct ChunkArrays {
  Eigen::MatrixXd x, y, xd, yd, xdd, ydd;
  Eigen::MatrixXd hox, hoy;  // sum over obstacles of the clipped obstacle targets
  Eigen::MatrixXd hvx, hvy, hax, hay;
  Eigen::MatrixXd prev_da;
  Eigen::MatrixXd s_ub, s_lb;
  std::vector<int> infeasible;
};

void sample(const PolynomialBasis& basis, const Eigen::MatrixXd& cx, const Eigen::MatrixXd& cy,
            ChunkArrays& a) {
  a.x.noalias() = basis.W * cx;
  a.y.noalias() = basis.W * cy;
  a.xd.noalias() = basis.Wdot * cx;
  a.yd.noalias() = basis.Wdot * cy;
  a.xdd.noalias() = basis.Wddot * cx;
  a.ydd.noalias() = basis.Wddot * cy;
}

// Closed-form polar step followed by the magnitude clips, written with
// direction cosines instead of explicit angles.
void polar_and_clip(const ConstraintSpec& spec, const Eigen::MatrixXd& prev_x, ChunkArrays& a) {
  const Eigen::Index m = a.x.rows();
  const Eigen::Index cols = a.x.cols();
  const double ea = spec.ellipse_a, eb = spec.ellipse_b;
  a.hox.setZero(m, cols);
  a.hoy.setZero(m, cols);
  a.hvx.resize(m, cols);
  a.hvy.resize(m, cols);
  a.hax.resize(m, cols);
  a.hay.resize(m, cols);
  a.infeasible.assign(static_cast<std::size_t>(cols), 0);
  const bool straight = spec.road.straight();
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double px = a.x(i, j), py = a.y(i, j);
      double sx = 0.0, sy = 0.0;
      for (const auto& o : spec.obstacles) {
        const double u = (px - o.x[i]) / ea;
        const double w = (py - o.y[i]) / eb;
        const double d = std::hypot(u, w);
        double ux, uy;
        direction(u, w, d, ux, uy);
        const double dc = std::max(1.0, d);
        sx += o.x[i] + ea * dc * ux;
        sy += o.y[i] + eb * dc * uy;
      }
      a.hox(i, j) = sx;
      a.hoy(i, j) = sy;

      const double vx = a.xd(i, j), vy = a.yd(i, j);
      const double ax = a.xdd(i, j), ay = a.ydd(i, j);
      const double dv = std::hypot(vx, vy);
      const double da = std::hypot(ax, ay);
      double uvx, uvy, uax, uay;
      direction(vx, vy, dv, uvx, uvy);
      direction(ax, ay, da, uax, uay);
      const double abs_sin = std::abs(uay * uvx - uax * uvy);
      const double kappa = straight ? 0.0 : std::abs(spec.road.at(prev_x(i, j)));
      const MagnitudeClip c =
          clip_speed_accel(dv, da, a.prev_da(i, j), abs_sin, uvx * uvx, kappa, spec);
      if (c.infeasible) ++a.infeasible[static_cast<std::size_t>(j)];
      a.hvx(i, j) = c.d_v * uvx;
      a.hvy(i, j) = c.d_v * uvy;
      a.hax(i, j) = c.d_a * uax;
      a.hay(i, j) = c.d_a * uay;
      a.prev_da(i, j) = c.d_a;
    }
  }
}

// Keeps only the listed columns of every working matrix.
void keep_columns(Eigen::MatrixXd& mat, const std::vector<Eigen::Index>& keep) {
  Eigen::MatrixXd out(mat.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = mat.col(keep[c]);
  mat.swap(out);
}

void keep_columns(ChunkArrays& a, const std::vector<Eigen::Index>& keep) {
  for (Eigen::MatrixXd* mat : {&a.x, &a.y, &a.xd, &a.yd, &a.xdd, &a.ydd, &a.hox, &a.hoy, &a.hvx,
                               &a.hvy, &a.hax, &a.hay, &a.prev_da, &a.s_ub, &a.s_lb}) {
    keep_columns(*mat, keep);
  }
  std::vector<int> inf(keep.size());
  for (std::size_t c = 0; c < keep.size(); ++c) inf[c] = a.infeasible[static_cast<std::size_t>(keep[c])];
  a.infeasible.swap(inf);
}

void update_slack(const ConstraintSpec& spec, ChunkArrays& a) {
  a.s_ub = (spec.lane_ub - a.y.array()).max(0.0).matrix();
  a.s_lb = (a.y.array() - spec.lane_lb).max(0.0).matrix();
}

}  // namespace

void BatchProjector::project_chunk(const Eigen::MatrixXd& xi_bar, const Eigen::MatrixXd& b_eq,
                                   const ConstraintSpec& spec, Eigen::Index begin,
                                   Eigen::Index count, std::vector<ProjectionReport>& out) const {
  const int n = basis_.num_coeffs();
  const double rho = config_.rho;
  const double step = config_.multiplier_step * rho;
  const double no = static_cast<double>(num_obstacles_);
  Eigen::MatrixXd bar_x = xi_bar.block(0, begin, n, count);
  Eigen::MatrixXd bar_y = xi_bar.block(n, begin, n, count);
  Eigen::MatrixXd b = b_eq.middleCols(begin, count);
  const Eigen::MatrixXd wt = basis_.W.transpose();
  const Eigen::MatrixXd wdt = basis_.Wdot.transpose();
  const Eigen::MatrixXd wddt = basis_.Wddot.transpose();

  Eigen::MatrixXd cx = bar_x, cy = bar_y;
  Eigen::MatrixXd lam_x = Eigen::MatrixXd::Zero(n, count);
  Eigen::MatrixXd lam_y = Eigen::MatrixXd::Zero(n, count);

  ChunkArrays a;
  sample(basis_, cx, cy, a);
  a.prev_da = (a.xdd.array().square() + a.ydd.array().square()).sqrt().matrix();
  polar_and_clip(spec, a.x, a);
  update_slack(spec, a);

  // Columns still iterating, as positions within the chunk. Finished columns
  // are dropped from the working matrices; columns never interact.
  std::vector<Eigen::Index> active(static_cast<std::size_t>(count));
  for (Eigen::Index j = 0; j < count; ++j) active[static_cast<std::size_t>(j)] = j;
  std::vector<bool> finished(static_cast<std::size_t>(count), false);
  auto residual_of = [&](Eigen::Index c) {
    return evaluate_columns(a.x.col(c), a.y.col(c), a.xd.col(c), a.yd.col(c), a.xdd.col(c),
                            a.ydd.col(c), spec)
        .total();
  };
  auto finish = [&](Eigen::Index c, double residual) {
    ProjectionReport& r = out[static_cast<std::size_t>(begin + active[static_cast<std::size_t>(c)])];
    r.xi.cx = cx.col(c);
    r.xi.cy = cy.col(c);
    r.residual = residual;
    r.infeasible_bounds = a.infeasible[static_cast<std::size_t>(c)];
    finished[static_cast<std::size_t>(c)] = true;
  };
  auto compact = [&]() {
    std::vector<Eigen::Index> keep, still;
    for (std::size_t c = 0; c < active.size(); ++c) {
      if (!finished[c]) {
        keep.push_back(static_cast<Eigen::Index>(c));
        still.push_back(active[c]);
      }
    }
    if (keep.size() == active.size()) return;
    for (Eigen::MatrixXd* mat : {&bar_x, &bar_y, &b, &cx, &cy, &lam_x, &lam_y}) keep_columns(*mat, keep);
    keep_columns(a, keep);
    active.swap(still);
    finished.assign(active.size(), false);
  };

  for (Eigen::Index c = 0; c < count; ++c) {
    const double r0 = residual_of(c);
    out[static_cast<std::size_t>(begin + c)].initial_residual = r0;
    if (r0 <= config_.tolerance || config_.max_iters == 0) finish(c, r0);
  }
  compact();

  const double ub_plus_lb = spec.lane_ub + spec.lane_lb;
  Eigen::MatrixXd q, xi_new;
  for (int k = 1; k <= config_.max_iters && !active.empty(); ++k) {
    const Eigen::Index cols = static_cast<Eigen::Index>(active.size());
    const Eigen::MatrixXd prev_x = a.x;

    // xi-step: penalized, equality-constrained QP for all columns at once.
    q.resize(2 * n, cols);
    q.topRows(n).noalias() = wt * a.hox;
    q.topRows(n).noalias() += wdt * a.hvx;
    q.topRows(n).noalias() += wddt * a.hax;
    q.topRows(n) = -(bar_x + lam_x + rho * q.topRows(n));
    const Eigen::MatrixXd lane_target =
        (ub_plus_lb + a.s_lb.array() - a.s_ub.array()).matrix();  // G^T (e - s) / W^T
    q.bottomRows(n).noalias() = wt * (a.hoy + lane_target);
    q.bottomRows(n).noalias() += wdt * a.hvy;
    q.bottomRows(n).noalias() += wddt * a.hay;
    q.bottomRows(n) = -(bar_y + lam_y + rho * q.bottomRows(n));
    kkt_.solve(q, b, xi_new, nullptr, false);
    cx = xi_new.topRows(n);
    cy = xi_new.bottomRows(n);
    sample(basis_, cx, cy, a);

    polar_and_clip(spec, prev_x, a);
    update_slack(spec, a);

    // Multiplier ascent on the penalized residuals F xi - h and G xi - e + s.
    const Eigen::MatrixXd gx = no * a.x - a.hox;
    lam_x.noalias() -= step * (wt * gx);
    lam_x.noalias() -= step * (wdt * (a.xd - a.hvx));
    lam_x.noalias() -= step * (wddt * (a.xdd - a.hax));
    const Eigen::MatrixXd gy =
        no * a.y - a.hoy + (2.0 * a.y.array() - ub_plus_lb + a.s_ub.array() - a.s_lb.array()).matrix();
    lam_y.noalias() -= step * (wt * gy);
    lam_y.noalias() -= step * (wdt * (a.yd - a.hvy));
    lam_y.noalias() -= step * (wddt * (a.ydd - a.hay));

    if (!cx.allFinite() || !cy.allFinite() || !lam_x.allFinite() || !lam_y.allFinite()) {
      throw NumericalFailure("non-finite projection iterate at iteration " + std::to_string(k));
    }

    for (Eigen::Index c = 0; c < cols; ++c) {
      ProjectionReport& r = out[static_cast<std::size_t>(begin + active[static_cast<std::size_t>(c)])];
      const double res = residual_of(c);
      r.residual_history.push_back(res);
      r.iterations_used = k;
      if (res <= config_.tolerance || k == config_.max_iters) finish(c, res);
    }
    compact();
  }
}

std::vector<ProjectionReport> BatchProjector::project(const Eigen::MatrixXd& xi_bar,
                                                      const Eigen::MatrixXd& b_eq,
                                                      const ConstraintSpec& spec) const {
  const int n = basis_.num_coeffs();
  if (xi_bar.rows() != 2 * n) throw InvalidArgument("xi_bar rows do not match basis");
  if (b_eq.rows() != kkt_.num_eq() || b_eq.cols() != xi_bar.cols()) {
    throw InvalidArgument("equality right-hand side does not match batch");
  }
  if (static_cast<int>(spec.obstacles.size()) != num_obstacles_) {
    throw InvalidArgument("constraint spec obstacle count differs from the projector's");
  }
  spec.validate(basis_.num_samples());

  std::vector<ProjectionReport> out(static_cast<std::size_t>(xi_bar.cols()));
  constexpr Eigen::Index kChunk = 64;
  const Eigen::Index num_chunks = (xi_bar.cols() + kChunk - 1) / kChunk;
  std::exception_ptr failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (Eigen::Index c = 0; c < num_chunks; ++c) {
    try {
      const Eigen::Index begin = c * kChunk;
      project_chunk(xi_bar, b_eq, spec, begin, std::min(kChunk, xi_bar.cols() - begin), out);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<ProjectionReport> project_batch(const QPSolutionBatch& batch, const Eigen::MatrixXd& b_eq,
                                            const ConstraintSpec& spec, const QPStructure& qp,
                                            const ProjectionConfig& config) {
  BatchProjector projector(qp, static_cast<int>(spec.obstacles.size()), config);
  return projector.project(batch.xi, b_eq, spec);
}

}  // namespace hwplan
