#include "hwplan/batch_qp.hpp"

#include <atomic>
#include <string>

#include "hwplan/errors.hpp"

namespace hwplan {

namespace {
std::atomic<std::int64_t> g_factorizations{0};
}  // namespace

KktSystem::KktSystem(const Eigen::MatrixXd& hessian, const Eigen::MatrixXd& a_eq)
    : hessian_(hessian), a_eq_(a_eq) {
  const Eigen::Index n = hessian.rows();
  const Eigen::Index p = a_eq.rows();
  if (hessian.cols() != n || (p > 0 && a_eq.cols() != n)) {
    throw InvalidArgument("KKT block dimensions disagree");
  }
  if (p > 0) {
    Eigen::FullPivLU<Eigen::MatrixXd> a_lu(a_eq);
    if (a_lu.rank() < p) {
      throw StructureError("equality constraint matrix is rank deficient (rank " +
                           std::to_string(a_lu.rank()) + " of " + std::to_string(p) + ")");
    }
  }
  kkt_.setZero(n + p, n + p);
  kkt_.topLeftCorner(n, n) = hessian;
  if (p > 0) {
    kkt_.topRightCorner(n, p) = a_eq.transpose();
    kkt_.bottomLeftCorner(p, n) = a_eq;
  }
  lu_.compute(kkt_);
  ++g_factorizations;
  if (!lu_.isInvertible()) {
    throw StructureError("KKT matrix is singular; Q is not positive definite on null(A_eq)");
  }
}

void KktSystem::solve(const Eigen::MatrixXd& q, const Eigen::MatrixXd& b, Eigen::MatrixXd& xi,
                      Eigen::MatrixXd* mu, bool check_residual) const {
  const Eigen::Index n = num_vars();
  const Eigen::Index p = num_eq();
  if (q.rows() != n || b.rows() != p || q.cols() != b.cols()) {
    throw InvalidArgument("KKT right-hand side dimensions disagree");
  }
  Eigen::MatrixXd rhs(n + p, q.cols());
  rhs.topRows(n) = -q;
  rhs.bottomRows(p) = b;
  Eigen::MatrixXd sol = lu_.solve(rhs);
  if (!sol.allFinite()) throw NumericalFailure("non-finite KKT solution");
  if (check_residual) {
    const Eigen::MatrixXd res = kkt_ * sol - rhs;
    for (Eigen::Index j = 0; j < rhs.cols(); ++j) {
      const double tol = 1e-8 * (1.0 + rhs.col(j).norm());
      if (res.col(j).norm() > tol) {
        throw NumericalFailure("KKT residual " + std::to_string(res.col(j).norm()) +
                               " exceeds tolerance in column " + std::to_string(j));
      }
    }
  }
  xi = sol.topRows(n);
  if (mu) *mu = sol.bottomRows(p);
}

std::int64_t KktSystem::factorization_count() { return g_factorizations.load(); }

Eigen::MatrixXd QPStructure::equality_matrix(const PolynomialBasis& basis, bool final_conditions) {
  const int n = basis.num_coeffs();
  const int last = basis.num_samples() - 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(final_conditions ? 9 : 6, 2 * n);
  a.block(0, 0, 1, n) = basis.W.row(0);
  a.block(1, 0, 1, n) = basis.Wdot.row(0);
  a.block(2, 0, 1, n) = basis.Wddot.row(0);
  a.block(3, n, 1, n) = basis.W.row(0);
  a.block(4, n, 1, n) = basis.Wdot.row(0);
  a.block(5, n, 1, n) = basis.Wddot.row(0);
  if (final_conditions) {
    a.block(6, 0, 1, n) = basis.W.row(last);
    a.block(7, n, 1, n) = basis.W.row(last);
    a.block(8, n, 1, n) = basis.Wdot.row(last);
  }
  return a;
}

namespace {

Eigen::MatrixXd lateral_operator(const PolynomialBasis& basis, const TrackingGains& g) {
  return basis.Wddot + g.kv * basis.Wdot + g.kp * basis.W;
}

Eigen::MatrixXd velocity_operator(const PolynomialBasis& basis, const TrackingGains& g) {
  return basis.Wddot + g.k_vel * basis.Wdot;
}

Eigen::MatrixXd cost_hessian(const PolynomialBasis& basis, const TrackingGains& g) {
  const int n = basis.num_coeffs();
  const Eigen::MatrixXd smooth = basis.Wddot.transpose() * basis.Wddot;
  const Eigen::MatrixXd lat = lateral_operator(basis, g);
  const Eigen::MatrixXd vel = velocity_operator(basis, g);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  q.topLeftCorner(n, n) = 2.0 * (g.w_smooth * smooth + g.w_velocity * vel.transpose() * vel);
  q.bottomRightCorner(n, n) = 2.0 * (g.w_smooth * smooth + g.w_offset * lat.transpose() * lat);
  return q;
}

}  // namespace

QPStructure::QPStructure(const PolynomialBasis& basis, const TrackingGains& gains,
                         bool final_conditions)
    : basis_(basis),
      gains_(gains),
      final_conditions_(final_conditions),
      kkt_(cost_hessian(basis, gains), equality_matrix(basis, final_conditions)) {}

Eigen::VectorXd equality_rhs(const InitialState& b0, bool final_conditions, double x_final,
                             double y_final) {
  Eigen::VectorXd b(final_conditions ? 9 : 6);
  b.head(6) << b0.x, b0.vx, b0.ax, b0.y, b0.vy, b0.ay;
  if (final_conditions) b.tail(3) << x_final, y_final, 0.0;
  return b;
}

QPRightHandSideBatch assemble_rhs(const QPStructure& structure, const BehaviorLayout& layout,
                                  const Eigen::MatrixXd& params, const InitialState& b0) {
  if (params.rows() != layout.dim()) throw InvalidArgument("parameter rows do not match layout");
  if (layout.use_goal != structure.final_conditions()) {
    throw InvalidArgument("goal set-points require a structure built with final conditions");
  }
  const PolynomialBasis& basis = structure.basis();
  const TrackingGains& g = structure.gains();
  const int m = basis.num_samples();
  const int n = basis.num_coeffs();
  const Eigen::Index batch = params.cols();

  // Expand segment set-points to per-sample targets (m x batch).
  Eigen::MatrixXd y_des(m, batch), v_des(m, batch);
  for (int i = 0; i < m; ++i) {
    const int seg = segment_of_sample(i, m, layout.segments);
    y_des.row(i) = params.row(layout.lateral_offset(seg));
    v_des.row(i) = params.row(layout.velocity_offset(seg));
  }

  QPRightHandSideBatch rhs;
  rhs.q.resize(2 * n, batch);
  rhs.q.topRows(n) = (-2.0 * g.w_velocity * g.k_vel) * (velocity_operator(basis, g).transpose() * v_des);
  rhs.q.bottomRows(n) = (-2.0 * g.w_offset * g.kp) * (lateral_operator(basis, g).transpose() * y_des);

  const Eigen::VectorXd b_common = equality_rhs(b0, false, 0.0, 0.0);
  rhs.b.resize(structure.num_eq(), batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    rhs.b.col(j).head(6) = b_common;
    if (layout.use_goal) {
      rhs.b.col(j).tail(3) << params(layout.goal_offset(), j), params(layout.goal_offset() + 1, j), 0.0;
    }
  }
  return rhs;
}

QPSolutionBatch solve_batch(const QPStructure& structure, const QPRightHandSideBatch& rhs) {
  if (rhs.batch_size() < 1) throw InvalidArgument("empty QP batch");
  QPSolutionBatch out;
  structure.kkt().solve(rhs.q, rhs.b, out.xi, &out.mu, true);
  return out;
}

AssembledQP assemble_qp(const PolynomialBasis& basis, const TrackingGains& gains,
                        const BehaviorParams& p, const InitialState& b0) {
  BehaviorLayout layout{static_cast<int>(p.lateral.size()), p.goal.has_value()};
  if (layout.segments < 1) throw InvalidArgument("at least one set-point segment is required");
  QPStructure structure(basis, gains, layout.use_goal);
  const Eigen::MatrixXd params = p.to_vector();
  QPRightHandSideBatch rhs = assemble_rhs(structure, layout, params, b0);
  return {std::move(structure), rhs.q.col(0), rhs.b.col(0)};
}

}  // namespace hwplan
