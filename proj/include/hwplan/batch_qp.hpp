#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "hwplan/basis.hpp"
#include "hwplan/behavior.hpp"

namespace hwplan {

/// Position, velocity and acceleration of the ego vehicle at the start of the
/// horizon (the stacked b0).
struct InitialState {
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
  double ax = 0.0, ay = 0.0;
};

/// Weights of the lower-level cost
///   w_smooth (xdd^2 + ydd^2)
/// + w_offset (ydd + kp (y - y_d) + kv ydot)^2
/// + w_velocity (xdd + k_vel (xdot - v_d))^2.
struct TrackingGains {
  double kp = 20.0;
  double kv = 2.0 * std::sqrt(20.0);
  double k_vel = 1.0;
  double w_smooth = 1.0;
  double w_offset = 20.0;
  double w_velocity = 20.0;
};

/// Factorized bordered system [[H, A^T], [A, 0]] shared by every column of a
/// batch. Each instance factorizes exactly once, at construction.
class KktSystem {
 public:
  KktSystem() = default;
  KktSystem(const Eigen::MatrixXd& hessian, const Eigen::MatrixXd& a_eq);

  int num_vars() const { return static_cast<int>(hessian_.rows()); }
  int num_eq() const { return static_cast<int>(a_eq_.rows()); }
  const Eigen::MatrixXd& hessian() const { return hessian_; }
  const Eigen::MatrixXd& a_eq() const { return a_eq_; }
  const Eigen::MatrixXd& matrix() const { return kkt_; }

  /// Solves [[H, A^T], [A, 0]] [xi; mu] = [-q; b] for every column at once.
  /// With `check_residual` the per-column residual must stay below
  /// 1e-8 (1 + |rhs|) or NumericalFailure is thrown.
  void solve(const Eigen::MatrixXd& q, const Eigen::MatrixXd& b, Eigen::MatrixXd& xi,
             Eigen::MatrixXd* mu = nullptr, bool check_residual = true) const;

  /// Number of factorizations performed by all KktSystem instances so far.
  static std::int64_t factorization_count();

 private:
  Eigen::MatrixXd hessian_;
  Eigen::MatrixXd a_eq_;
  Eigen::MatrixXd kkt_;
  Eigen::FullPivLU<Eigen::MatrixXd> lu_;
};

/// Cost Hessian and equality structure of the lower-level QP. Independent of
/// the behavioral parameters, so it is built and factorized once per planner.
class QPStructure {
 public:
  QPStructure(const PolynomialBasis& basis, const TrackingGains& gains, bool final_conditions);

  const PolynomialBasis& basis() const { return basis_; }
  const TrackingGains& gains() const { return gains_; }
  bool final_conditions() const { return final_conditions_; }
  const Eigen::MatrixXd& Q() const { return kkt_.hessian(); }
  const Eigen::MatrixXd& A_eq() const { return kkt_.a_eq(); }
  const KktSystem& kkt() const { return kkt_; }
  int num_vars() const { return kkt_.num_vars(); }
  int num_eq() const { return kkt_.num_eq(); }

  /// Equality constraints A_eq as separate x / y blocks (each over one
  /// coefficient vector); used by the projection to reuse the same rows.
  static Eigen::MatrixXd equality_matrix(const PolynomialBasis& basis, bool final_conditions);

 private:
  PolynomialBasis basis_;
  TrackingGains gains_;
  bool final_conditions_;
  KktSystem kkt_;
};

/// Per-sample linear costs q(p_j) and equality right-hand sides b(p_j), one
/// column per sample.
struct QPRightHandSideBatch {
  Eigen::MatrixXd q;
  Eigen::MatrixXd b;
  int batch_size() const { return static_cast<int>(q.cols()); }
};

struct QPSolutionBatch {
  Eigen::MatrixXd xi;  // 2(order+1) x batch
  Eigen::MatrixXd mu;  // num_eq x batch
  int batch_size() const { return static_cast<int>(xi.cols()); }
};

/// Builds q and b for each column of `params` (layout.dim() x batch).
QPRightHandSideBatch assemble_rhs(const QPStructure& structure, const BehaviorLayout& layout,
                                  const Eigen::MatrixXd& params, const InitialState& b0);

/// Stacked equality right-hand side for one sample.
Eigen::VectorXd equality_rhs(const InitialState& b0, bool final_conditions, double x_final,
                             double y_final);

QPSolutionBatch solve_batch(const QPStructure& structure, const QPRightHandSideBatch& rhs);

}  // namespace hwplan

namespace hwplan {

struct AssembledQP {
  QPStructure structure;
  Eigen::VectorXd q;
  Eigen::VectorXd b;
};

/// Single-sample convenience: structure plus q(p), b(p) for one parameter.
AssembledQP assemble_qp(const PolynomialBasis& basis, const TrackingGains& gains,
                        const BehaviorParams& p, const InitialState& b0);

}  // namespace hwplan
