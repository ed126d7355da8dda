#pragma once

#include <Eigen/Core>

namespace fidgap::qp {

/// minimize 0.5 x'Hx + f'x  subject to  G x <= h
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  Eigen::MatrixXd ineq;
  Eigen::VectorXd ineq_rhs;
};

struct QpOptions {
  double tol = 1e-11;
  int max_iter = 100;
  bool polish = true;
};

enum class QpStatus { optimal, infeasible, max_iter };

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double kkt_residual = 0.0;
  bool polished = false;
};

/// Dense primal-dual interior point (Mehrotra predictor-corrector) followed by an
/// equality-constrained polish on the detected active set.
QpResult solve(const QpProblem& problem, const QpOptions& options = {});

/// Max-norm of stationarity, primal/dual infeasibility and complementarity.
double kkt_residual(const QpProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& multipliers);

}  // namespace fidgap::qp
