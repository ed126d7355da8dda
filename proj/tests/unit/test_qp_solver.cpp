#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "fidgap/qp_solver.hpp"

using namespace fidgap::qp;

namespace {

// Exhaustive active-set enumeration: the unique KKT point of a strictly convex QP.
Eigen::VectorXd enumerate_active_sets(const QpProblem& p) {
  const auto n = p.hessian.rows();
  const auto m = p.ineq.rows();
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (mask & (1u << i)) act.push_back(i);
    }
    const auto na = static_cast<Eigen::Index>(act.size());
    if (na > n) continue;
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n + na, n + na);
    Eigen::VectorXd rhs(n + na);
    k.topLeftCorner(n, n) = p.hessian;
    rhs.head(n) = -p.linear;
    for (Eigen::Index j = 0; j < na; ++j) {
      k.block(n + j, 0, 1, n) = p.ineq.row(act[j]);
      k.block(0, n + j, n, 1) = p.ineq.row(act[j]).transpose();
      rhs(n + j) = p.ineq_rhs(act[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    if (na > 0 && sol.tail(na).minCoeff() < -1e-12) continue;
    if ((p.ineq * x - p.ineq_rhs).maxCoeff() > 1e-10) continue;
    const double f = 0.5 * x.dot(p.hessian * x) + p.linear.dot(x);
    if (f < best) {
      best = f;
      best_x = x;
    }
  }
  return best_x;
}

QpProblem random_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> g(0.0, 1.0);
  QpProblem p;
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = g(rng);
  p.hessian = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.linear.resize(n);
  for (int i = 0; i < n; ++i) p.linear(i) = 3.0 * g(rng);
  p.ineq.resize(m, n);
  p.ineq_rhs.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) p.ineq(i, j) = g(rng);
    p.ineq_rhs(i) = std::abs(g(rng));  // x = 0 is strictly feasible
  }
  return p;
}

}  // namespace

TEST_CASE("unconstrained QP is the Newton step") {
  QpProblem p;
  p.hessian = Eigen::Matrix2d{{4.0, 1.0}, {1.0, 3.0}};
  p.linear = Eigen::Vector2d{1.0, -2.0};
  const auto r = solve(p);
  CHECK(r.status == QpStatus::optimal);
  const Eigen::VectorXd x = p.hessian.ldlt().solve(-p.linear);
  CHECK((r.x - x).norm() < 1e-12);
}

TEST_CASE("one-dimensional bound with its multiplier") {
  QpProblem p;
  p.hessian = Eigen::MatrixXd::Constant(1, 1, 2.0);
  p.linear = Eigen::VectorXd::Constant(1, -4.0);  // (x - 2)^2
  p.ineq = Eigen::MatrixXd::Constant(1, 1, 1.0);
  p.ineq_rhs = Eigen::VectorXd::Constant(1, 1.0);
  const auto r = solve(p);
  CHECK(r.status == QpStatus::optimal);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.multipliers(0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(r.kkt_residual < 1e-8);
}

TEST_CASE("randomized QPs agree with active-set enumeration") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 4;
    const int m = 1 + (trial / 4) % 7;
    const auto p = random_qp(rng, n, m);
    const auto r = solve(p);
    const auto oracle = enumerate_active_sets(p);
    INFO("trial ", trial, " n ", n, " m ", m);
    REQUIRE(r.status == QpStatus::optimal);
    CHECK((r.x - oracle).cwiseAbs().maxCoeff() < 1e-8 * (1.0 + oracle.cwiseAbs().maxCoeff()));
    CHECK(r.kkt_residual < 1e-8);
    CHECK(r.kkt_residual == doctest::Approx(kkt_residual(p, r.x, r.multipliers)));
    // complementarity products
    const Eigen::VectorXd g = p.ineq * r.x - p.ineq_rhs;
    CHECK(r.multipliers.cwiseProduct(g).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("contradictory bounds are reported infeasible") {
  QpProblem p;
  p.hessian = Eigen::MatrixXd::Identity(1, 1);
  p.linear = Eigen::VectorXd::Zero(1);
  p.ineq = Eigen::MatrixXd(2, 1);
  p.ineq << 1.0, -1.0;
  p.ineq_rhs = Eigen::Vector2d{-1.0, -1.0};  // x <= -1 and x >= 1
  CHECK(solve(p).status == QpStatus::infeasible);
}

TEST_CASE("solves are bit-for-bit deterministic") {
  std::mt19937_64 rng(7);
  const auto p = random_qp(rng, 3, 6);
  const auto a = solve(p);
  const auto b = solve(p);
  CHECK(a.x == b.x);
  CHECK(a.multipliers == b.multipliers);
}

TEST_CASE("kkt_residual grows when the primal point is perturbed") {
  std::mt19937_64 rng(3);
  const auto p = random_qp(rng, 2, 4);
  const auto r = solve(p);
  Eigen::VectorXd x = r.x;
  x(0) += 1e-3;
  CHECK(kkt_residual(p, x, r.multipliers) > r.kkt_residual);
}
