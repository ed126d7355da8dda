#include "fidgap/qp_solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace fidgap::qp {

double kkt_residual(const QpProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
  double res = 0.0;
  Eigen::VectorXd stat = p.hessian * x + p.linear;
  if (p.ineq.rows() > 0) {
    stat += p.ineq.transpose() * lambda;
    const Eigen::VectorXd g = p.ineq * x - p.ineq_rhs;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      res = std::max(res, std::max(0.0, g(i)));
      res = std::max(res, std::max(0.0, -lambda(i)));
      res = std::max(res, std::abs(lambda(i) * g(i)));
    }
  }
  if (stat.size() > 0) res = std::max(res, stat.cwiseAbs().maxCoeff());
  return res;
}

namespace {

// Largest step in (0, 1] keeping v + alpha dv >= 0.
double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  return ldlt.solve(rhs);
}

// Solve the equality-constrained QP on a guessed active set, then repair the guess:
// add the most violated inactive row or drop the most negative multiplier, a few times.
bool polish(const QpProblem& p, const Eigen::VectorXd& s, const Eigen::VectorXd& z, Eigen::VectorXd& x_out,
            Eigen::VectorXd& lambda_out) {
  const auto n = p.hessian.rows();
  const auto m = p.ineq.rows();
  std::vector<char> in_set(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < m; ++i) in_set[static_cast<std::size_t>(i)] = z(i) > s(i);
  const double scale = 1.0 + p.ineq_rhs.cwiseAbs().maxCoeff();

  for (int round = 0; round < 8; ++round) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_set[static_cast<std::size_t>(i)]) active.push_back(i);
    }
    const auto na = static_cast<Eigen::Index>(active.size());
    if (na > n) return false;
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + na, n + na);
    Eigen::VectorXd rhs(n + na);
    kkt.topLeftCorner(n, n) = p.hessian;
    rhs.head(n) = -p.linear;
    for (Eigen::Index j = 0; j < na; ++j) {
      kkt.block(n + j, 0, 1, n) = p.ineq.row(active[j]);
      kkt.block(0, n + j, n, 1) = p.ineq.row(active[j]).transpose();
      rhs(n + j) = p.ineq_rhs(active[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) return false;
    Eigen::VectorXd sol = lu.solve(rhs);
    sol += lu.solve(rhs - kkt * sol);  // one round of iterative refinement

    const Eigen::VectorXd x = sol.head(n);
    Eigen::Index worst_mult = -1;
    double worst_l = 0.0;
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < na; ++j) {
      const double l = sol(n + j);
      if (l < -1e-9 * (1.0 + z(active[j])) && l < worst_l) {
        worst_l = l;
        worst_mult = active[j];
      }
      lambda(active[j]) = std::max(0.0, l);
    }
    const Eigen::VectorXd g = p.ineq * x - p.ineq_rhs;
    Eigen::Index worst_row = -1;
    double worst_g = 1e-9 * scale;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!in_set[static_cast<std::size_t>(i)] && g(i) > worst_g) {
        worst_g = g(i);
        worst_row = i;
      }
    }
    if (worst_mult < 0 && worst_row < 0) {
      x_out = x;
      lambda_out = lambda;
      return true;
    }
    if (worst_row >= 0) in_set[static_cast<std::size_t>(worst_row)] = 1;
    else in_set[static_cast<std::size_t>(worst_mult)] = 0;
  }
  return false;
}

}  // namespace

QpResult solve(const QpProblem& p, const QpOptions& options) {
  const auto n = p.hessian.rows();
  const auto m = p.ineq.rows();
  QpResult result;

  if (m == 0) {
    result.x = solve_spd(p.hessian, -p.linear);
    result.multipliers = Eigen::VectorXd();
    result.kkt_residual = kkt_residual(p, result.x, result.multipliers);
    result.status = QpStatus::optimal;
    return result;
  }

  const Eigen::MatrixXd& G = p.ineq;
  const Eigen::VectorXd& h = p.ineq_rhs;
  const double f_norm = p.linear.size() ? p.linear.cwiseAbs().maxCoeff() : 0.0;
  const double h_norm = h.cwiseAbs().maxCoeff();
  const double reg = 1e-14 * (1.0 + p.hessian.diagonal().cwiseAbs().maxCoeff());

  // least-squares start, then push slacks and multipliers into the interior
  Eigen::MatrixXd m0 = p.hessian + G.transpose() * G;
  m0.diagonal().array() += reg;
  Eigen::VectorXd x = solve_spd(m0, -p.linear + G.transpose() * h);
  Eigen::VectorXd s = (h - G * x).cwiseMax(1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(m);

  Eigen::MatrixXd kkt(n, n);
  Eigen::VectorXd best_x = x, best_s = s, best_z = z;
  double best_merit = std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iter; ++it) {
    result.iterations = it + 1;
    const Eigen::VectorXd gz = G.transpose() * z;
    const Eigen::VectorXd hx = p.hessian * x;
    const Eigen::VectorXd gx = G * x;
    const Eigen::VectorXd r_d = hx + p.linear + gz;
    const Eigen::VectorXd r_p = gx + s - h;
    const double mu = s.dot(z) / static_cast<double>(m);
    if (!r_d.allFinite() || !r_p.allFinite() || !std::isfinite(mu)) break;

    // residuals relative to the magnitude of the terms that produce them
    const double d_scale = 1.0 + std::max({f_norm, hx.cwiseAbs().maxCoeff(), gz.cwiseAbs().maxCoeff()});
    const double p_scale = 1.0 + std::max(h_norm, gx.cwiseAbs().maxCoeff());
    const double rd_n = r_d.cwiseAbs().maxCoeff();
    const double rp_n = r_p.cwiseAbs().maxCoeff();
    const double merit = std::max({rd_n / d_scale, rp_n / p_scale, mu});
    if (merit < best_merit) {
      best_merit = merit;
      best_x = x;
      best_s = s;
      best_z = z;
    }
    if (rd_n <= options.tol * d_scale && rp_n <= options.tol * p_scale && mu <= options.tol) {
      result.status = QpStatus::optimal;
      break;
    }
    // diverging multipliers with a stuck primal residual: certificate of infeasibility
    if (z.cwiseAbs().maxCoeff() > 1e14 * (1.0 + f_norm) && rp_n > 1e-6 * (1.0 + h_norm)) {
      result.status = QpStatus::infeasible;
      break;
    }

    const Eigen::VectorXd w = z.cwiseQuotient(s);
    kkt = p.hessian + G.transpose() * w.asDiagonal() * G;
    kkt.diagonal().array() += reg;
    Eigen::LLT<Eigen::MatrixXd> llt(kkt);
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    const bool use_llt = llt.info() == Eigen::Success;
    if (!use_llt) ldlt.compute(kkt);

    auto newton = [&](const Eigen::VectorXd& r_c, Eigen::VectorXd& dx, Eigen::VectorXd& ds, Eigen::VectorXd& dz) {
      const Eigen::VectorXd rhs = -r_d - G.transpose() * (w.cwiseProduct(r_p) - r_c.cwiseQuotient(s));
      dx = use_llt ? Eigen::VectorXd(llt.solve(rhs)) : Eigen::VectorXd(ldlt.solve(rhs));
      dz = w.cwiseProduct(G * dx + r_p) - r_c.cwiseQuotient(s);
      ds = -(r_c + s.cwiseProduct(dz)).cwiseQuotient(z);
    };

    Eigen::VectorXd dx, ds, dz;
    const Eigen::VectorXd r_aff = s.cwiseProduct(z);
    newton(r_aff, dx, ds, dz);
    const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(m);
    const double sigma = std::pow(mu_aff / mu, 3);

    const Eigen::VectorXd r_c = (r_aff + ds.cwiseProduct(dz)).array() - sigma * mu;
    newton(r_c, dx, ds, dz);
    const double alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
    // no further progress is possible once the step collapses or mu underflows
    if (!(alpha > 1e-12) || mu < 1e-20) break;
    x += alpha * dx;
    s += alpha * ds;
    z += alpha * dz;
    // keep strictly interior
    s = s.cwiseMax(std::numeric_limits<double>::min());
    z = z.cwiseMax(std::numeric_limits<double>::min());
  }
  if (result.status != QpStatus::optimal && result.status != QpStatus::infeasible) {
    x = best_x;
    s = best_s;
    z = best_z;
  }

  if (result.status == QpStatus::max_iter) {
    const double rp_n = (G * x - h).cwiseMax(0.0).maxCoeff();
    if (rp_n > 1e-6 * (1.0 + h_norm)) result.status = QpStatus::infeasible;
  }

  result.x = x;
  result.multipliers = z;
  result.kkt_residual = kkt_residual(p, x, z);
  if (result.status != QpStatus::infeasible && options.polish) {
    Eigen::VectorXd xp, lp;
    if (polish(p, s, z, xp, lp)) {
      const double res = kkt_residual(p, xp, lp);
      if (res <= result.kkt_residual) {
        result.x = xp;
        result.multipliers = lp;
        result.kkt_residual = res;
        result.polished = true;
      }
    }
    if (result.status == QpStatus::max_iter && result.polished) result.status = QpStatus::optimal;
  }
  return result;
}

}  // namespace fidgap::qp
