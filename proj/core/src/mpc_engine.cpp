#include "fidgap/mpc_engine.hpp"

#include <Eigen/LU>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <iostream>

#include "fidgap/qp_solver.hpp"

namespace fidgap::mpc {

const char* to_string(MpcStatus status) {
  switch (status) {
    case MpcStatus::optimal: return "optimal";
    case MpcStatus::softened_optimal: return "softened-optimal";
    case MpcStatus::infeasible: return "infeasible";
    case MpcStatus::max_iter: return "max-iter";
  }
  return "unknown";
}

Eigen::VectorXd MpcSolution::control(int k) const {
  const auto m = controls.size() / std::max<Eigen::Index>(1, static_cast<Eigen::Index>(states.size()) - 1);
  return controls.segment(k * m, m);
}

void MpcProblem::validate() const {
  if (horizon < 1) throw std::invalid_argument("MpcProblem: horizon N must be >= 1");
  if (state_dim < 1 || control_dim < 1) throw std::invalid_argument("MpcProblem: state and control dimensions must be >= 1");
  if (dynamics.size() != 1 && dynamics.size() != static_cast<std::size_t>(horizon)) {
    throw std::invalid_argument("MpcProblem: dynamics must hold one entry or one per stage");
  }
  for (const auto& d : dynamics) {
    if (d.a.rows() != state_dim || d.a.cols() != state_dim || d.b.rows() != state_dim ||
        d.b.cols() != control_dim || d.offset.size() != state_dim) {
      throw std::invalid_argument("MpcProblem: dynamics dimensions do not match state/control dims");
    }
  }
  if (cost.output.cols() != state_dim || cost.reference.size() != cost.output.rows()) {
    throw std::invalid_argument("MpcProblem: cost output/reference dimensions are inconsistent");
  }
  cost.theta.validate();
  if (!(cost.control_scale > 0.0)) throw std::invalid_argument("MpcProblem: control_scale must be > 0");
  if (initial_state.size() != state_dim) throw std::invalid_argument("MpcProblem: initial state has wrong size");
  for (const auto& c : constraints) {
    if (c.stage < 0 || c.stage > horizon) {
      throw std::invalid_argument(fmt::format("MpcProblem: constraint '{}' stage {} outside [0, N]", c.name, c.stage));
    }
  }
  if (slack_weight && !(*slack_weight > 0.0)) throw std::invalid_argument("MpcProblem: slack weight must be > 0");
}

Condensed condense(const MpcProblem& p) {
  const int n = p.state_dim;
  const int m = p.control_dim;
  const int nu = p.horizon * m;
  Condensed c;
  c.phi.reserve(p.horizon + 1);
  c.gamma.reserve(p.horizon + 1);
  c.psi.reserve(p.horizon + 1);
  c.phi.push_back(Eigen::MatrixXd::Identity(n, n));
  c.gamma.push_back(Eigen::MatrixXd::Zero(n, nu));
  c.psi.push_back(Eigen::VectorXd::Zero(n));
  for (int k = 0; k < p.horizon; ++k) {
    const auto& d = p.dynamics_at(k);
    c.phi.push_back(d.a * c.phi[k]);
    Eigen::MatrixXd g = d.a * c.gamma[k];
    g.middleCols(k * m, m) += d.b;
    c.gamma.push_back(std::move(g));
    c.psi.push_back(d.a * c.psi[k] + d.offset);
  }
  return c;
}

std::vector<Eigen::VectorXd> predict_states(const MpcProblem& p, const Condensed& c, const Eigen::VectorXd& u) {
  std::vector<Eigen::VectorXd> z;
  z.reserve(p.horizon + 1);
  for (int k = 0; k <= p.horizon; ++k) z.push_back(c.phi[k] * p.initial_state + c.gamma[k] * u + c.psi[k]);
  return z;
}

SmoothEval evaluate_constraint(const StageConstraint& c, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  if (const auto* a = std::get_if<AffineForm>(&c.form)) {
    SmoothEval e;
    e.value = a->state.dot(z) + a->offset;
    if (a->control.size() > 0 && u.size() > 0) e.value += a->control.dot(u);
    e.d_state = a->state;
    e.d_control = a->control.size() ? a->control : Eigen::VectorXd::Zero(u.size());
    return e;
  }
  auto e = std::get<SmoothForm>(c.form).eval(z, u);
  if (e.d_control.size() == 0) e.d_control = Eigen::VectorXd::Zero(u.size());
  return e;
}

double effective_r(const MpcProblem& p, const SolverOptions& options) {
  return p.cost.theta.r > 0.0 ? p.cost.theta.r : options.tie_break;
}

double evaluate_cost(const MpcProblem& p, const std::vector<Eigen::VectorXd>& z, const Eigen::VectorXd& u,
                     const Eigen::VectorXd& slacks) {
  double j = 0.0;
  for (int k = 0; k <= p.horizon; ++k) j += p.cost.theta.q * (p.cost.output * z[k] - p.cost.reference).squaredNorm();
  j += p.cost.theta.r * (u / p.cost.control_scale).squaredNorm();
  if (p.slack_weight && slacks.size()) j += *p.slack_weight * slacks.squaredNorm();
  return j;
}

namespace {

struct Layout {
  int nu = 0;                    // scaled controls
  int ns = 0;                    // slacks
  std::vector<int> slack_col;    // per constraint, -1 when hard
  int nv() const { return nu + ns; }
};

Layout make_layout(const MpcProblem& p) {
  Layout l;
  l.nu = p.horizon * p.control_dim;
  l.slack_col.assign(p.constraints.size(), -1);
  if (p.softened()) {
    for (std::size_t i = 0; i < p.constraints.size(); ++i) {
      if (p.constraints[i].tag == ConstraintTag::adversarial) l.slack_col[i] = l.nu + l.ns++;
    }
  }
  return l;
}

// Quadratic model of the cost in decision coordinates w = (v, s), v = U / control_scale.
void cost_quadratic(const MpcProblem& p, const Condensed& c, const Layout& l, const SolverOptions& o,
                    Eigen::MatrixXd& hess, Eigen::VectorXd& lin) {
  const double scale = p.cost.control_scale;
  const double q = p.cost.theta.q;
  hess = Eigen::MatrixXd::Zero(l.nv(), l.nv());
  lin = Eigen::VectorXd::Zero(l.nv());
  for (int k = 1; k <= p.horizon; ++k) {
    const Eigen::MatrixXd gk = scale * p.cost.output * c.gamma[k];
    const Eigen::VectorXd ek = p.cost.output * (c.phi[k] * p.initial_state + c.psi[k]) - p.cost.reference;
    hess.topLeftCorner(l.nu, l.nu).noalias() += 2.0 * q * gk.transpose() * gk;
    lin.head(l.nu).noalias() += 2.0 * q * gk.transpose() * ek;
  }
  hess.topLeftCorner(l.nu, l.nu).diagonal().array() += 2.0 * effective_r(p, o);
  for (int j = 0; j < l.ns; ++j) hess(l.nu + j, l.nu + j) = 2.0 * p.slack_weight.value();
}

// Gradient of constraint i with respect to v (scaled controls) at the given trajectory.
struct Linearized {
  double value = 0.0;
  Eigen::RowVectorXd row;
};

Linearized linearize(const MpcProblem& p, const Condensed& c, const StageConstraint& con,
                     const std::vector<Eigen::VectorXd>& z, const Eigen::VectorXd& u) {
  const int m = p.control_dim;
  const int k = con.stage;
  const Eigen::VectorXd uk = k < p.horizon ? Eigen::VectorXd(u.segment(k * m, m)) : Eigen::VectorXd::Zero(m);
  const auto e = evaluate_constraint(con, z[k], uk);
  Linearized lin;
  lin.value = e.value;
  lin.row = p.cost.control_scale * (e.d_state.transpose() * c.gamma[k]);
  if (k < p.horizon) lin.row.segment(k * m, m) += p.cost.control_scale * e.d_control.transpose();
  return lin;
}

bool has_smooth(const MpcProblem& p);

// Grow the trust region when the step reached its boundary and the smooth constraints
// moved as their linearization predicted; shrink it back when they did not.
double next_radius(const MpcProblem& p, const Condensed& c, const Layout& l, const SolverOptions& o,
                   const Eigen::VectorXd& w_old, const Eigen::VectorXd& w_new, double radius) {
  const double scale = p.cost.control_scale;
  const Eigen::VectorXd dv = (w_new - w_old).head(l.nu);
  double output_step = 0.0;
  for (int k = 1; k <= p.horizon; ++k) {
    const Eigen::VectorXd dy = scale * p.cost.output * c.gamma[k] * dv;
    if (dy.size()) output_step = std::max(output_step, dy.cwiseAbs().maxCoeff());
  }
  const double control_step = dv.size() ? dv.cwiseAbs().maxCoeff() * scale : 0.0;
  const bool at_boundary = control_step >= 0.999 * radius * o.trust_control ||
                           output_step >= 0.999 * radius * o.trust_output;

  const Eigen::VectorXd u_old = scale * w_old.head(l.nu);
  const Eigen::VectorXd u_new = scale * w_new.head(l.nu);
  const auto z_old = predict_states(p, c, u_old);
  const auto z_new = predict_states(p, c, u_new);
  double mismatch = 0.0, predicted = 0.0;
  for (const auto& con : p.constraints) {
    if (!std::holds_alternative<SmoothForm>(con.form)) continue;
    const auto before = linearize(p, c, con, z_old, u_old);
    const auto after = linearize(p, c, con, z_new, u_new);
    const double change = before.row.dot(dv);
    mismatch = std::max(mismatch, std::abs(after.value - before.value - change));
    predicted = std::max(predicted, std::abs(change));
  }
  if (mismatch > 0.5 * predicted && mismatch > o.feas_tol) return std::max(1.0, 0.25 * radius);
  if (at_boundary && mismatch <= 0.1 * predicted + o.feas_tol) return std::min(1e6, 4.0 * radius);
  return radius;
}

bool has_smooth(const MpcProblem& p) {
  return std::any_of(p.constraints.begin(), p.constraints.end(),
                     [](const StageConstraint& c) { return std::holds_alternative<SmoothForm>(c.form); });
}

struct Residuals {
  double kkt = 0.0;
  double infeasibility = 0.0;
};

Residuals residuals(const MpcProblem& p, const Condensed& c, const Layout& l, const SolverOptions& o,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& slacks, const Eigen::VectorXd& lambda,
                    const Eigen::VectorXd& slack_mult) {
  Eigen::MatrixXd hess;
  Eigen::VectorXd lin;
  cost_quadratic(p, c, l, o, hess, lin);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(l.nv());
  w.head(l.nu) = u / p.cost.control_scale;
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    if (l.slack_col[i] >= 0) w(l.slack_col[i]) = slacks(i);
  }
  Eigen::VectorXd stat = hess * w + lin;
  const auto z = predict_states(p, c, u);
  Residuals r;
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    const auto li = linearize(p, c, p.constraints[i], z, u);
    double g = li.value;
    stat.head(l.nu) += lambda(i) * li.row.transpose();
    if (l.slack_col[i] >= 0) {
      const int col = l.slack_col[i];
      g -= slacks(i);
      stat(col) -= lambda(i) + slack_mult(i);
      r.infeasibility = std::max(r.infeasibility, std::max(0.0, -slacks(i)));
      r.kkt = std::max({r.kkt, std::max(0.0, -slack_mult(i)), std::abs(slack_mult(i) * slacks(i))});
    }
    r.infeasibility = std::max(r.infeasibility, std::max(0.0, g));
    r.kkt = std::max({r.kkt, std::max(0.0, -lambda(i)), std::abs(lambda(i) * g)});
  }
  if (stat.size()) r.kkt = std::max(r.kkt, stat.cwiseAbs().maxCoeff());
  r.kkt = std::max(r.kkt, r.infeasibility);
  return r;
}

}  // namespace

double kkt_residual(const MpcSolution& s, const MpcProblem& p, const SolverOptions& o) {
  const auto c = condense(p);
  const auto l = make_layout(p);
  const auto nc = static_cast<Eigen::Index>(p.constraints.size());
  const Eigen::VectorXd slacks = s.slacks.size() == nc ? s.slacks : Eigen::VectorXd::Zero(nc);
  const Eigen::VectorXd sm = s.slack_multipliers.size() == nc ? s.slack_multipliers : Eigen::VectorXd::Zero(nc);
  const Eigen::VectorXd lambda = s.multipliers.size() == nc ? s.multipliers : Eigen::VectorXd::Zero(nc);
  return residuals(p, c, l, o, s.controls, slacks, lambda, sm).kkt;
}

MpcSolution solve(const MpcProblem& p, const SolverOptions& o, const Eigen::VectorXd* warm_start) {
  p.validate();
  const auto c = condense(p);
  const auto l = make_layout(p);
  const double scale = p.cost.control_scale;
  const auto nc = static_cast<int>(p.constraints.size());
  const bool smooth = has_smooth(p);

  qp::QpProblem qp;
  cost_quadratic(p, c, l, o, qp.hessian, qp.linear);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(l.nv());
  if (warm_start && warm_start->size() == l.nu) w.head(l.nu) = *warm_start / scale;

  MpcSolution sol;
  sol.multipliers = Eigen::VectorXd::Zero(nc);
  sol.slacks = Eigen::VectorXd::Zero(nc);
  sol.slack_multipliers = Eigen::VectorXd::Zero(nc);
  bool infeasible = false;
  bool converged = false;
  double radius = 1.0;  // multiplier on the trust region, grown while the linearization stays accurate

  for (int outer = 1; outer <= (smooth ? o.max_outer : 1); ++outer) {
    sol.outer_iterations = outer;
    const Eigen::VectorXd u = scale * w.head(l.nu);
    const auto z = predict_states(p, c, u);

    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> rhs;
    std::vector<int> owner;  // constraint index, or -2 - j for slack bound j, or -1 for trust region
    bool constant_violation = false;
    for (int i = 0; i < nc; ++i) {
      const auto li = linearize(p, c, p.constraints[i], z, u);
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(l.nv());
      row.head(l.nu) = li.row;
      if (l.slack_col[i] >= 0) row(l.slack_col[i]) = -1.0;
      if (row.cwiseAbs().maxCoeff() == 0.0) {
        // independent of every decision variable
        constant_violation = constant_violation || li.value > o.feas_tol;
        continue;
      }
      rows.push_back(row);
      rhs.push_back(-(li.value - li.row.dot(w.head(l.nu))));
      owner.push_back(i);
    }
    for (int i = 0; i < nc; ++i) {
      if (l.slack_col[i] < 0) continue;
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(l.nv());
      row(l.slack_col[i]) = -1.0;
      rows.push_back(row);
      rhs.push_back(0.0);
      owner.push_back(-2 - i);
    }
    if (constant_violation) {
      infeasible = true;
      break;
    }
    const auto n_base = rows.size();
    if (smooth) {
      for (int j = 0; j < l.nu; ++j) {
        for (double sgn : {1.0, -1.0}) {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(l.nv());
          row(j) = sgn;
          rows.push_back(row);
          rhs.push_back(radius * o.trust_control / scale + sgn * w(j));
          owner.push_back(-1);
        }
      }
      for (int k = 1; k <= p.horizon; ++k) {
        const Eigen::MatrixXd gk = scale * p.cost.output * c.gamma[k];
        for (Eigen::Index r = 0; r < gk.rows(); ++r) {
          for (double sgn : {1.0, -1.0}) {
            Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(l.nv());
            row.head(l.nu) = sgn * gk.row(r);
            rows.push_back(row);
            rhs.push_back(radius * o.trust_output + sgn * gk.row(r).dot(w.head(l.nu)));
            owner.push_back(-1);
          }
        }
      }
    }

    auto assemble = [&](std::size_t count) {
      qp.ineq.resize(static_cast<Eigen::Index>(count), l.nv());
      qp.ineq_rhs.resize(static_cast<Eigen::Index>(count));
      for (std::size_t r = 0; r < count; ++r) {
        qp.ineq.row(static_cast<Eigen::Index>(r)) = rows[r];
        qp.ineq_rhs(static_cast<Eigen::Index>(r)) = rhs[r];
      }
    };
    assemble(rows.size());
    auto res = qp::solve(qp);
    if (res.status == qp::QpStatus::infeasible && rows.size() != n_base) {
      assemble(n_base);
      res = qp::solve(qp);
    }
    sol.qp_iterations += res.iterations;
    if (res.status == qp::QpStatus::infeasible) {
      infeasible = true;
      break;
    }
    if (!res.x.allFinite() || !res.multipliers.allFinite()) break;  // keep the last finite iterate

    const double step = (res.x - w).head(l.nu).cwiseAbs().maxCoeff() * scale;
    if (smooth) radius = next_radius(p, c, l, o, w, res.x, radius);
    w = res.x;
    sol.multipliers.setZero();
    sol.slack_multipliers.setZero();
    for (Eigen::Index r = 0; r < qp.ineq.rows(); ++r) {
      const int own = owner[static_cast<std::size_t>(r)];
      if (own >= 0) sol.multipliers(own) = res.multipliers(r);
      else if (own <= -2) sol.slack_multipliers(-2 - own) = res.multipliers(r);
    }
    for (int i = 0; i < nc; ++i) sol.slacks(i) = l.slack_col[i] >= 0 ? w(l.slack_col[i]) : 0.0;

    if (!smooth) {
      converged = true;
      break;
    }
    const auto r = residuals(p, c, l, o, scale * w.head(l.nu), sol.slacks, sol.multipliers, sol.slack_multipliers);
    if (o.verbose) {
      std::cerr << fmt::format("  sqp {:2d}: step {:.3e} kkt {:.3e} infeas {:.3e}\n", outer, step, r.kkt,
                               r.infeasibility);
    }
    if (r.kkt <= o.kkt_tol && r.infeasibility <= o.feas_tol) {
      converged = true;
      break;
    }
    if (step <= 1e-14 * (1.0 + w.head(l.nu).cwiseAbs().maxCoeff() * scale)) break;
  }

  sol.controls = scale * w.head(l.nu);
  sol.states = predict_states(p, c, sol.controls);
  sol.cost = evaluate_cost(p, sol.states, sol.controls, sol.slacks);
  if (infeasible) {
    sol.status = MpcStatus::infeasible;
    sol.kkt_residual = kkt_residual(sol, p, o);
    return sol;
  }
  const auto r = residuals(p, c, l, o, sol.controls, sol.slacks, sol.multipliers, sol.slack_multipliers);
  sol.kkt_residual = r.kkt;
  (void)converged;
  if (r.kkt <= o.kkt_tol && r.infeasibility <= o.feas_tol) {
    sol.status = sol.max_slack() > o.slack_tol ? MpcStatus::softened_optimal : MpcStatus::optimal;
  } else {
    sol.status = MpcStatus::max_iter;
  }
  if (o.verbose) {
    std::cerr << fmt::format("mpc solve: status {} kkt {:.3e} cost {:.6g} outer {} qp-iters {}\n",
                             to_string(sol.status), sol.kkt_residual, sol.cost, sol.outer_iterations,
                             sol.qp_iterations);
  }
  return sol;
}

MpcProblem soften(const MpcProblem& problem, double slack_weight) {
  if (!(slack_weight > 0.0)) throw std::invalid_argument("soften: slack_weight must be > 0");
  MpcProblem out = problem;
  out.slack_weight = slack_weight;
  return out;
}

// --- builders ----------------------------------------------------------------

MpcProblem build_high_fidelity_problem(const spm::SpmParams& spm, const spm::DiffusionOperators& ops,
                                       const ThetaParams& theta_h, const std::optional<AttackLevel>& gamma,
                                       const HorizonSettings& s, double area, const spm::SpmState& x0) {
  if (s.horizon < 1) throw std::invalid_argument("build_high_fidelity_problem: horizon N must be >= 1");
  theta_h.validate();
  s.limits.validate();
  if (gamma) gamma->validate();
  const int n = ops.nodes;
  const int dim = 2 * n + 1;
  const int ip = 2 * n;  // previous-current slot
  const int surf_neg = n - 1;
  const int surf_pos = 2 * n - 1;

  MpcProblem p;
  p.horizon = s.horizon;
  p.state_dim = dim;
  p.control_dim = 1;
  p.target = s.soc_target;
  p.limits = s.limits;

  StageDynamics d;
  d.a = Eigen::MatrixXd::Identity(dim, dim);
  d.a.block(0, 0, n, n) += ops.neg.a;
  d.a.block(n, n, n, n) += ops.pos.a;
  d.a.block(0, ip, n, 1) = ops.neg.b;
  d.a.block(n, ip, n, 1) = ops.pos.b;
  d.b = Eigen::MatrixXd::Zero(dim, 1);
  d.b.block(0, 0, n, 1) = ops.neg.b;
  d.b.block(n, 0, n, 1) = ops.pos.b;
  d.b(ip, 0) = 1.0;
  d.offset = Eigen::VectorXd::Zero(dim);
  p.dynamics.push_back(std::move(d));

  Eigen::RowVectorXd bulk = Eigen::RowVectorXd::Zero(dim);
  bulk.head(2 * n) = spm::bulk_soc_row(spm);
  p.cost.output = bulk;
  p.cost.reference = Eigen::VectorXd::Constant(1, s.soc_target);
  p.cost.theta = theta_h;
  p.cost.control_scale = s.control_scale;

  p.initial_state.resize(dim);
  p.initial_state.head(2 * n) = x0.conc;
  p.initial_state(ip) = x0.i_prev;

  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  if (gamma) {
    // -(surf - (1 + gamma1) bulk - gamma2) <= 0
    Eigen::VectorXd a = (1.0 + gamma->gamma1) * bulk.transpose();
    a(surf_neg) -= 1.0 / spm.c_max_neg;
    for (int k = 1; k <= s.horizon; ++k) {
      p.constraints.push_back({"adversarial", ConstraintTag::adversarial, k, AffineForm{a, Eigen::VectorXd(), gamma->gamma2}});
    }
  }
  for (int k = 1; k <= s.horizon; ++k) {
    p.constraints.push_back(
        {"soc_max", ConstraintTag::stealth, k, AffineForm{bulk.transpose(), Eigen::VectorXd(), -s.limits.soc_max}});
  }
  Eigen::VectorXd e_ip = Eigen::VectorXd::Zero(dim);
  e_ip(ip) = 1.0;
  for (int k = 0; k < s.horizon; ++k) {
    p.constraints.push_back(
        {"current_max", ConstraintTag::stealth, k, AffineForm{e_ip, one, -s.limits.current_max / area}});
  }
  const auto voltage = spm.voltage;
  const double cmax_n = spm.c_max_neg;
  const double cmax_p = spm.c_max_pos;
  const double vmax = s.limits.voltage_max;
  SmoothForm vform{[=](const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
    const double tn = z(surf_neg) / cmax_n;
    const double tp = z(surf_pos) / cmax_p;
    const double current = z(ip) + u(0);
    SmoothEval e;
    e.value = voltage.ocv_pos.evaluate(tp).value - voltage.ocv_neg.evaluate(tn).value +
              voltage.r_lumped * current - vmax;
    e.d_state = Eigen::VectorXd::Zero(dim);
    e.d_state(surf_pos) = voltage.ocv_pos.slope(tp) / cmax_p;
    e.d_state(surf_neg) = -voltage.ocv_neg.slope(tn) / cmax_n;
    e.d_state(ip) = voltage.r_lumped;
    e.d_control = Eigen::VectorXd::Constant(1, voltage.r_lumped);
    e.state_hessian = Eigen::MatrixXd::Zero(dim, dim);
    e.state_hessian(surf_pos, surf_pos) = voltage.ocv_pos.curvature(tp) / (cmax_p * cmax_p);
    e.state_hessian(surf_neg, surf_neg) = -voltage.ocv_neg.curvature(tn) / (cmax_n * cmax_n);
    return e;
  }};
  for (int k = 0; k < s.horizon; ++k) {
    p.constraints.push_back({"voltage_max", ConstraintTag::stealth, k, vform});
  }
  return p;
}

MpcProblem build_low_fidelity_problem(const rint::RintParams& rint, const ThetaParams& theta,
                                      const HorizonSettings& s, double dt, double soc0, double i_init) {
  if (s.horizon < 1) throw std::invalid_argument("build_low_fidelity_problem: horizon N must be >= 1");
  rint.validate();
  theta.validate();
  s.limits.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("build_low_fidelity_problem: dt must be > 0");
  const double gain = rint.eta * dt / rint.q_c;

  MpcProblem p;
  p.horizon = s.horizon;
  p.state_dim = 2;
  p.control_dim = 1;
  p.target = s.soc_target;
  p.limits = s.limits;

  StageDynamics d;
  d.a = (Eigen::MatrixXd(2, 2) << 1.0, gain, 0.0, 1.0).finished();
  d.b = (Eigen::MatrixXd(2, 1) << gain, 1.0).finished();
  d.offset = Eigen::VectorXd::Zero(2);
  p.dynamics.push_back(std::move(d));

  p.cost.output = (Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished();
  p.cost.reference = Eigen::VectorXd::Constant(1, s.soc_target);
  p.cost.theta = theta;
  p.cost.control_scale = s.control_scale;
  p.initial_state = (Eigen::VectorXd(2) << soc0, i_init).finished();

  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  for (int k = 1; k <= s.horizon; ++k) {
    p.constraints.push_back({"soc_max", ConstraintTag::stealth, k,
                             AffineForm{(Eigen::VectorXd(2) << 1.0, 0.0).finished(), Eigen::VectorXd(), -s.limits.soc_max}});
  }
  for (int k = 0; k < s.horizon; ++k) {
    p.constraints.push_back({"current_max", ConstraintTag::stealth, k,
                             AffineForm{(Eigen::VectorXd(2) << 0.0, 1.0).finished(), one, -s.limits.current_max}});
  }
  const auto ocv = rint.ocv;
  const double r0 = rint.r_0;
  const double vmax = s.limits.voltage_max;
  SmoothForm vform{[=](const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
    SmoothEval e;
    e.value = ocv(z(0)) + r0 * (z(1) + u(0)) - vmax;
    e.d_state = (Eigen::VectorXd(2) << ocv.derivative(z(0)), r0).finished();
    e.d_control = Eigen::VectorXd::Constant(1, r0);
    e.state_hessian = Eigen::MatrixXd::Zero(2, 2);
    e.state_hessian(0, 0) = ocv.second_derivative(z(0));
    return e;
  }};
  for (int k = 0; k < s.horizon; ++k) {
    if (k == 0 && r0 == 0.0) continue;  // would not depend on any decision
    p.constraints.push_back({"voltage_max", ConstraintTag::stealth, k, vform});
  }
  return p;
}

ClosedLoop receding_horizon(const ProblemBuilder& build, const PlantStep& plant, int steps,
                            const SolverOptions& options) {
  if (steps < 1) throw std::invalid_argument("receding_horizon: T must be >= 1");
  ClosedLoop loop;
  loop.applied.reserve(static_cast<std::size_t>(steps));
  loop.solutions.reserve(static_cast<std::size_t>(steps));
  Eigen::VectorXd warm;
  for (int t = 0; t < steps; ++t) {
    const MpcProblem problem = build(t);
    auto sol = solve(problem, options, warm.size() ? &warm : nullptr);
    if (sol.status == MpcStatus::infeasible) {
      throw ClosedLoopFailure(fmt::format("MPC infeasible at closed-loop step {}", t), t, std::move(loop));
    }
    if (sol.status == MpcStatus::max_iter) ++loop.max_iter_steps;
    const Eigen::VectorXd u0 = sol.first_control();
    // shift the plan by one stage for the next warm start
    const auto m = u0.size();
    warm = Eigen::VectorXd::Zero(sol.controls.size());
    warm.head(sol.controls.size() - m) = sol.controls.tail(sol.controls.size() - m);
    plant(t, u0);
    loop.applied.push_back(u0);
    loop.solutions.push_back(std::move(sol));
  }
  return loop;
}

}  // namespace fidgap::mpc

namespace fidgap::mpc {

Sensitivity sensitivity(const MpcProblem& p, const MpcSolution& sol, const SensitivityOptions& so,
                        const SolverOptions& o) {
  Sensitivity out;
  const auto c = condense(p);
  const auto l = make_layout(p);
  const double scale = p.cost.control_scale;
  const int n = p.state_dim;
  const int m = p.control_dim;
  const auto nc = static_cast<int>(p.constraints.size());
  out.d_theta = Eigen::MatrixXd::Zero(l.nu, 2);
  out.d_x0 = Eigen::MatrixXd::Zero(l.nu, n);
  if (sol.status != MpcStatus::optimal && sol.status != MpcStatus::softened_optimal) {
    out.reason = fmt::format("solution status {}", to_string(sol.status));
    return out;
  }

  Eigen::MatrixXd hess;
  Eigen::VectorXd lin;
  cost_quadratic(p, c, l, o, hess, lin);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(l.nv());
  w.head(l.nu) = sol.controls / scale;
  for (int i = 0; i < nc; ++i) {
    if (l.slack_col[i] >= 0) w(l.slack_col[i]) = sol.slacks(i);
  }

  // Parameter derivatives of the cost gradient.
  Eigen::MatrixXd dgrad_theta = Eigen::MatrixXd::Zero(l.nv(), 2);
  Eigen::MatrixXd dgrad_x0 = Eigen::MatrixXd::Zero(l.nv(), n);
  for (int k = 1; k <= p.horizon; ++k) {
    const Eigen::MatrixXd gk = scale * p.cost.output * c.gamma[k];
    const Eigen::VectorXd ek = p.cost.output * sol.states[k] - p.cost.reference;
    dgrad_theta.col(0).head(l.nu) += 2.0 * gk.transpose() * ek;
    dgrad_x0.topRows(l.nu) += 2.0 * p.cost.theta.q * gk.transpose() * p.cost.output * c.phi[k];
  }
  dgrad_theta.col(1).head(l.nu) = 2.0 * w.head(l.nu);

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<Eigen::RowVectorXd> dg_x0;
  for (int i = 0; i < nc; ++i) {
    const auto& con = p.constraints[i];
    const int k = con.stage;
    const Eigen::VectorXd uk =
        k < p.horizon ? Eigen::VectorXd(sol.controls.segment(k * m, m)) : Eigen::VectorXd::Zero(m);
    const auto e = evaluate_constraint(con, sol.states[k], uk);
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(l.nv());
    row.head(l.nu) = scale * (e.d_state.transpose() * c.gamma[k]);
    if (k < p.horizon) row.segment(k * m, m) += scale * e.d_control.transpose();
    double g = e.value;
    if (l.slack_col[i] >= 0) {
      row(l.slack_col[i]) = -1.0;
      g -= sol.slacks(i);
    }
    const double lambda = sol.multipliers(i);
    const bool curved = e.state_hessian.size() > 0;
    if (curved && lambda != 0.0) {
      const Eigen::MatrixXd gh = e.state_hessian * c.gamma[k];
      hess.topLeftCorner(l.nu, l.nu) += lambda * scale * scale * c.gamma[k].transpose() * gh;
      dgrad_x0.topRows(l.nu) += lambda * scale * c.gamma[k].transpose() * e.state_hessian * c.phi[k];
    }
    if (row.cwiseAbs().maxCoeff() == 0.0) continue;
    const bool binding = std::abs(g) <= so.active_tol;
    const bool strict = lambda > so.multiplier_tol;
    if (strict && !binding) {
      out.reason = fmt::format("constraint '{}' at stage {} has a multiplier but is not binding", con.name, k);
      return out;
    }
    if (binding && !strict) {
      out.reason = fmt::format("constraint '{}' at stage {} is weakly active", con.name, k);
      return out;
    }
    if (!strict) continue;
    rows.push_back(row);
    dg_x0.push_back(e.d_state.transpose() * c.phi[k]);
  }
  for (int i = 0; i < nc; ++i) {
    if (l.slack_col[i] < 0) continue;
    const double s = sol.slacks(i);
    const double mu = sol.slack_multipliers(i);
    const bool binding = std::abs(s) <= so.active_tol;
    const bool strict = mu > so.multiplier_tol;
    if (binding != strict) {
      out.reason = fmt::format("slack of '{}' at stage {} is not strictly complementary",
                               p.constraints[i].name, p.constraints[i].stage);
      return out;
    }
    if (!strict) continue;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(l.nv());
    row(l.slack_col[i]) = -1.0;
    rows.push_back(row);
    dg_x0.push_back(Eigen::RowVectorXd::Zero(n));
  }

  const int na = static_cast<int>(rows.size());
  const int dim = l.nv() + na;
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
  kkt.topLeftCorner(l.nv(), l.nv()) = hess;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dim, 2 + n);
  rhs.topLeftCorner(l.nv(), 2) = -dgrad_theta;
  rhs.topRightCorner(l.nv(), n) = -dgrad_x0;
  for (int a = 0; a < na; ++a) {
    kkt.block(l.nv() + a, 0, 1, l.nv()) = rows[a];
    kkt.block(0, l.nv() + a, l.nv(), 1) = rows[a].transpose();
    rhs.block(l.nv() + a, 2, 1, n) = -dg_x0[a];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) {
    out.reason = "reduced KKT matrix is singular (dependent active constraints)";
    return out;
  }
  Eigen::MatrixXd d = lu.solve(rhs);
  d += lu.solve(rhs - kkt * d);
  out.d_theta = scale * d.topLeftCorner(l.nu, 2);
  out.d_x0 = scale * d.topRightCorner(l.nu, n);
  out.active = na;
  out.ok = true;
  return out;
}

}  // namespace fidgap::mpc
