#include "fidgap/inverse_pdp.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace fidgap::inverse {

const char* to_string(Anchoring a) { return a == Anchoring::replay ? "replay-anchored" : "free-rolling"; }

Anchoring anchoring_from_string(const std::string& s) {
  if (s == "replay-anchored" || s == "replay") return Anchoring::replay;
  if (s == "free-rolling" || s == "free") return Anchoring::free_rolling;
  throw std::invalid_argument(fmt::format("anchoring must be 'replay-anchored' or 'free-rolling', got '{}'", s));
}

const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iter: return "max-iter";
    case FitStatus::stalled: return "stalled";
  }
  return "unknown";
}

void Scenario::validate() const {
  if (!build) throw std::invalid_argument("Scenario: no problem builder");
  if (steps < 1) throw std::invalid_argument("Scenario: steps must be >= 1");
  const auto need = anchoring == Anchoring::replay ? static_cast<std::size_t>(steps) : std::size_t{1};
  if (anchors.size() < need) {
    throw std::invalid_argument(fmt::format("Scenario: {} anchoring needs {} anchor states, got {}",
                                            to_string(anchoring), need, anchors.size()));
  }
}

void FitSchedule::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("FitSchedule: alpha must be finite and >= 0");
  if (max_iters < 0) throw std::invalid_argument("FitSchedule: max_iters must be >= 0");
  if (!(tol >= 0.0)) throw std::invalid_argument("FitSchedule: tol must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("FitSchedule: epsilon must be > 0");
  if (max_halvings < 0) throw std::invalid_argument("FitSchedule: max_halvings must be >= 0");
}

Scenario rint_scenario(const rint::RintParams& rint, const mpc::HorizonSettings& settings, double dt,
                       std::vector<Eigen::VectorXd> anchors, int steps, Anchoring anchoring) {
  Scenario s;
  s.build = [rint, settings, dt](const ThetaParams& theta, const Eigen::VectorXd& x0) {
    return mpc::build_low_fidelity_problem(rint, theta, settings, dt, x0(0), x0(1));
  };
  s.anchors = std::move(anchors);
  s.steps = steps;
  s.anchoring = anchoring;
  return s;
}

namespace {

void check_inputs(const Eigen::VectorXd& u_adv, const Scenario& s) {
  s.validate();
  if (u_adv.size() < s.steps) {
    throw std::invalid_argument(fmt::format("reference control sequence has {} entries, need {}", u_adv.size(), s.steps));
  }
}

Eigen::VectorXd advance(const mpc::MpcProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  const auto& d = p.dynamics_at(0);
  return d.a * x + d.b * u + d.offset;
}

mpc::MpcSolution solve_step(const Scenario& s, const ThetaParams& theta, const Eigen::VectorXd& x0, int t,
                            mpc::MpcProblem* problem_out = nullptr) {
  auto problem = s.build(theta, x0);
  auto sol = mpc::solve(problem, s.solver);
  if (sol.status == mpc::MpcStatus::infeasible) {
    throw LossEvaluationError(fmt::format("lower-level MPC infeasible at step {}", t), t);
  }
  if (problem_out) *problem_out = std::move(problem);
  return sol;
}

ThetaParams perturbed(const ThetaParams& theta, int which, double delta) {
  ThetaParams out = theta;
  (which == 0 ? out.q : out.r) += delta;
  return out;
}

double relative_step(double value, double h) { return value != 0.0 ? h * std::abs(value) : h; }

}  // namespace

Rollout rollout(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& s) {
  check_inputs(u_adv, s);
  theta.validate();
  Rollout out;
  Eigen::VectorXd x = s.anchors.front();
  Eigen::Index m = 0;
  for (int t = 0; t < s.steps; ++t) {
    const Eigen::VectorXd x0 = s.anchoring == Anchoring::replay ? s.anchors[t] : x;
    mpc::MpcProblem problem;
    const auto sol = solve_step(s, theta, x0, t, &problem);
    const Eigen::VectorXd u = sol.first_control();
    if (t == 0) {
      m = u.size();
      out.controls.resize(s.steps * m);
    }
    out.controls.segment(t * m, m) = u;
    out.states.push_back(x0);
    out.loss += (u - u_adv.segment(t * m, m)).squaredNorm();
    if (s.anchoring == Anchoring::free_rolling) x = advance(problem, x0, u);
  }
  return out;
}

double bilevel_loss(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& s) {
  return rollout(theta, u_adv, s).loss;
}

Gradient pdp_gradient(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& s) {
  check_inputs(u_adv, s);
  theta.validate();
  Gradient g;
  const bool free = s.anchoring == Anchoring::free_rolling;
  Eigen::VectorXd x = s.anchors.front();
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(x.size(), 2);
  for (int t = 0; t < s.steps; ++t) {
    const Eigen::VectorXd x0 = free ? x : s.anchors[t];
    mpc::MpcProblem problem;
    const auto sol = solve_step(s, theta, x0, t, &problem);
    const Eigen::VectorXd u = sol.first_control();
    const auto m = u.size();
    const Eigen::VectorXd err = u - u_adv.segment(t * m, m);
    g.loss += err.squaredNorm();

    Eigen::MatrixXd du_dtheta;
    Eigen::MatrixXd du_dx0;
    const auto sens = mpc::sensitivity(problem, sol, s.sensitivity, s.solver);
    if (sens.ok) {
      du_dtheta = sens.d_theta.topRows(m);
      du_dx0 = sens.d_x0.topRows(m);
    } else {
      g.fallback_steps.push_back(t);
      g.fallback_reasons.push_back(sens.reason);
      constexpr double h = 1e-6;
      du_dtheta.resize(m, 2);
      for (int i = 0; i < 2; ++i) {
        const double hi = relative_step(i == 0 ? theta.q : theta.r, h);
        const auto up = solve_step(s, perturbed(theta, i, hi), x0, t).first_control();
        const auto dn = solve_step(s, perturbed(theta, i, -hi), x0, t).first_control();
        du_dtheta.col(i) = (up - dn) / (2.0 * hi);
      }
      du_dx0 = Eigen::MatrixXd::Zero(m, x0.size());
      if (free) {
        for (Eigen::Index j = 0; j < x0.size(); ++j) {
          const double hj = h * std::max(1.0, std::abs(x0(j)));
          Eigen::VectorXd xp = x0, xm = x0;
          xp(j) += hj;
          xm(j) -= hj;
          const auto up = solve_step(s, theta, xp, t).first_control();
          const auto dn = solve_step(s, theta, xm, t).first_control();
          du_dx0.col(j) = (up - dn) / (2.0 * hj);
        }
      }
    }
    const Eigen::MatrixXd du = free ? Eigen::MatrixXd(du_dtheta + du_dx0 * dx) : du_dtheta;
    g.value += 2.0 * du.transpose() * err;
    if (free) {
      const auto& d = problem.dynamics_at(0);
      dx = d.a * dx + d.b * du;
      x = advance(problem, x0, u);
    }
  }
  return g;
}

Eigen::Vector2d fd_gradient(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& s, double h) {
  if (!(h >= 1e-8 && h <= 1e-3)) throw std::invalid_argument("fd_gradient: relative step must lie in [1e-8, 1e-3]");
  theta.validate();
  Eigen::Vector2d out;
  for (int i = 0; i < 2; ++i) {
    const double hi = relative_step(i == 0 ? theta.q : theta.r, h);
    const double up = bilevel_loss(perturbed(theta, i, hi), u_adv, s);
    const double dn = bilevel_loss(perturbed(theta, i, -hi), u_adv, s);
    out(i) = (up - dn) / (2.0 * hi);
  }
  return out;
}

namespace {

ThetaParams project(const ThetaParams& theta, double eps) {
  ThetaParams p{std::max(theta.q, eps), std::max(theta.r, eps)};
  const double sum = p.q + p.r;
  p.q /= sum;
  p.r /= sum;
  return {std::max(p.q, eps), std::max(p.r, eps)};
}

}  // namespace

std::pair<ThetaParams, FitReport> fit_theta(const Eigen::VectorXd& u_adv, const ThetaParams& theta0,
                                            const FitSchedule& schedule, const Scenario& s) {
  schedule.validate();
  theta0.validate();
  FitReport report;
  ThetaParams theta = project(theta0, schedule.epsilon);
  auto grad = pdp_gradient(theta, u_adv, s);
  report.fallback_steps += static_cast<int>(grad.fallback_steps.size());
  double loss = grad.loss;
  report.theta_history.push_back(theta);
  report.loss_history.push_back(loss);
  report.grad_norm_history.push_back(grad.value.norm());
  report.step_history.push_back(0.0);

  report.status = FitStatus::max_iter;
  double trial = schedule.alpha;
  for (int it = 0;; ++it) {
    if (loss < schedule.tol || grad.value.norm() < schedule.tol) {
      report.status = FitStatus::converged;
      break;
    }
    if (it >= schedule.max_iters) break;
    if (!grad.value.allFinite()) {
      report.status = FitStatus::stalled;
      break;
    }
    double step = trial;
    bool accepted = false;
    ThetaParams next;
    double next_loss = loss;
    for (int j = 0; j <= schedule.max_halvings && step > 0.0; ++j, step *= 0.5) {
      next = project({theta.q - step * grad.value(0), theta.r - step * grad.value(1)}, schedule.epsilon);
      if (next == theta) break;  // step below representable resolution
      next_loss = bilevel_loss(next, u_adv, s);
      if (next_loss < loss) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      report.status = FitStatus::stalled;
      break;
    }
    theta = next;
    trial = std::min(schedule.alpha, 2.0 * step);  // next search starts just above the step that worked
    grad = pdp_gradient(theta, u_adv, s);
    report.fallback_steps += static_cast<int>(grad.fallback_steps.size());
    loss = grad.loss;
    report.iterations = it + 1;
    report.theta_history.push_back(theta);
    report.loss_history.push_back(loss);
    report.grad_norm_history.push_back(grad.value.norm());
    report.step_history.push_back(step);
  }
  const auto final = rollout(theta, u_adv, s);
  report.control_errors = final.controls - u_adv.head(final.controls.size());
  return {theta, report};
}

}  // namespace fidgap::inverse
