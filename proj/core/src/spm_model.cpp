#include "fidgap/spm_model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace fidgap::spm {

Reading OcvCurve::evaluate(double stoichiometry) const {
  const double x = std::clamp(stoichiometry, domain_lo, domain_hi);
  return {poly(x), x != stoichiometry};
}

double OcvCurve::slope(double stoichiometry) const {
  return poly.derivative(std::clamp(stoichiometry, domain_lo, domain_hi));
}

double OcvCurve::curvature(double stoichiometry) const {
  return poly.second_derivative(std::clamp(stoichiometry, domain_lo, domain_hi));
}

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(fmt::format("SpmParams.{} must be finite and > 0 (got {})", name, v));
  }
}

}  // namespace

void SpmParams::validate_physics() const {
  require_positive(d_s_pos, "D_s_pos");
  require_positive(d_s_neg, "D_s_neg");
  require_positive(r_s, "R_s");
  require_positive(a_pos, "a_pos");
  require_positive(a_neg, "a_neg");
  require_positive(l_pos, "L_pos");
  require_positive(l_neg, "L_neg");
  require_positive(faraday, "F");
  require_positive(c_max_pos, "c_max_pos");
  require_positive(c_max_neg, "c_max_neg");
  require_positive(dt, "dt");
  if (n_nodes < 3) throw std::invalid_argument("SpmParams.n_nodes must be >= 3");
  if (substeps < 1) throw std::invalid_argument("SpmParams.substeps must be >= 1");
  if (voltage.r_lumped < 0.0) throw std::invalid_argument("SpmParams.voltage.r_lumped must be >= 0");
  if (!(window.neg_max > window.neg_min)) throw std::invalid_argument("SpmParams.window: neg_max must exceed neg_min");
  if (!(window.pos_max > window.pos_min)) throw std::invalid_argument("SpmParams.window: pos_max must exceed pos_min");
}

void SpmParams::validate() const {
  validate_physics();
  if (n_nodes != kNodes) {
    throw std::invalid_argument(fmt::format("SpmParams.n_nodes must be {} (got {})", kNodes, n_nodes));
  }
}

double SpmParams::coulomb_rate() const { return 3.0 / (faraday * a_neg * l_neg * r_s * c_max_neg); }

SpmParams default_params() {
  SpmParams p;
  p.d_s_neg = 3.9e-14;
  p.d_s_pos = 1.0e-13;
  p.r_s = 10e-6;
  p.a_neg = 3.0 * 0.6 / p.r_s;
  p.a_pos = 3.0 * 0.5 / p.r_s;
  p.l_neg = 100e-6;
  p.l_pos = 100e-6;
  p.c_max_neg = 24983.0;
  p.c_max_pos = 51218.0;
  p.dt = 1.0;
  p.substeps = 1;

  // cathode window width chosen so that lithium is conserved between electrodes
  const double ratio = (p.a_neg * p.l_neg * p.c_max_neg) / (p.a_pos * p.l_pos * p.c_max_pos);
  p.window = {0.0, 1.0, 0.99 - ratio, 0.99};

  p.voltage.ocv_neg = {Polynomial({0.6, -1.4, 1.6, -0.7}), 0.0, 1.0};
  p.voltage.ocv_pos = {Polynomial({4.9, -1.6, 0.4}), 0.3, 1.0};
  p.voltage.r_lumped = 2e-3;
  return p;
}

double max_stable_dt(const SpmParams& params) {
  const double h = params.node_spacing();
  // the centre row carries the largest diagonal coefficient, 6 D dt / h^2
  const double d = std::max(params.d_s_neg, params.d_s_pos);
  return h * h / (6.0 * d);
}

namespace {

ElectrodeOperator build_electrode(int n, double h, double d, double dt, double boundary_gain) {
  ElectrodeOperator op;
  op.a = Eigen::MatrixXd::Zero(n, n);
  op.b = Eigen::VectorXd::Zero(n);
  const double k = d * dt / (h * h);

  // r = 0: symmetry limit 3 D d2c/dr2 with the mirror node c_{-1} = c_1
  op.a(0, 0) = -6.0 * k;
  op.a(0, 1) = 6.0 * k;

  // The trapezoid weight of the centre node is zero, so node 1 takes no flux
  // from it; otherwise the weighted inventory would leak through r_{1/2}.
  for (int i = 1; i <= n - 2; ++i) {
    const double ri = i;
    const double left = (i == 1) ? 0.0 : k * ((ri - 0.5) / ri) * ((ri - 0.5) / ri);
    const double right = k * ((ri + 0.5) / ri) * ((ri + 0.5) / ri);
    if (i > 1) op.a(i, i - 1) = left;
    op.a(i, i + 1) = right;
    op.a(i, i) = -(left + right);
  }

  // surface: half control volume R^2 h / 2 closed by the Neumann flux condition
  const double rs = n - 1;
  const double inner = 2.0 * k * ((rs - 0.5) / rs) * ((rs - 0.5) / rs);
  op.a(n - 1, n - 2) = inner;
  op.a(n - 1, n - 1) = -inner;
  op.b(n - 1) = boundary_gain * 2.0 * dt / h;
  return op;
}

ElectrodeOperator compose_electrode(const ElectrodeOperator& op, int substeps) {
  const auto n = op.a.rows();
  const Eigen::MatrixXd one_step = Eigen::MatrixXd::Identity(n, n) + op.a;
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < substeps; ++j) {
    b += power * op.b;
    power = one_step * power;
  }
  return {power - Eigen::MatrixXd::Identity(n, n), b};
}

}  // namespace

DiffusionOperators build_diffusion_operators(const SpmParams& params) {
  params.validate_physics();
  const double limit = max_stable_dt(params);
  if (params.dt > limit) {
    throw StabilityError(
        fmt::format("diffusion step dt = {} s exceeds the explicit Euler bound; maximum admissible dt = {:.6g} s",
                    params.dt, limit),
        limit);
  }
  const int n = params.n_nodes;
  const double h = params.node_spacing();
  DiffusionOperators ops;
  ops.nodes = n;
  ops.period = params.dt;
  ops.c_max_neg = params.c_max_neg;
  ops.c_max_pos = params.c_max_pos;
  // Neumann flux dc/dr(R) = -/+ I / (D F a L): anode gains lithium on charge
  ops.neg = build_electrode(n, h, params.d_s_neg, params.dt,
                            1.0 / (params.faraday * params.a_neg * params.l_neg));
  ops.pos = build_electrode(n, h, params.d_s_pos, params.dt,
                            -1.0 / (params.faraday * params.a_pos * params.l_pos));
  return ops;
}

DiffusionOperators compose(const DiffusionOperators& ops, int substeps) {
  if (substeps < 1) throw std::invalid_argument("compose: substeps must be >= 1");
  if (substeps == 1) return ops;
  DiffusionOperators out = ops;
  out.neg = compose_electrode(ops.neg, substeps);
  out.pos = compose_electrode(ops.pos, substeps);
  out.period = ops.period * substeps;
  return out;
}

DiffusionOperators control_operators(const SpmParams& params) {
  return compose(build_diffusion_operators(params), params.substeps);
}

namespace {

Eigen::VectorXd advance(const ElectrodeOperator& op, const Eigen::VectorXd& c, double current) {
  // a annihilates constants; applying it to c - c[0] keeps uniform profiles exactly fixed
  const Eigen::VectorXd centred = c.array() - c(0);
  return c + op.a * centred + op.b * current;
}

}  // namespace

SpmState step(const SpmState& state, double delta_i, const DiffusionOperators& ops) {
  const int n = ops.nodes;
  if (state.conc.size() != 2 * n) throw std::invalid_argument("spm::step: state size does not match operators");
  const double current = state.i_prev + delta_i;
  SpmState next;
  next.conc.resize(2 * n);
  next.conc.head(n) = advance(ops.neg, state.conc.head(n), current);
  next.conc.tail(n) = advance(ops.pos, state.conc.tail(n), current);
  next.i_prev = current;
  return next;
}

bool concentrations_in_range(const SpmState& state, const DiffusionOperators& ops, double rel_tol) {
  const int n = ops.nodes;
  for (int i = 0; i < 2 * n; ++i) {
    const double cmax = i < n ? ops.c_max_neg : ops.c_max_pos;
    const double c = state.conc(i);
    if (c < -rel_tol * cmax || c > cmax * (1.0 + rel_tol)) return false;
  }
  return true;
}

Eigen::RowVectorXd bulk_soc_row(const SpmParams& params) {
  const int n = params.n_nodes;
  const double h = params.node_spacing();
  const double r3 = params.r_s * params.r_s * params.r_s;
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(2 * n);
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    const double r = params.node_radius(i);
    row(i) = 3.0 * w * r * r * h / (r3 * params.c_max_neg);
  }
  return row;
}

double quadrature_sum(const SpmParams& params) {
  return bulk_soc_row(params).head(params.n_nodes).sum() * params.c_max_neg;
}

double bulk_soc(const SpmState& state, const SpmParams& params) {
  return bulk_soc_row(params).dot(state.conc);
}

double surf_soc(const SpmState& state, const SpmParams& params) {
  return state.conc(params.n_nodes - 1) / params.c_max_neg;
}

Reading terminal_voltage(const SpmState& state, double i_applied, const SpmParams& params) {
  const int n = params.n_nodes;
  const auto up = params.voltage.ocv_pos.evaluate(state.conc(2 * n - 1) / params.c_max_pos);
  const auto un = params.voltage.ocv_neg.evaluate(state.conc(n - 1) / params.c_max_neg);
  return {up.value - un.value + params.voltage.r_lumped * i_applied, up.clamped || un.clamped};
}

double cathode_stoichiometry(double anode_stoichiometry, const StoichiometryWindow& w) {
  const double s = (anode_stoichiometry - w.neg_min) / (w.neg_max - w.neg_min);
  return w.pos_max - s * (w.pos_max - w.pos_min);
}

SpmState initial_state(const SpmParams& params, double initial_soc, double i_init) {
  params.validate_physics();
  const int n = params.n_nodes;
  const double theta_neg = initial_soc / quadrature_sum(params);
  SpmState s;
  s.conc.resize(2 * n);
  s.conc.head(n).setConstant(theta_neg * params.c_max_neg);
  s.conc.tail(n).setConstant(cathode_stoichiometry(theta_neg, params.window) * params.c_max_pos);
  s.i_prev = i_init;
  return s;
}

void Trajectory::append(double time, const SpmState& state, double current, const SpmParams& params) {
  const auto v = terminal_voltage(state, current, params);
  const auto idx = static_cast<int>(times.size());
  times.push_back(time);
  currents.push_back(current);
  voltages.push_back(v.value);
  soc_bulk.push_back(bulk_soc(state, params));
  soc_surf.push_back(surf_soc(state, params));
  bool bad = v.clamped;
  const int n = params.n_nodes;
  for (int i = 0; i < 2 * n && !bad; ++i) {
    const double cmax = i < n ? params.c_max_neg : params.c_max_pos;
    bad = state.conc(i) < -1e-9 * cmax || state.conc(i) > cmax * (1.0 + 1e-9);
  }
  if (bad) flagged.push_back(idx);
  states.push_back(state);
}

Trajectory simulate(const SpmParams& params, double initial_soc, const std::vector<double>& current_profile,
                    double i_init) {
  const auto ops = control_operators(params);
  Trajectory traj;
  SpmState state = initial_state(params, initial_soc, i_init);
  double t = 0.0;
  for (double current : current_profile) {
    if (!std::isfinite(current)) throw std::invalid_argument("spm::simulate: non-finite current in profile");
    traj.append(t, state, current, params);
    state = step(state, current - state.i_prev, ops);
    t += ops.period;
  }
  traj.append(t, state, state.i_prev, params);
  return traj;
}

}  // namespace fidgap::spm
