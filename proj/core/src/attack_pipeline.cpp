#include "fidgap/attack_pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace fidgap::attack {

spm::SpmParams case_study_spm() {
  auto p = spm::default_params();
  p.substeps = 20;
  return p;
}

void ExcitationProtocol::validate() const {
  if (!(sweep_c_rate > 0.0)) throw std::invalid_argument("excitation.sweep_c_rate must be > 0");
  if (!(soc_lo >= 0.0 && soc_lo < soc_hi && soc_hi <= 1.0)) {
    throw std::invalid_argument("excitation: need 0 <= soc_lo < soc_hi <= 1");
  }
  if (pulses < 0) throw std::invalid_argument("excitation.pulses must be >= 0");
  if (!(pulse_c_rate >= 0.0) || !(pulse_seconds >= 0.0) || !(rest_seconds >= 0.0)) {
    throw std::invalid_argument("excitation: pulse rate and durations must be >= 0");
  }
  if (!(discharge_c_rate > 0.0)) throw std::invalid_argument("excitation.discharge_c_rate must be > 0");
  if (!(voltage_noise >= 0.0)) throw std::invalid_argument("excitation.voltage_noise must be >= 0");
}

void PipelineConfig::validate() const {
  spm.validate();
  if (rint_override) rint_override->validate();
  if (!(area > 0.0)) throw std::invalid_argument("area must be > 0");
  if (horizon < 1) throw std::invalid_argument("mpc.horizon must be >= 1");
  if (steps < horizon) throw std::invalid_argument("mpc.steps must be >= mpc.horizon");
  limits.validate();
  if (!(soc_target > 0.0 && soc_target <= limits.soc_max)) {
    throw std::invalid_argument("mpc.soc_target must lie in (0, soc_max]");
  }
  if (!(soc_init >= 0.0 && soc_init <= 1.0)) throw std::invalid_argument("mpc.soc_init must lie in [0, 1]");
  if (!std::isfinite(i_init)) throw std::invalid_argument("mpc.i_init must be finite");
  if (!(slack_weight > 0.0)) throw std::invalid_argument("mpc.slack_weight must be > 0");
  if (!(control_scale >= 0.0)) throw std::invalid_argument("mpc.control_scale must be >= 0");
  theta_h.validate();
  theta0.validate();
  fit.validate();
  excitation.validate();
  if (!(audit_tol >= 0.0)) throw std::invalid_argument("audit_tol must be >= 0");
}

double PipelineConfig::one_c_current() const { return spm.areal_capacity() / 3600.0 * area; }

double PipelineConfig::resolved_control_scale() const {
  return control_scale > 0.0 ? control_scale : one_c_current();
}

namespace {

void put(std::string& s, const char* key, double v) { s += fmt::format("{}={:.17g};", key, v); }
void put(std::string& s, const char* key, const Polynomial& p) {
  s += fmt::format("{}=[", key);
  for (double c : p.coefficients()) s += fmt::format("{:.17g},", c);
  s += "];";
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string fingerprint(const PipelineConfig& c) {
  std::string s;
  const auto& p = c.spm;
  for (auto [k, v] : {std::pair{"dp", p.d_s_pos}, {"dn", p.d_s_neg}, {"rs", p.r_s}, {"ap", p.a_pos},
                      {"an", p.a_neg}, {"lp", p.l_pos}, {"ln", p.l_neg}, {"f", p.faraday},
                      {"cp", p.c_max_pos}, {"cn", p.c_max_neg}, {"dt", p.dt},
                      {"wn0", p.window.neg_min}, {"wn1", p.window.neg_max}, {"wp0", p.window.pos_min},
                      {"wp1", p.window.pos_max}, {"rl", p.voltage.r_lumped},
                      {"up0", p.voltage.ocv_pos.domain_lo}, {"up1", p.voltage.ocv_pos.domain_hi},
                      {"un0", p.voltage.ocv_neg.domain_lo}, {"un1", p.voltage.ocv_neg.domain_hi}}) {
    put(s, k, v);
  }
  put(s, "n", p.n_nodes);
  put(s, "sub", p.substeps);
  put(s, "upos", p.voltage.ocv_pos.poly);
  put(s, "uneg", p.voltage.ocv_neg.poly);
  if (c.rint_override) {
    put(s, "eta", c.rint_override->eta);
    put(s, "qc", c.rint_override->q_c);
    put(s, "r0", c.rint_override->r_0);
    put(s, "ocv", c.rint_override->ocv);
  }
  for (auto [k, v] : {std::pair{"area", c.area}, {"N", double(c.horizon)}, {"T", double(c.steps)},
                      {"smax", c.limits.soc_max}, {"imax", c.limits.current_max}, {"vmax", c.limits.voltage_max},
                      {"sd", c.soc_target}, {"s0", c.soc_init}, {"i0", c.i_init}, {"rho", c.slack_weight},
                      {"scale", c.control_scale}, {"qh", c.theta_h.q}, {"rh", c.theta_h.r}, {"q0", c.theta0.q},
                      {"r0th", c.theta0.r}, {"alpha", c.fit.alpha}, {"iters", double(c.fit.max_iters)},
                      {"tol", c.fit.tol}, {"eps", c.fit.epsilon}, {"halv", double(c.fit.max_halvings)},
                      {"anch", double(c.anchoring == inverse::Anchoring::replay)},
                      {"xs", c.excitation.sweep_c_rate}, {"xlo", c.excitation.soc_lo}, {"xhi", c.excitation.soc_hi},
                      {"xp", double(c.excitation.pulses)}, {"xpc", c.excitation.pulse_c_rate},
                      {"xps", c.excitation.pulse_seconds}, {"xr", c.excitation.rest_seconds},
                      {"xd", c.excitation.discharge_c_rate}, {"xn", c.excitation.voltage_noise},
                      {"ieta", c.identification.eta}, {"ideg", double(c.identification.ocv_degree)},
                      {"iqs", c.identification.quasi_static_threshold}, {"ipt", c.identification.pulse_threshold},
                      {"ispan", c.identification.min_capacity_span}, {"seed", double(c.seed)},
                      {"audit", c.audit_tol}}) {
    put(s, k, v);
  }
  return fmt::format("{:016x}", fnv1a(s));
}

spm::Trajectory excitation_trajectory(const spm::SpmParams& params, const ExcitationProtocol& x, double area,
                                      std::uint64_t seed) {
  x.validate();
  if (!(area > 0.0)) throw std::invalid_argument("excitation: area must be > 0");
  spm::SpmParams fine = params;
  fine.substeps = 1;
  const double one_c = fine.areal_capacity() / 3600.0;
  const double dt = fine.dt;
  std::vector<double> profile;

  const double sweep = x.sweep_c_rate * one_c;
  const auto sweep_steps = static_cast<std::size_t>(std::ceil((x.soc_hi - x.soc_lo) * 3600.0 / (x.sweep_c_rate * dt)));
  profile.insert(profile.end(), sweep_steps, sweep);

  const auto pulse_steps = static_cast<std::size_t>(std::llround(x.pulse_seconds / dt));
  const auto rest_steps = static_cast<std::size_t>(std::llround(x.rest_seconds / dt));
  const double pulse = x.pulse_c_rate * one_c;
  profile.insert(profile.end(), rest_steps, 0.0);
  for (int k = 0; k < x.pulses; ++k) {
    profile.insert(profile.end(), pulse_steps, -pulse);
    profile.insert(profile.end(), rest_steps, 0.0);
    profile.insert(profile.end(), pulse_steps, pulse);
    profile.insert(profile.end(), rest_steps, 0.0);
  }
  const auto discharge_steps =
      static_cast<std::size_t>(std::floor((x.soc_hi - x.soc_lo) * 3600.0 / (x.discharge_c_rate * dt)));
  profile.insert(profile.end(), discharge_steps, -x.discharge_c_rate * one_c);

  auto traj = spm::simulate(fine, x.soc_lo, profile);
  if (x.voltage_noise > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, x.voltage_noise);
    for (auto& v : traj.voltages) v += noise(rng);
  }
  return traj;
}

namespace {

mpc::HorizonSettings horizon_settings(const PipelineConfig& c, double scale) {
  mpc::HorizonSettings s;
  s.horizon = c.horizon;
  s.soc_target = c.soc_target;
  s.limits = c.limits;
  s.control_scale = scale;
  return s;
}

template <class Build>
ClosedLoopRun closed_loop(const PipelineConfig& c, double to_amperes, Build&& build) {
  const auto ops = spm::control_operators(c.spm);
  const double period = c.spm.control_period();
  ClosedLoopRun run;
  run.increments.resize(c.steps);
  auto x = spm::initial_state(c.spm, c.soc_init, c.i_init / c.area);
  const auto plant = [&](int t, const Eigen::VectorXd& u) {
    const double du = u(0) / to_amperes;  // plant units, A/m^2
    run.traj.append(t * period, x, x.i_prev + du, c.spm);
    run.increments(t) = du * c.area;
    x = spm::step(x, du, ops);
  };
  const auto loop = mpc::receding_horizon([&](int) { return build(x); }, plant, c.steps);
  run.traj.append(c.steps * period, x, x.i_prev, c.spm);
  run.max_iter_steps = loop.max_iter_steps;
  for (const auto& sol : loop.solutions) run.softened_steps += sol.status == mpc::MpcStatus::softened_optimal;
  return run;
}

}  // namespace

ClosedLoopRun run_high_fidelity(const PipelineConfig& c, const std::optional<AttackLevel>& gamma) {
  const auto ops = spm::control_operators(c.spm);
  const auto settings = horizon_settings(c, c.resolved_control_scale() / c.area);
  return closed_loop(c, 1.0, [&](const spm::SpmState& x) {
    auto problem = mpc::build_high_fidelity_problem(c.spm, ops, c.theta_h, gamma, settings, c.area, x);
    return gamma ? mpc::soften(problem, c.slack_weight) : problem;
  });
}

ClosedLoopRun run_low_fidelity(const PipelineConfig& c, const rint::RintParams& rint, const ThetaParams& theta) {
  const auto settings = horizon_settings(c, c.resolved_control_scale());
  const double period = c.spm.control_period();
  return closed_loop(c, c.area, [&](const spm::SpmState& x) {
    return mpc::build_low_fidelity_problem(rint, theta, settings, period, spm::bulk_soc(x, c.spm), x.i_prev * c.area);
  });
}

inverse::Scenario fitting_scenario(const PipelineConfig& c, const rint::RintParams& rint,
                                   const spm::Trajectory& reference) {
  if (reference.states.size() < static_cast<std::size_t>(c.steps)) {
    throw std::invalid_argument("fitting_scenario: reference trajectory is shorter than the run length");
  }
  std::vector<Eigen::VectorXd> anchors;
  anchors.reserve(static_cast<std::size_t>(c.steps));
  for (int t = 0; t < c.steps; ++t) {
    anchors.push_back((Eigen::VectorXd(2) << reference.soc_bulk[t], reference.states[t].i_prev * c.area).finished());
  }
  return inverse::rint_scenario(rint, horizon_settings(c, c.resolved_control_scale()), c.spm.control_period(),
                                std::move(anchors), c.steps, c.anchoring);
}

double Satisfaction::mean_positive_margin() const {
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < satisfied.size(); ++k) {
    const double m = margin(k);
    if (m > 0.0) {
      sum += m;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

Satisfaction evaluate_satisfaction(const spm::Trajectory& traj, const AttackLevel& gamma) {
  gamma.validate();
  if (traj.soc_surf.size() != traj.size() || traj.soc_bulk.size() != traj.size()) {
    throw std::invalid_argument("evaluate_satisfaction: trajectory lacks surface/bulk SoC series");
  }
  Satisfaction s;
  s.surf = traj.soc_surf;
  s.bulk = traj.soc_bulk;
  s.threshold.reserve(traj.size());
  s.satisfied.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    s.threshold.push_back(gamma.threshold(s.bulk[k]));
    const bool ok = s.surf[k] - s.bulk[k] >= s.threshold[k];
    s.satisfied.push_back(ok);
    s.count += ok;
  }
  return s;
}

std::vector<StealthViolation> stealth_audit(const spm::Trajectory& traj, const rint::RintParams& rint,
                                            const Limits& limits, double area, double tol) {
  std::vector<StealthViolation> out;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double soc = traj.soc_bulk[k];
    const double current = traj.currents[k] * area;
    const double voltage = rint::terminal_voltage({soc, current}, current, rint).value;
    const int step = static_cast<int>(k);
    if (soc - limits.soc_max > tol) out.push_back({step, "soc_max", soc - limits.soc_max});
    if (current - limits.current_max > tol) out.push_back({step, "current_max", current - limits.current_max});
    if (voltage - limits.voltage_max > tol) out.push_back({step, "voltage_max", voltage - limits.voltage_max});
  }
  return out;
}

namespace {

template <class F>
auto staged(const char* stage, const std::shared_ptr<AttackReport>& partial, F&& f) {
  try {
    auto result = f();
    if (partial) partial->completed_stages.emplace_back(stage);
    return result;
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(stage, e.what(), partial);
  }
}

}  // namespace

std::shared_ptr<const Baseline> prepare_baseline(const PipelineConfig& c) {
  staged("config", nullptr, [&] {
    c.validate();
    return 0;
  });
  auto b = std::make_shared<Baseline>();
  b->excitation = staged("excitation", nullptr,
                         [&] { return excitation_trajectory(c.spm, c.excitation, c.area, c.seed); });
  b->identification = staged("identification", nullptr, [&] {
    auto opts = c.identification;
    opts.area = c.area;
    return rint::identify(b->excitation, opts);
  });
  b->rint = c.rint_override ? *c.rint_override : b->identification.params;
  b->benign = staged("benign-reference", nullptr, [&] { return run_high_fidelity(c, std::nullopt); });
  std::tie(b->theta_nominal, b->nominal_fit) = staged("nominal-fit", nullptr, [&] {
    return inverse::fit_theta(b->benign.increments, c.theta0, c.fit, fitting_scenario(c, b->rint, b->benign.traj));
  });
  b->nominal = staged("nominal-deployment", nullptr, [&] { return run_low_fidelity(c, b->rint, b->theta_nominal); });
  return b;
}

AttackReport run_dstab(const PipelineConfig& c, const AttackLevel& level) {
  return run_dstab(c, level, prepare_baseline(c));
}

AttackReport run_dstab(const PipelineConfig& c, const AttackLevel& level, std::shared_ptr<const Baseline> baseline) {
  auto r = std::make_shared<AttackReport>();
  r->level = level;
  r->baseline = baseline;
  staged("config", r, [&] {
    c.validate();
    level.validate();
    if (!baseline) throw std::invalid_argument("missing baseline stages");
    r->config_fingerprint = fingerprint(c);
    return 0;
  });
  const auto& b = *baseline;
  r->adversarial = staged("adversarial-mpc", r, [&] { return run_high_fidelity(c, level); });
  r->u_adv = r->adversarial.increments;
  std::tie(r->theta_star, r->fit) = staged("inverse-fit", r, [&] {
    return inverse::fit_theta(r->u_adv, c.theta0, c.fit, fitting_scenario(c, b.rint, r->adversarial.traj));
  });
  r->compromised = staged("deployment", r, [&] { return run_low_fidelity(c, b.rint, r->theta_star); });
  staged("evaluation", r, [&] {
    r->satisfaction = evaluate_satisfaction(r->compromised.traj, level);
    r->nominal_satisfaction = evaluate_satisfaction(b.nominal.traj, level);
    r->adversarial_satisfaction = evaluate_satisfaction(r->adversarial.traj, level);
    r->stealth_violations = stealth_audit(r->compromised.traj, b.rint, c.limits, c.area, c.audit_tol);
    r->nominal_violations = stealth_audit(b.nominal.traj, b.rint, c.limits, c.area, c.audit_tol);
    return 0;
  });
  return std::move(*r);
}

LevelRow summarize(const AttackReport& r) {
  LevelRow row;
  row.label = r.level.label;
  row.gamma1 = r.level.gamma1;
  row.gamma2 = r.level.gamma2;
  row.satisfied_count = r.satisfaction.count;
  row.nominal_count = r.nominal_satisfaction.count;
  row.mean_positive_margin = r.satisfaction.mean_positive_margin();
  row.fit_loss = r.fit.loss_history.empty() ? 0.0 : r.fit.loss_history.back();
  row.config_fingerprint = r.config_fingerprint;
  return row;
}

LevelComparison compare_levels(std::vector<LevelRow> rows) {
  if (rows.size() < 2) throw std::invalid_argument("compare_levels: need at least two reports");
  for (const auto& row : rows) {
    if (row.config_fingerprint != rows.front().config_fingerprint) {
      throw std::invalid_argument(fmt::format("compare_levels: report '{}' was produced by a different configuration "
                                              "({} vs {})",
                                              row.label, row.config_fingerprint, rows.front().config_fingerprint));
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const LevelRow& a, const LevelRow& b) {
    return std::tie(a.gamma1, a.gamma2) < std::tie(b.gamma1, b.gamma2);
  });
  LevelComparison out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    out.monotone = out.monotone && rows[i].satisfied_count <= rows[i - 1].satisfied_count;
  }
  out.rows = std::move(rows);
  return out;
}

LevelComparison compare_levels(const std::vector<AttackReport>& reports) {
  std::vector<LevelRow> rows;
  rows.reserve(reports.size());
  for (const auto& r : reports) rows.push_back(summarize(r));
  return compare_levels(std::move(rows));
}

}  // namespace fidgap::attack
