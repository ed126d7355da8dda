#include "fidgap/report_io.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "fidgap/svg_plot.hpp"
#include "json.hpp"

namespace fidgap::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

double parse_number(const std::string& cell, const fs::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw CsvError(fmt::format("{}:{}: '{}' is not a number", path.string(), line, cell));
  }
}

bool is_header(const std::vector<std::string>& cells) {
  for (const auto& c : cells) {
    try {
      std::size_t used = 0;
      (void)std::stod(c, &used);
      if (used != c.size()) return true;
    } catch (const std::exception&) {
      return true;
    }
  }
  return false;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& path, std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw CsvError(fmt::format("cannot open '{}'", path.string()));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    auto cells = split(line);
    if (first && is_header(cells)) {
      header = cells;
    } else {
      rows.push_back(std::move(cells));
    }
    first = false;
  }
  return rows;
}

json theta_json(const ThetaParams& t) { return {{"q", t.q}, {"r", t.r}, {"ratio", t.ratio()}}; }

json rint_json(const rint::RintParams& p) {
  return {{"eta", p.eta},       {"capacity_c", p.q_c}, {"capacity_ah", p.capacity_ah()},
          {"r_0", p.r_0},       {"area", p.area},      {"ocv", p.ocv.coefficients()},
          {"ocv_monotone", p.ocv_monotone()}};
}

json fit_json(const inverse::FitReport& f) {
  json j = {{"status", inverse::to_string(f.status)},
            {"iterations", f.iterations},
            {"fallback_steps", f.fallback_steps},
            {"final_loss", f.loss_history.empty() ? 0.0 : f.loss_history.back()}};
  if (f.control_errors.size() > 0) j["max_control_error"] = f.control_errors.cwiseAbs().maxCoeff();
  return j;
}

json closed_loop_json(const attack::ClosedLoopRun& run) {
  return {{"softened_steps", run.softened_steps}, {"max_iter_steps", run.max_iter_steps},
          {"samples", run.traj.size()}};
}

Panel soc_panel(const std::string& title, const std::vector<std::pair<std::string, const spm::Trajectory*>>& runs,
                const std::vector<std::string>& colors) {
  Panel p{title, "time [s]", "bulk SoC", {}, std::nullopt};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    p.series.push_back({runs[i].first, runs[i].second->times, runs[i].second->soc_bulk, colors[i % colors.size()]});
  }
  return p;
}

Panel voltage_panel(const std::vector<std::pair<std::string, const spm::Trajectory*>>& runs,
                    const std::vector<std::string>& colors) {
  Panel p{"Terminal voltage", "time [s]", "voltage [V]", {}, std::nullopt};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    p.series.push_back({runs[i].first, runs[i].second->times, runs[i].second->voltages, colors[i % colors.size()]});
  }
  return p;
}

Panel margin_panel(const std::string& title, const std::vector<std::pair<std::string, const attack::Satisfaction*>>& sats,
                   const std::vector<std::string>& colors) {
  Panel p{title, "step", "surf - bulk - threshold", {}, 0.0};
  for (std::size_t i = 0; i < sats.size(); ++i) {
    Series s{sats[i].first, {}, {}, colors[i % colors.size()], true};
    for (std::size_t k = 0; k < sats[i].second->surf.size(); ++k) {
      s.x.push_back(static_cast<double>(k));
      s.y.push_back(sats[i].second->margin(k));
    }
    p.series.push_back(std::move(s));
  }
  return p;
}

}  // namespace

void write_trajectory_csv(const fs::path& path, const spm::Trajectory& traj) {
  auto out = open_out(path);
  out << "time_s,current_A_per_m2,voltage_V,soc_bulk,soc_surf";
  const int nc = 2 * spm::kNodes;
  for (int i = 1; i <= nc; ++i) out << ",conc_" << i;
  out << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << num(traj.times[k]) << ',' << num(traj.currents[k]) << ',' << num(traj.voltages[k]) << ','
        << num(traj.soc_bulk[k]) << ',' << num(traj.soc_surf[k]);
    for (int i = 0; i < nc; ++i) {
      const bool have = k < traj.states.size() && traj.states[k].conc.size() == nc;
      out << ',' << (have ? num(traj.states[k].conc(i)) : std::string("nan"));
    }
    out << '\n';
  }
}

spm::Trajectory read_trajectory_csv(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  const std::vector<std::string> required{"time_s", "current_A_per_m2", "voltage_V", "soc_bulk", "soc_surf"};
  std::vector<int> col(required.size(), -1);
  if (header.empty()) {
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = static_cast<int>(i);
  } else {
    for (std::size_t i = 0; i < required.size(); ++i) {
      for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == required[i]) col[i] = static_cast<int>(j);
      }
      if (col[i] < 0) throw CsvError(fmt::format("{}: missing column '{}'", path.string(), required[i]));
    }
  }
  int conc0 = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "conc_1") conc0 = static_cast<int>(j);
  }
  const int nc = 2 * spm::kNodes;

  spm::Trajectory traj;
  bool states_ok = conc0 >= 0;
  std::size_t line = header.empty() ? 0 : 1;
  for (const auto& r : rows) {
    ++line;
    auto get = [&](int c) {
      if (c >= static_cast<int>(r.size())) throw CsvError(fmt::format("{}:{}: too few columns", path.string(), line));
      return parse_number(r[static_cast<std::size_t>(c)], path, line);
    };
    traj.times.push_back(get(col[0]));
    traj.currents.push_back(get(col[1]));
    traj.voltages.push_back(get(col[2]));
    traj.soc_bulk.push_back(get(col[3]));
    traj.soc_surf.push_back(get(col[4]));
    if (states_ok) {
      spm::SpmState s;
      s.conc.resize(nc);
      for (int i = 0; i < nc; ++i) s.conc(i) = get(conc0 + i);
      s.i_prev = traj.currents.size() >= 2 ? traj.currents[traj.currents.size() - 2] : 0.0;
      if (!s.conc.allFinite()) states_ok = false;
      traj.states.push_back(std::move(s));
    }
  }
  if (!states_ok) traj.states.clear();
  for (std::size_t k = 1; k < traj.times.size(); ++k) {
    if (!(traj.times[k] > traj.times[k - 1])) {
      throw CsvError(fmt::format("{}: time_s must be strictly increasing", path.string()));
    }
  }
  return traj;
}

std::vector<double> read_profile_csv(const fs::path& path) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  std::size_t c = 0;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "current_A_per_m2") c = j;
  }
  std::vector<double> out;
  std::size_t line = header.empty() ? 0 : 1;
  for (const auto& r : rows) {
    ++line;
    if (c >= r.size()) throw CsvError(fmt::format("{}:{}: too few columns", path.string(), line));
    out.push_back(parse_number(r[c], path, line));
  }
  if (out.empty()) throw CsvError(fmt::format("{}: empty current profile", path.string()));
  return out;
}

void write_satisfaction_csv(const fs::path& path, const attack::Satisfaction& s) {
  auto out = open_out(path);
  out << "step,surf,bulk,threshold,satisfied\n";
  for (std::size_t k = 0; k < s.surf.size(); ++k) {
    out << k << ',' << num(s.surf[k]) << ',' << num(s.bulk[k]) << ',' << num(s.threshold[k]) << ','
        << (s.satisfied[k] ? 1 : 0) << '\n';
  }
}

void write_fit_csv(const fs::path& path, const inverse::FitReport& fit) {
  auto out = open_out(path);
  out << "iteration,q,r,loss,grad_norm,step\n";
  for (std::size_t i = 0; i < fit.theta_history.size(); ++i) {
    auto at = [&](const std::vector<double>& v) { return i < v.size() ? num(v[i]) : std::string("nan"); };
    out << i << ',' << num(fit.theta_history[i].q) << ',' << num(fit.theta_history[i].r) << ','
        << at(fit.loss_history) << ',' << at(fit.grad_norm_history) << ',' << at(fit.step_history) << '\n';
  }
}

void write_stealth_csv(const fs::path& path, const std::vector<attack::StealthViolation>& v) {
  auto out = open_out(path);
  out << "step,constraint,margin\n";
  for (const auto& s : v) out << s.step << ',' << s.constraint << ',' << num(s.margin) << '\n';
}

void write_controls_csv(const fs::path& path, const Eigen::VectorXd& u) {
  auto out = open_out(path);
  out << "step,u_adv_A\n";
  for (Eigen::Index k = 0; k < u.size(); ++k) out << k << ',' << num(u(k)) << '\n';
}

std::string identification_json(const rint::IdentificationReport& r) {
  json j = {{"capacity",
             {{"capacity_c", r.capacity.q_c},
              {"capacity_ah", r.capacity.q_c / 3600.0},
              {"eta", r.capacity.eta},
              {"relative_residual", r.capacity.relative_residual},
              {"soc_span", r.capacity.soc_span}}},
            {"resistance", {{"r_0", r.resistance.r_0}, {"pulses", r.resistance.pulses}, {"spread", r.resistance.spread}}},
            {"ocv",
             {{"coefficients", r.ocv.ocv.coefficients()},
              {"rms_residual_V", r.ocv.rms_residual},
              {"monotone_on_observed", r.ocv.monotone},
              {"soc_lo", r.ocv.soc_lo},
              {"soc_hi", r.ocv.soc_hi},
              {"samples", r.ocv.samples}}},
            {"params", rint_json(r.params)},
            {"warnings", r.warnings}};
  return j.dump(2) + "\n";
}

void write_report_dir(const fs::path& dir, const attack::AttackReport& report) {
  fs::create_directories(dir);
  const auto* base = report.baseline.get();
  const std::vector<std::string> colors{"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};

  json summary;
  summary["level"] = {{"label", report.level.label}, {"gamma1", report.level.gamma1}, {"gamma2", report.level.gamma2}};
  summary["config_fingerprint"] = report.config_fingerprint;
  summary["completed_stages"] = report.completed_stages;
  summary["theta_star"] = theta_json(report.theta_star);
  summary["satisfied_count"] = report.satisfaction.count;
  summary["nominal_count"] = report.nominal_satisfaction.count;
  summary["adversarial_count"] = report.adversarial_satisfaction.count;
  summary["mean_positive_margin"] = report.satisfaction.surf.empty() ? 0.0 : report.satisfaction.mean_positive_margin();
  summary["stealth_violations"] = report.stealth_violations.size();
  summary["nominal_violations"] = report.nominal_violations.size();
  summary["fit"] = fit_json(report.fit);
  summary["adversarial_run"] = closed_loop_json(report.adversarial);
  summary["compromised_run"] = closed_loop_json(report.compromised);
  if (base) {
    summary["rint"] = rint_json(base->rint);
    summary["theta_nominal"] = theta_json(base->theta_nominal);
    summary["nominal_fit"] = fit_json(base->nominal_fit);
    summary["benign_run"] = closed_loop_json(base->benign);
    summary["nominal_run"] = closed_loop_json(base->nominal);
    summary["identification_warnings"] = base->identification.warnings;
  }
  {
    auto out = open_out(dir / "summary.json");
    out << summary.dump(2) << '\n';
  }

  auto traj_if = [&](const char* name, const spm::Trajectory& t) {
    if (t.size() > 0) write_trajectory_csv(dir / name, t);
  };
  traj_if("adversarial_traj.csv", report.adversarial.traj);
  traj_if("compromised_traj.csv", report.compromised.traj);
  if (report.u_adv.size() > 0) write_controls_csv(dir / "u_adv.csv", report.u_adv);
  if (!report.fit.theta_history.empty()) write_fit_csv(dir / "fit.csv", report.fit);
  if (!report.satisfaction.surf.empty()) write_satisfaction_csv(dir / "satisfaction.csv", report.satisfaction);
  if (!report.nominal_satisfaction.surf.empty()) {
    write_satisfaction_csv(dir / "nominal_satisfaction.csv", report.nominal_satisfaction);
  }
  if (!report.adversarial_satisfaction.surf.empty()) {
    write_satisfaction_csv(dir / "adversarial_satisfaction.csv", report.adversarial_satisfaction);
  }
  write_stealth_csv(dir / "stealth.csv", report.stealth_violations);
  if (base) {
    traj_if("excitation_traj.csv", base->excitation);
    traj_if("benign_traj.csv", base->benign.traj);
    traj_if("nominal_traj.csv", base->nominal.traj);
    if (!base->nominal_fit.theta_history.empty()) write_fit_csv(dir / "nominal_fit.csv", base->nominal_fit);
    auto out = open_out(dir / "identification.json");
    out << identification_json(base->identification);
  }

  std::vector<std::pair<std::string, const attack::Satisfaction*>> sats;
  if (!report.satisfaction.surf.empty()) sats.emplace_back("compromised", &report.satisfaction);
  if (!report.nominal_satisfaction.surf.empty()) sats.emplace_back("nominal", &report.nominal_satisfaction);
  if (!report.adversarial_satisfaction.surf.empty()) sats.emplace_back("adversarial plan", &report.adversarial_satisfaction);
  if (!sats.empty()) {
    write_svg((dir / "satisfaction_margin.svg").string(),
              {margin_panel(fmt::format("Gradient margin, level {}", report.level.label), sats, colors)});
  }
  std::vector<std::pair<std::string, const spm::Trajectory*>> runs;
  if (report.compromised.traj.size() > 0) runs.emplace_back("compromised", &report.compromised.traj);
  if (base && base->nominal.traj.size() > 0) runs.emplace_back("nominal", &base->nominal.traj);
  if (report.adversarial.traj.size() > 0) runs.emplace_back("adversarial plan", &report.adversarial.traj);
  if (!runs.empty()) {
    write_svg((dir / "soc_voltage.svg").string(), {soc_panel("Bulk SoC", runs, colors), voltage_panel(runs, colors)});
  }
}

attack::LevelRow read_summary(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw CsvError(fmt::format("cannot open '{}'", (dir / "summary.json").string()));
  json j;
  try {
    j = json::parse(in);
    attack::LevelRow row;
    row.label = j.at("level").at("label").get<std::string>();
    row.gamma1 = j.at("level").at("gamma1").get<double>();
    row.gamma2 = j.at("level").at("gamma2").get<double>();
    row.satisfied_count = j.at("satisfied_count").get<int>();
    row.nominal_count = j.at("nominal_count").get<int>();
    row.mean_positive_margin = j.at("mean_positive_margin").get<double>();
    row.fit_loss = j.at("fit").at("final_loss").get<double>();
    row.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    return row;
  } catch (const json::exception& e) {
    throw CsvError(fmt::format("{}: malformed summary: {}", dir.string(), e.what()));
  }
}

}  // namespace fidgap::io
