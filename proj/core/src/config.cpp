#include "fidgap/config.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fidgap::io {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void number(const std::string& key, double& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(field(key), "must be finite");
  }

  void integer(const std::string& key, int& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
    out = v.get<int>();
  }

  void unsigned_integer(const std::string& key, std::uint64_t& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

  void string(const std::string& key, std::string& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    out = v.get<std::string>();
  }

  void coefficients(const std::string& key, Polynomial& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.empty()) throw ConfigError(field(key), "expected a non-empty array of numbers");
    std::vector<double> c;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(field(key), "expected a non-empty array of numbers");
      c.push_back(e.get<double>());
    }
    out = Polynomial(std::move(c));
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), field(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(field(k), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

void read_theta(Reader& parent, const std::string& key, ThetaParams& theta) {
  if (!parent.has(key)) {
    parent.number(key, theta.q);  // marks the key as seen
    return;
  }
  auto r = parent.child(key);
  r.number("q", theta.q);
  r.number("r", theta.r);
  r.finish();
  require(theta.q >= 0.0 && theta.r >= 0.0 && theta.q + theta.r > 0.0, parent.field(key),
          "weights must be >= 0 with q + r > 0");
}

void read_ocv(Reader& parent, const std::string& key, spm::OcvCurve& curve) {
  if (!parent.has(key)) {
    parent.number(key, curve.domain_lo);
    return;
  }
  auto r = parent.child(key);
  r.coefficients("coefficients", curve.poly);
  if (r.has("domain")) {
    const auto& d = r.raw("domain");
    require(d.is_array() && d.size() == 2 && d[0].is_number() && d[1].is_number(), r.field("domain"),
            "expected [lo, hi]");
    curve.domain_lo = d[0].get<double>();
    curve.domain_hi = d[1].get<double>();
    require(curve.domain_lo < curve.domain_hi, r.field("domain"), "lo must be below hi");
  } else {
    r.raw("domain");
  }
  r.finish();
}

spm::SpmParams read_spm(Reader& root) {
  auto p = attack::case_study_spm();
  if (!root.has("spm")) {
    root.number("spm", p.dt);
    return p;
  }
  const auto& raw = root.raw("spm");
  if (raw.is_string()) {
    require(raw.get<std::string>() == "default", "spm", "the only named source is \"default\"");
    return p;
  }
  auto r = root.child("spm");
  std::string base = "default";
  r.string("base", base);
  require(base == "default", "spm.base", "the only named source is \"default\"");
  r.number("d_s_pos", p.d_s_pos);
  r.number("d_s_neg", p.d_s_neg);
  r.number("r_s", p.r_s);
  r.number("a_pos", p.a_pos);
  r.number("a_neg", p.a_neg);
  r.number("l_pos", p.l_pos);
  r.number("l_neg", p.l_neg);
  r.number("faraday", p.faraday);
  r.number("c_max_pos", p.c_max_pos);
  r.number("c_max_neg", p.c_max_neg);
  r.integer("n_nodes", p.n_nodes);
  r.number("dt", p.dt);
  r.integer("substeps", p.substeps);
  r.number("r_lumped", p.voltage.r_lumped);
  if (r.has("window")) {
    auto w = r.child("window");
    w.number("neg_min", p.window.neg_min);
    w.number("neg_max", p.window.neg_max);
    w.number("pos_min", p.window.pos_min);
    w.number("pos_max", p.window.pos_max);
    w.finish();
  } else {
    r.number("window", p.dt);
  }
  read_ocv(r, "ocv_pos", p.voltage.ocv_pos);
  read_ocv(r, "ocv_neg", p.voltage.ocv_neg);
  r.finish();
  for (auto [name, v] : {std::pair{"d_s_pos", p.d_s_pos}, {"d_s_neg", p.d_s_neg}, {"r_s", p.r_s}, {"a_pos", p.a_pos},
                         {"a_neg", p.a_neg}, {"l_pos", p.l_pos}, {"l_neg", p.l_neg}, {"faraday", p.faraday},
                         {"c_max_pos", p.c_max_pos}, {"c_max_neg", p.c_max_neg}, {"dt", p.dt}}) {
    require(v > 0.0, std::string("spm.") + name, "must be > 0");
  }
  require(p.substeps >= 1, "spm.substeps", "must be >= 1");
  require(p.n_nodes == spm::kNodes, "spm.n_nodes", fmt::format("must be {}", spm::kNodes));
  require(p.voltage.r_lumped >= 0.0, "spm.r_lumped", "must be >= 0");
  return p;
}

AttackLevel read_level(const json& v, const std::string& field) {
  if (v.is_string()) {
    try {
      return AttackLevel::named(v.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field, e.what());
    }
  }
  Reader r(v, field);
  AttackLevel level;
  r.number("gamma1", level.gamma1);
  r.number("gamma2", level.gamma2);
  r.string("label", level.label);
  r.finish();
  require(level.gamma1 >= 0.0, r.field("gamma1"), "must be >= 0");
  require(level.gamma2 >= 0.0, r.field("gamma2"), "must be >= 0");
  return level;
}

json theta_json(const ThetaParams& t) { return {{"q", t.q}, {"r", t.r}}; }

json ocv_json(const spm::OcvCurve& c) {
  return {{"coefficients", c.poly.coefficients()}, {"domain", {c.domain_lo, c.domain_hi}}};
}

json level_json(const AttackLevel& l) { return {{"gamma1", l.gamma1}, {"gamma2", l.gamma2}, {"label", l.label}}; }

}  // namespace

std::vector<AttackLevel> parse_level_list(const std::string& list) {
  std::vector<AttackLevel> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) throw ConfigError("level", fmt::format("empty entry in '{}'", list));
    item = item.substr(first, item.find_last_not_of(" \t") - first + 1);
    try {
      out.push_back(AttackLevel::named(item));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("level", e.what());
    }
  }
  if (out.empty()) throw ConfigError("level", "no attack level given");
  return out;
}

RunConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", fmt::format("invalid JSON: {}", e.what()));
  }
  RunConfig cfg;
  auto& pc = cfg.pipeline;
  Reader root(doc, "");
  pc.spm = read_spm(root);
  root.number("area", pc.area);
  require(pc.area > 0.0, "area", "must be > 0");

  if (root.has("rint_override")) {
    auto r = root.child("rint_override");
    rint::RintParams rp;
    rp.area = pc.area;
    double ah = 0.0;
    r.number("eta", rp.eta);
    r.number("capacity_ah", ah);
    r.number("capacity_c", rp.q_c);
    r.number("r_0", rp.r_0);
    r.coefficients("ocv", rp.ocv);
    r.finish();
    if (rp.q_c == 0.0) rp.q_c = ah * 3600.0;  // coulombs take precedence when both are given
    require(rp.eta > 0.0 && rp.eta <= 1.0, "rint_override.eta", "must lie in (0, 1]");
    require(rp.q_c > 0.0, "rint_override.capacity_ah", "capacity must be > 0");
    require(rp.r_0 >= 0.0, "rint_override.r_0", "must be >= 0");
    require(!rp.ocv.empty(), "rint_override.ocv", "coefficients are required");
    pc.rint_override = rp;
  } else {
    root.number("rint_override", pc.area);
  }

  if (root.has("mpc")) {
    auto r = root.child("mpc");
    r.integer("horizon", pc.horizon);
    r.integer("steps", pc.steps);
    r.number("soc_max", pc.limits.soc_max);
    r.number("current_max", pc.limits.current_max);
    r.number("voltage_max", pc.limits.voltage_max);
    r.number("soc_target", pc.soc_target);
    r.number("soc_init", pc.soc_init);
    r.number("i_init", pc.i_init);
    r.number("slack_weight", pc.slack_weight);
    r.number("control_scale", pc.control_scale);
    read_theta(r, "theta_h", pc.theta_h);
    r.finish();
    require(pc.horizon >= 1, "mpc.horizon", "N must be >= 1");
    require(pc.steps >= pc.horizon, "mpc.steps", "T must be >= N");
    require(pc.limits.soc_max > 0.0, "mpc.soc_max", "SoC_max must be > 0");
    require(pc.limits.current_max > 0.0, "mpc.current_max", "I_max must be > 0");
    require(pc.limits.voltage_max > 0.0, "mpc.voltage_max", "V_max must be > 0");
    require(pc.soc_target > 0.0 && pc.soc_target <= pc.limits.soc_max, "mpc.soc_target",
            "SoC_d must lie in (0, SoC_max]");
    require(pc.soc_init >= 0.0 && pc.soc_init <= 1.0, "mpc.soc_init", "must lie in [0, 1]");
    require(pc.slack_weight > 0.0, "mpc.slack_weight", "must be > 0");
    require(pc.control_scale >= 0.0, "mpc.control_scale", "must be >= 0 (0 selects 1C)");
  } else {
    root.number("mpc", pc.area);
  }

  if (root.has("attack")) {
    const auto& a = root.raw("attack");
    cfg.levels.clear();
    if (a.is_array()) {
      for (std::size_t i = 0; i < a.size(); ++i) cfg.levels.push_back(read_level(a[i], fmt::format("attack[{}]", i)));
      require(!cfg.levels.empty(), "attack", "the level list is empty");
    } else {
      cfg.levels.push_back(read_level(a, "attack"));
    }
  } else {
    root.number("attack", pc.area);
  }

  if (root.has("fit")) {
    auto r = root.child("fit");
    r.number("alpha", pc.fit.alpha);
    r.integer("max_iters", pc.fit.max_iters);
    r.number("tol", pc.fit.tol);
    r.number("epsilon", pc.fit.epsilon);
    r.integer("max_halvings", pc.fit.max_halvings);
    read_theta(r, "theta0", pc.theta0);
    std::string anchoring = inverse::to_string(pc.anchoring);
    r.string("anchoring", anchoring);
    r.finish();
    try {
      pc.anchoring = inverse::anchoring_from_string(anchoring);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("fit.anchoring", e.what());
    }
    require(pc.fit.alpha >= 0.0, "fit.alpha", "must be >= 0");
    require(pc.fit.max_iters >= 0, "fit.max_iters", "must be >= 0");
    require(pc.fit.tol >= 0.0, "fit.tol", "must be >= 0");
    require(pc.fit.epsilon > 0.0, "fit.epsilon", "must be > 0");
    require(pc.fit.max_halvings >= 0, "fit.max_halvings", "must be >= 0");
  } else {
    root.number("fit", pc.area);
  }

  if (root.has("identification")) {
    auto r = root.child("identification");
    r.number("eta", pc.identification.eta);
    r.integer("ocv_degree", pc.identification.ocv_degree);
    r.number("quasi_static_threshold", pc.identification.quasi_static_threshold);
    r.number("pulse_threshold", pc.identification.pulse_threshold);
    r.number("min_capacity_span", pc.identification.min_capacity_span);
    r.finish();
    require(pc.identification.eta > 0.0 && pc.identification.eta <= 1.0, "identification.eta", "must lie in (0, 1]");
    require(pc.identification.ocv_degree >= 0, "identification.ocv_degree", "must be >= 0");
  } else {
    root.number("identification", pc.area);
  }
  pc.identification.area = pc.area;

  if (root.has("excitation")) {
    auto r = root.child("excitation");
    auto& x = pc.excitation;
    r.number("sweep_c_rate", x.sweep_c_rate);
    r.number("soc_lo", x.soc_lo);
    r.number("soc_hi", x.soc_hi);
    r.integer("pulses", x.pulses);
    r.number("pulse_c_rate", x.pulse_c_rate);
    r.number("pulse_seconds", x.pulse_seconds);
    r.number("rest_seconds", x.rest_seconds);
    r.number("discharge_c_rate", x.discharge_c_rate);
    r.number("voltage_noise", x.voltage_noise);
    r.finish();
  } else {
    root.number("excitation", pc.area);
  }

  root.number("audit_tol", pc.audit_tol);
  root.unsigned_integer("seed", pc.seed);
  root.string("output_dir", cfg.output_dir);
  require(!cfg.output_dir.empty(), "output_dir", "must not be empty");
  root.finish();

  try {
    pc.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config", e.what());
  }
  return cfg;
}

std::string to_json_text(const RunConfig& cfg) {
  const auto& pc = cfg.pipeline;
  const auto& p = pc.spm;
  json spm = {{"base", "default"},
              {"d_s_pos", p.d_s_pos},
              {"d_s_neg", p.d_s_neg},
              {"r_s", p.r_s},
              {"a_pos", p.a_pos},
              {"a_neg", p.a_neg},
              {"l_pos", p.l_pos},
              {"l_neg", p.l_neg},
              {"faraday", p.faraday},
              {"c_max_pos", p.c_max_pos},
              {"c_max_neg", p.c_max_neg},
              {"n_nodes", p.n_nodes},
              {"dt", p.dt},
              {"substeps", p.substeps},
              {"r_lumped", p.voltage.r_lumped},
              {"window",
               {{"neg_min", p.window.neg_min},
                {"neg_max", p.window.neg_max},
                {"pos_min", p.window.pos_min},
                {"pos_max", p.window.pos_max}}},
              {"ocv_pos", ocv_json(p.voltage.ocv_pos)},
              {"ocv_neg", ocv_json(p.voltage.ocv_neg)}};
  json doc;
  doc["spm"] = spm;
  doc["area"] = pc.area;
  if (pc.rint_override) {
    const auto& r = *pc.rint_override;
    doc["rint_override"] = {{"eta", r.eta},
                            {"capacity_c", r.q_c},
                            {"capacity_ah", r.capacity_ah()},
                            {"r_0", r.r_0},
                            {"ocv", r.ocv.coefficients()}};
  } else {
    doc["rint_override"] = nullptr;
  }
  doc["mpc"] = {{"horizon", pc.horizon},
                {"steps", pc.steps},
                {"soc_max", pc.limits.soc_max},
                {"current_max", pc.limits.current_max},
                {"voltage_max", pc.limits.voltage_max},
                {"soc_target", pc.soc_target},
                {"soc_init", pc.soc_init},
                {"i_init", pc.i_init},
                {"slack_weight", pc.slack_weight},
                {"control_scale", pc.control_scale},
                {"theta_h", theta_json(pc.theta_h)}};
  json levels = json::array();
  for (const auto& l : cfg.levels) levels.push_back(level_json(l));
  doc["attack"] = levels;
  doc["fit"] = {{"alpha", pc.fit.alpha},
                {"max_iters", pc.fit.max_iters},
                {"tol", pc.fit.tol},
                {"epsilon", pc.fit.epsilon},
                {"max_halvings", pc.fit.max_halvings},
                {"theta0", theta_json(pc.theta0)},
                {"anchoring", inverse::to_string(pc.anchoring)}};
  doc["identification"] = {{"eta", pc.identification.eta},
                           {"ocv_degree", pc.identification.ocv_degree},
                           {"quasi_static_threshold", pc.identification.quasi_static_threshold},
                           {"pulse_threshold", pc.identification.pulse_threshold},
                           {"min_capacity_span", pc.identification.min_capacity_span}};
  const auto& x = pc.excitation;
  doc["excitation"] = {{"sweep_c_rate", x.sweep_c_rate},     {"soc_lo", x.soc_lo},
                       {"soc_hi", x.soc_hi},                 {"pulses", x.pulses},
                       {"pulse_c_rate", x.pulse_c_rate},     {"pulse_seconds", x.pulse_seconds},
                       {"rest_seconds", x.rest_seconds},     {"discharge_c_rate", x.discharge_c_rate},
                       {"voltage_noise", x.voltage_noise}};
  doc["audit_tol"] = pc.audit_tol;
  doc["seed"] = pc.seed;
  doc["output_dir"] = cfg.output_dir;
  return doc.dump(2) + "\n";
}

RunConfig parse_config(const std::string& path, bool write_echo) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", fmt::format("cannot open '{}'", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto cfg = parse_config_text(buffer.str());
  if (write_echo) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    const auto echo = fs::path(cfg.output_dir) / "config.resolved.json";
    std::ofstream out(echo);
    if (!out) throw ConfigError("output_dir", fmt::format("'{}' is not writable", cfg.output_dir));
    out << to_json_text(cfg);
  }
  return cfg;
}

}  // namespace fidgap::io
