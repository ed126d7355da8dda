#include <algorithm>

#include "doctest.h"
#include "fidgap/attack_pipeline.hpp"

using namespace fidgap;
using namespace fidgap::attack;

namespace {

PipelineConfig short_run() {
  PipelineConfig c;
  c.steps = 40;
  c.horizon = 5;
  c.fit.max_iters = 60;
  return c;
}

rint::RintParams linear_rint() {
  rint::RintParams r;
  r.q_c = 144630.0;
  r.r_0 = 2e-3;
  r.ocv = Polynomial({3.4, 0.9});
  return r;
}

LevelRow row(std::string label, double g1, int count, std::string fp = "cfg") {
  LevelRow r;
  r.label = std::move(label);
  r.gamma1 = g1;
  r.satisfied_count = count;
  r.config_fingerprint = std::move(fp);
  return r;
}

}  // namespace

TEST_CASE("attack levels") {
  CHECK(AttackLevel::named("low") == AttackLevel::low());
  CHECK(AttackLevel::named("high").gamma2 == 2e-3);
  CHECK_THROWS(AttackLevel::named("extreme"));
  CHECK_THROWS(AttackLevel{-1.0, 0.0, "custom"}.validate());
}

TEST_CASE("evaluate_satisfaction") {
  const auto spm = case_study_spm();
  SUBCASE("rest keeps surface and bulk equal, so no step clears a positive offset") {
    const auto rest = spm::simulate(spm, 0.4, std::vector<double>(50, 0.0));
    const auto s = evaluate_satisfaction(rest, {0.0, 1e-4, "custom"});
    CHECK(s.count == 0);
    CHECK(s.satisfied.size() == rest.size());
  }
  SUBCASE("zero thresholds under strict charging hold from the second step on") {
    const auto charge = spm::simulate(spm, 0.25, std::vector<double>(60, 20.0));
    const auto s = evaluate_satisfaction(charge, {0.0, 0.0, "custom"});
    for (std::size_t k = 2; k < s.satisfied.size(); ++k) CHECK(s.satisfied[k]);
    CHECK(s.count >= static_cast<int>(charge.size()) - 2);
    CHECK(s.mean_positive_margin() > 0.0);
  }
  SUBCASE("counts are non-increasing across the three levels on one trajectory") {
    const auto charge = spm::simulate(spm, 0.25, std::vector<double>(60, 20.0));
    const int low = evaluate_satisfaction(charge, AttackLevel::low()).count;
    const int medium = evaluate_satisfaction(charge, AttackLevel::medium()).count;
    const int high = evaluate_satisfaction(charge, AttackLevel::high()).count;
    CHECK(low >= medium);
    CHECK(medium >= high);
  }
  SUBCASE("missing series are rejected") {
    spm::Trajectory t;
    t.times = {0.0, 1.0};
    CHECK_THROWS(evaluate_satisfaction(t, AttackLevel::low()));
  }
}

TEST_CASE("stealth_audit flags exactly the injected over-current") {
  const auto rint = linear_rint();
  Limits limits;
  limits.voltage_max = 10.0;
  auto traj = spm::simulate(case_study_spm(), 0.3, std::vector<double>(30, 10.0));
  CHECK(stealth_audit(traj, rint, limits, 1.0).empty());
  traj.currents[17] = limits.current_max + 0.5;
  const auto v = stealth_audit(traj, rint, limits, 1.0);
  REQUIRE(v.size() == 1);
  CHECK(v[0].step == 17);
  CHECK(v[0].constraint == "current_max");
  CHECK(v[0].margin == doctest::Approx(0.5));
  // the same density on a half-size cell stays inside the ampere limit
  CHECK(stealth_audit(traj, rint, limits, 0.5).empty());
}

TEST_CASE("compare_levels") {
  CHECK_THROWS(compare_levels(std::vector<LevelRow>{row("low", 0.01, 10)}));
  CHECK_THROWS(compare_levels(std::vector<LevelRow>{row("low", 0.01, 10), row("high", 0.08, 5, "other")}));
  const auto dup = compare_levels(std::vector<LevelRow>{row("low", 0.01, 10), row("low", 0.01, 10)});
  CHECK(dup.monotone);
  CHECK(dup.rows[0].satisfied_count == dup.rows[1].satisfied_count);
  const auto sorted = compare_levels(std::vector<LevelRow>{row("high", 0.08, 5), row("low", 0.01, 10), row("medium", 0.04, 7)});
  CHECK(sorted.rows[0].label == "low");
  CHECK(sorted.rows[2].label == "high");
  CHECK(sorted.monotone);
  CHECK_FALSE(compare_levels(std::vector<LevelRow>{row("low", 0.01, 3), row("high", 0.08, 5)}).monotone);
}

TEST_CASE("pipeline configuration") {
  PipelineConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.resolved_control_scale() == doctest::Approx(c.one_c_current()));
  CHECK(fingerprint(c) == fingerprint(PipelineConfig{}));
  auto d = c;
  d.limits.current_max = 59.0;
  CHECK(fingerprint(c) != fingerprint(d));
  d = c;
  d.horizon = 0;
  CHECK_THROWS(d.validate());
  d = c;
  d.steps = 5;  // fewer steps than the horizon
  CHECK_THROWS(d.validate());
  d = c;
  d.limits.current_max = -1.0;
  CHECK_THROWS(d.validate());
}

TEST_CASE("short pipeline run") {
  const auto c = short_run();
  const auto a = run_dstab(c, AttackLevel::low());
  CHECK(a.satisfaction.satisfied.size() == a.compromised.traj.size());
  CHECK(a.u_adv.size() == c.steps);
  CHECK(a.stealth_violations.empty());
  CHECK(a.nominal_violations.empty());
  CHECK(a.completed_stages.back() == "evaluation");
  CHECK(a.config_fingerprint == fingerprint(c));

  SUBCASE("reproducible") {
    const auto b = run_dstab(c, AttackLevel::low());
    CHECK(a.u_adv == b.u_adv);
    CHECK(a.theta_star == b.theta_star);
    CHECK(a.compromised.traj.soc_surf == b.compromised.traj.soc_surf);
    CHECK(a.satisfied_count() == b.satisfied_count());
  }
  SUBCASE("a shared baseline gives the same report as a fresh one") {
    const auto base = prepare_baseline(c);
    const auto b = run_dstab(c, AttackLevel::low(), base);
    CHECK(a.u_adv == b.u_adv);
    CHECK(a.compromised.traj.voltages == b.compromised.traj.voltages);
  }
  SUBCASE("stage failures carry the stage name") {
    auto bad = c;
    bad.excitation.pulses = 0;
    bad.excitation.soc_hi = 0.03;
    try {
      run_dstab(bad, AttackLevel::low());
      FAIL("expected StageFailure");
    } catch (const StageFailure& e) {
      CHECK(e.stage() == "identification");
    }
    bad = c;
    bad.area = -1.0;
    try {
      run_dstab(bad, AttackLevel::low());
      FAIL("expected StageFailure");
    } catch (const StageFailure& e) {
      CHECK(e.stage() == "config");
    }
  }
}
