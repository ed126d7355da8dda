#include <cmath>

#include "doctest.h"
#include "fidgap/attack_pipeline.hpp"
#include "fidgap/ecm_rint.hpp"

using namespace fidgap;
using namespace fidgap::rint;

namespace {

struct Segment {
  double current;  // A (area 1)
  double duration;
  double dt;
};

// Exact Rint source: SoC by coulomb counting, V = ocv(soc) + r0 I.
Trajectory synthetic(const RintParams& p, double soc0, const std::vector<Segment>& segments) {
  Trajectory t;
  double time = 0.0;
  double soc = soc0;
  auto push = [&](double current) {
    t.times.push_back(time);
    t.currents.push_back(current);
    t.voltages.push_back(p.ocv(soc) + p.r_0 * current);
    t.soc_bulk.push_back(soc);
    t.soc_surf.push_back(soc);
  };
  for (const auto& s : segments) {
    const int n = static_cast<int>(std::lround(s.duration / s.dt));
    for (int k = 0; k < n; ++k) {
      push(s.current);
      soc += p.eta * s.dt * s.current / p.q_c;
      time += s.dt;
    }
  }
  push(0.0);
  return t;
}

RintParams source() {
  RintParams p;
  p.q_c = 7200.0;
  p.r_0 = 0.01;
  p.ocv = Polynomial({3.4, 0.9, -0.4, 0.25});
  return p;
}

std::vector<Segment> protocol() {
  std::vector<Segment> s{{0.2, 32400.0, 10.0}, {0.0, 0.05, 1e-3}};
  for (int i = 0; i < 6; ++i) {
    s.push_back({i % 2 ? -12.0 : 12.0, 0.05, 1e-3});
    s.push_back({0.0, 0.05, 1e-3});
  }
  return s;
}

}  // namespace

TEST_CASE("step_soc follows the coulomb-counting update") {
  RintParams p;
  p.q_c = 3600.0;
  p.ocv = Polynomial({3.5});
  CHECK(step_soc({0.5, 0.0}, 0.0, p, 1.0).soc == 0.5);
  const auto s = step_soc({0.5, 0.0}, 36.0, p, 1.0);
  CHECK(s.soc == doctest::Approx(0.51).epsilon(1e-14));
  CHECK(s.i_prev == 36.0);
  CHECK(step_soc({0.3, 4.0}, 7.0, p, 2.0).soc == step_soc({0.3, 7.0}, 4.0, p, 2.0).soc);
  CHECK_THROWS(step_soc({0.3, 0.0}, 1.0, p, 0.0));
}

TEST_CASE("step_soc is affine with equal coefficients on delta_i and i_prev") {
  RintParams p;
  p.q_c = 5000.0;
  p.eta = 0.97;
  const double base = step_soc({0.4, 0.0}, 0.0, p, 20.0).soc;
  const double du = step_soc({0.4, 0.0}, 1.0, p, 20.0).soc - base;
  const double di = step_soc({0.4, 1.0}, 0.0, p, 20.0).soc - base;
  CHECK(du == doctest::Approx(di).epsilon(1e-14));
  CHECK(du == doctest::Approx(0.97 * 20.0 / 5000.0).epsilon(1e-12));
  CHECK(step_soc({0.4, 2.0}, 3.0, p, 20.0).soc == doctest::Approx(base + 5.0 * du).epsilon(1e-14));
}

TEST_CASE("terminal voltage decomposes into OCV plus r0 I") {
  auto p = source();
  const EcmState s{0.6, 0.0};
  CHECK(terminal_voltage(s, 0.0, p).value == doctest::Approx(p.ocv(0.6)));
  CHECK(terminal_voltage(s, 2.0, p).value - terminal_voltage(s, 1.0, p).value == doctest::Approx(p.r_0));
  CHECK(terminal_voltage(s, 7.5, p).value - terminal_voltage(s, 0.0, p).value == doctest::Approx(7.5 * p.r_0));
  p.r_0 = 0.0;
  CHECK(terminal_voltage(s, 40.0, p).value == terminal_voltage(s, -3.0, p).value);
  const auto clamped = terminal_voltage({1.2, 0.0}, 0.0, p);
  CHECK(clamped.clamped);
  CHECK(clamped.value == doctest::Approx(p.ocv(1.0)));
}

TEST_CASE("round-trip identification of a synthetic Rint source") {
  const auto truth = source();
  const auto traj = synthetic(truth, 0.05, protocol());
  IdentificationOptions opts;
  opts.ocv_degree = 3;
  const auto rep = identify(traj, opts);
  CHECK(std::abs(rep.params.q_c - truth.q_c) / truth.q_c < 1e-3);
  CHECK(rep.capacity.q_c == doctest::Approx(7200.0).epsilon(1e-3));
  CHECK(std::abs(rep.params.r_0 - truth.r_0) < 1e-6);
  CHECK(std::abs(rep.params.r_0 - truth.r_0) / truth.r_0 < 1e-3);
  CHECK(rep.ocv.rms_residual < 1e-6);
  CHECK(rep.ocv.monotone);
  CHECK(rep.warnings.empty());
}

TEST_CASE("OCV fit: exact recovery at zero current and constant fits") {
  const auto truth = source();
  const auto traj = synthetic(truth, 0.1, {{0.0, 10.0, 1.0}, {1.0, 5000.0, 10.0}});
  auto exact = traj;
  for (std::size_t k = 0; k < exact.size(); ++k) exact.currents[k] = 0.0, exact.voltages[k] = truth.ocv(exact.soc_bulk[k]);
  const auto fit = identify_ocv(exact, 3);
  for (int k = 0; k <= 3; ++k) CHECK(fit.ocv.coefficients()[k] == doctest::Approx(truth.ocv.coefficients()[k]).epsilon(1e-8));
  auto flat = exact;
  for (auto& v : flat.voltages) v = 3.7;
  const auto c = identify_ocv(flat, 0);
  CHECK(c.ocv.degree() == 0);
  CHECK(c.ocv.coefficients()[0] == doctest::Approx(3.7));
}

TEST_CASE("non-monotone OCV data raises a warning flag") {
  auto p = source();
  p.ocv = Polynomial({3.7, 0.5, -2.0});  // peaks at soc 0.125 then falls
  const auto traj = synthetic(p, 0.05, protocol());
  IdentificationOptions opts;
  opts.ocv_degree = 2;
  const auto rep = identify(traj, opts);
  CHECK_FALSE(rep.ocv.monotone);
  CHECK_FALSE(rep.warnings.empty());
}

TEST_CASE("insufficient excitation is rejected") {
  const auto p = source();
  const auto rest = synthetic(p, 0.5, {{0.0, 1000.0, 10.0}});
  CHECK_THROWS_AS(identify_capacity(rest, 1.0), InsufficientExcitation);
  const auto narrow = synthetic(p, 0.5, {{0.2, 3600.0, 10.0}});
  CHECK_THROWS_AS(identify_capacity(narrow, 1.0), InsufficientExcitation);
  CHECK_THROWS_AS(identify_r0(narrow, 1.0, 10.0), InsufficientExcitation);
  CHECK_THROWS_AS(identify_ocv(synthetic(p, 0.5, {{50.0, 10.0, 10.0}}), 3), InsufficientExcitation);
}

TEST_CASE("identification from SPM data") {
  const auto spm = spm::default_params();
  SUBCASE("constant-current sweep gives the analytic capacity") {
    const auto traj = spm::simulate(spm, 0.05, std::vector<double>(20000, 10.0));
    const auto cap = identify_capacity(traj, 1.0);
    const double analytic = spm.faraday * spm.a_neg * spm.l_neg * spm.r_s * spm.c_max_neg / 3.0;
    CHECK(std::abs(cap.q_c - analytic) / analytic < 1e-2);
  }
  SUBCASE("excitation protocol: quasi-static OCV residual and a positive resistance") {
    auto params = attack::case_study_spm();
    const auto traj = attack::excitation_trajectory(params, attack::ExcitationProtocol{}, 1.0, 0);
    const auto rep = identify(traj, IdentificationOptions{});
    CHECK(rep.ocv.rms_residual < 5e-3);
    CHECK(rep.params.r_0 > 0.0);
    CHECK(rep.params.ocv_monotone());
    const double analytic = params.faraday * params.a_neg * params.l_neg * params.r_s * params.c_max_neg / 3.0;
    CHECK(std::abs(rep.params.q_c - analytic) / analytic < 1e-2);
  }
}

TEST_CASE("RintParams validation") {
  auto p = source();
  CHECK_NOTHROW(p.validate());
  p.eta = 1.5;
  CHECK_THROWS(p.validate());
  p = source();
  p.q_c = 0.0;
  CHECK_THROWS(p.validate());
  p = source();
  p.r_0 = -1e-3;
  CHECK_THROWS(p.validate());
  CHECK(source().capacity_ah() == doctest::Approx(2.0));
}
