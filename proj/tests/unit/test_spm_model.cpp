#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fidgap/spm_model.hpp"

using namespace fidgap::spm;

namespace {

SpmState uniform(const SpmParams& p, double c_neg, double c_pos) {
  SpmState s;
  s.conc.resize(2 * p.n_nodes);
  s.conc.head(p.n_nodes).setConstant(c_neg);
  s.conc.tail(p.n_nodes).setConstant(c_pos);
  return s;
}

// Coulomb-counting rate written out from the flux boundary condition, independent of the library helper.
double analytic_rate(const SpmParams& p) { return 3.0 / (p.faraday * p.a_neg * p.l_neg * p.r_s * p.c_max_neg); }

}  // namespace

TEST_CASE("default parameters validate and dt is checked against the stability bound") {
  auto p = default_params();
  CHECK_NOTHROW(p.validate());
  CHECK(p.n_nodes == 10);
  const double bound = max_stable_dt(p);
  const double h = p.r_s / 9.0;
  CHECK(bound == doctest::Approx(h * h / (6.0 * std::max(p.d_s_neg, p.d_s_pos))));
  p.dt = 2.0 * bound;
  try {
    build_diffusion_operators(p);
    FAIL("expected StabilityError");
  } catch (const StabilityError& e) {
    CHECK(e.max_dt() == doctest::Approx(bound));
    CHECK(std::string(e.what()).find("maximum admissible dt") != std::string::npos);
  }
  auto bad = default_params();
  bad.n_nodes = 12;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = default_params();
  bad.d_s_neg = -1.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("D_s_neg"), std::invalid_argument);
}

TEST_CASE("diffusion operator annihilates uniform profiles") {
  const auto p = default_params();
  const auto ops = build_diffusion_operators(p);
  for (const auto* op : {&ops.neg, &ops.pos}) {
    const Eigen::VectorXd rows = op->a * Eigen::VectorXd::Ones(p.n_nodes);
    CHECK(rows.cwiseAbs().maxCoeff() < 1e-15);
  }
  const auto s = uniform(p, 0.3 * p.c_max_neg, 0.6 * p.c_max_pos);
  const auto next = step(s, 0.0, ops);
  CHECK((next.conc - s.conc).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("boundary input has opposite signs on the two electrodes") {
  const auto ops = build_diffusion_operators(default_params());
  CHECK(ops.neg.b(ops.nodes - 1) > 0.0);
  CHECK(ops.pos.b(ops.nodes - 1) < 0.0);
  CHECK(ops.neg.b.head(ops.nodes - 1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("interior rows follow the half-node radius stencil") {
  const auto p = default_params();
  const auto ops = build_diffusion_operators(p);
  const double h = p.r_s / 9.0;
  const double k = p.d_s_neg * p.dt / (h * h);
  for (int i = 2; i <= 8; ++i) {
    const double lo = std::pow((i - 0.5) / i, 2);
    const double hi = std::pow((i + 0.5) / i, 2);
    CHECK(ops.neg.a(i, i - 1) == doctest::Approx(k * lo));
    CHECK(ops.neg.a(i, i + 1) == doctest::Approx(k * hi));
    CHECK(ops.neg.a(i, i) == doctest::Approx(-k * (lo + hi)));
  }
  CHECK(ops.neg.a(0, 0) == doctest::Approx(-6.0 * k));
  CHECK(ops.neg.a(0, 1) == doctest::Approx(6.0 * k));
}

TEST_CASE("constant current changes bulk SoC at the coulomb-counting rate") {
  const auto p = default_params();
  const auto ops = build_diffusion_operators(p);
  const double current = 25.0;
  auto s = initial_state(p, 0.3);
  const double expected = p.dt * current * analytic_rate(p);
  double prev = bulk_soc(s, p);
  for (int k = 0; k < 200; ++k) {
    s = step(s, k == 0 ? current : 0.0, ops);
    const double now = bulk_soc(s, p);
    CHECK(std::abs((now - prev) - expected) <= 1e-10 * expected);
    prev = now;
  }
}

TEST_CASE("total applied current is i_prev + delta_i") {
  const auto p = default_params();
  const auto ops = build_diffusion_operators(p);
  auto s = initial_state(p, 0.4);
  s.conc(9) += 50.0;  // non-uniform so diffusion acts
  auto held = s;
  held.i_prev = 5.0;
  const auto a = step(held, -5.0, ops);
  const auto b = step(s, 0.0, ops);
  CHECK((a.conc - b.conc).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.i_prev == 0.0);
}

TEST_CASE("bulk SoC quadrature defect has the closed-form value") {
  const auto p = default_params();
  // trapezoid on r^2 over 9 intervals: (3/9^3) * (sum_{i=1}^{8} i^2 + 81/2) = 1 + 1/162
  const double expected = 3.0 / 729.0 * (204.0 + 40.5);
  CHECK(expected == doctest::Approx(1.0 + 1.0 / 162.0));
  CHECK(quadrature_sum(p) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(bulk_soc(uniform(p, p.c_max_neg, 0.0), p) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected - 1.0 < 1e-2);
  CHECK(bulk_soc(uniform(p, 0.0, 0.0), p) == 0.0);
  CHECK(surf_soc(uniform(p, 0.0, 0.0), p) == 0.0);
  // initial_state normalizes by the quadrature so the requested SoC is reproduced
  CHECK(bulk_soc(initial_state(p, 0.37), p) == doctest::Approx(0.37).epsilon(1e-14));
  const auto u = uniform(p, 0.25 * p.c_max_neg, 0.5 * p.c_max_pos);
  CHECK(surf_soc(u, p) == doctest::Approx(0.25));
}

TEST_CASE("sustained charging keeps surface SoC above bulk SoC") {
  auto p = default_params();
  const auto ops = build_diffusion_operators(p);
  auto s = initial_state(p, 0.2);
  // a uniform start has surf = bulk / (1 + 1/162), so the ordering is checked from the second step on
  s = step(s, 30.0, ops);
  for (int k = 1; k < 100; ++k) {
    s = step(s, 0.0, ops);
    CHECK(surf_soc(s, p) > bulk_soc(s, p));
  }
}

TEST_CASE("terminal voltage: open-circuit part plus lumped ohmic term") {
  const auto p = default_params();
  auto s = initial_state(p, 0.5);
  const auto v0 = terminal_voltage(s, 0.0, p);
  const double theta_neg = s.conc(9) / p.c_max_neg;
  const double theta_pos = s.conc(19) / p.c_max_pos;
  CHECK(v0.value ==
        doctest::Approx(p.voltage.ocv_pos.poly(theta_pos) - p.voltage.ocv_neg.poly(theta_neg)).epsilon(1e-14));
  CHECK_FALSE(v0.clamped);
  const auto v1 = terminal_voltage(s, 10.0, p);
  const auto v2 = terminal_voltage(s, 20.0, p);
  // charging current raises the terminal voltage by r_lumped * I
  CHECK(v2.value - v1.value == doctest::Approx(10.0 * p.voltage.r_lumped));
  auto far = s;
  far.conc.tail(p.n_nodes).setConstant(0.01 * p.c_max_pos);  // below the cathode OCV domain
  CHECK(terminal_voltage(far, 0.0, p).clamped);
}

TEST_CASE("voltage relaxes monotonically after a current pulse") {
  auto p = default_params();
  std::vector<double> profile(30, 40.0);
  profile.resize(630, 0.0);
  const auto traj = simulate(p, 0.4, profile);
  const double v_rest = traj.voltages.back();
  double prev = std::abs(traj.voltages[31] - v_rest);
  for (std::size_t k = 32; k < traj.size(); ++k) {
    const double gap = std::abs(traj.voltages[k] - v_rest);
    CHECK(gap <= prev + 1e-12);
    prev = gap;
  }
}

TEST_CASE("simulate: trajectory shape, conservation and monotone charging") {
  const auto p = default_params();
  const auto empty = simulate(p, 0.3, {});
  CHECK(empty.size() == 1);
  CHECK(empty.states.size() == 1);

  const auto rest = simulate(p, 0.3, std::vector<double>(1000, 0.0));
  CHECK(rest.size() == 1001);
  CHECK(std::abs(rest.soc_bulk.back() - rest.soc_bulk.front()) < 1e-9 * rest.soc_bulk.front());

  std::vector<double> charge(2000, 40.0);
  const auto traj = simulate(p, 0.25, charge);
  std::size_t k = 1;
  for (; k < traj.size() && traj.soc_bulk[k - 1] < 0.8; ++k) CHECK(traj.soc_bulk[k] > traj.soc_bulk[k - 1]);
  CHECK(traj.soc_bulk[k - 1] >= 0.8);
  CHECK(traj.times.size() == traj.voltages.size());
  CHECK(traj.currents.size() == traj.soc_surf.size());
  CHECK_THROWS(simulate(p, 0.3, {std::nan("")}));
}

TEST_CASE("substepping composes the one-step operator") {
  auto p = default_params();
  p.substeps = 20;
  const auto fine = build_diffusion_operators(p);
  const auto coarse = control_operators(p);
  CHECK(coarse.period == doctest::Approx(20.0));
  auto a = initial_state(p, 0.3);
  a.conc(9) += 100.0;
  auto b = a;
  a = step(a, 12.0, coarse);
  for (int j = 0; j < 20; ++j) b = step(b, j == 0 ? 12.0 : 0.0, fine);
  CHECK((a.conc - b.conc).cwiseAbs().maxCoeff() < 1e-9 * p.c_max_pos);
}

TEST_CASE("grid refinement: halving dt and doubling the intervals") {
  auto run = [](int nodes, double dt, int steps) {
    auto p = default_params();
    p.n_nodes = nodes;
    p.dt = dt;
    const auto ops = build_diffusion_operators(p);
    auto s = initial_state(p, 0.3);
    for (int k = 0; k < steps; ++k) s = step(s, k == 0 ? 40.0 : 0.0, ops);
    return std::pair{bulk_soc(s, p), surf_soc(s, p)};
  };
  const auto [bulk10, surf10] = run(10, 1.0, 500);
  const auto [bulk19, surf19] = run(19, 0.5, 1000);
  CHECK(std::abs(bulk10 - bulk19) < 1e-3);
  // surface SoC is the quantity that actually depends on the grid
  CHECK(std::abs(surf10 - surf19) < 5e-3);
}

TEST_CASE("one Euler step against a 100-node reference with dt/100") {
  auto profile = [](SpmParams p, int nodes, double dt) {
    p.n_nodes = nodes;
    p.dt = dt;
    SpmState s;
    s.conc.resize(2 * nodes);
    for (int i = 0; i < nodes; ++i) {
      const double r = static_cast<double>(i) / (nodes - 1);
      s.conc(i) = 5000.0 + 3000.0 * std::cos(M_PI * r);
      s.conc(nodes + i) = 30000.0;
    }
    return std::pair{p, s};
  };
  const auto base = default_params();
  auto [pc, sc] = profile(base, 10, 1.0);
  sc = step(sc, 0.0, build_diffusion_operators(pc));
  auto [pf, sf] = profile(base, 100, 0.01);
  const auto fine_ops = build_diffusion_operators(pf);
  for (int k = 0; k < 100; ++k) sf = step(sf, 0.0, fine_ops);
  // sample the fine solution at the coarse radii (every 11th node lines up)
  Eigen::VectorXd ref(10);
  for (int i = 0; i < 10; ++i) ref(i) = sf.conc(11 * i);
  const double rel = (sc.conc.head(10) - ref).norm() / ref.norm();
  CHECK(rel < 1e-2);
}

TEST_CASE("cathode initialization follows the stoichiometry window") {
  const auto p = default_params();
  const auto s = initial_state(p, 0.0);
  CHECK(s.conc(p.n_nodes) / p.c_max_pos == doctest::Approx(p.window.pos_max));
  CHECK(cathode_stoichiometry(p.window.neg_max, p.window) == doctest::Approx(p.window.pos_min));
  // lithium inventory: anode gain equals cathode loss under any current
  const auto ops = build_diffusion_operators(p);
  auto a = initial_state(p, 0.3);
  auto b = step(a, 30.0, ops);
  const auto row = bulk_soc_row(p);
  const double d_neg = row.head(p.n_nodes).dot(b.conc.head(p.n_nodes) - a.conc.head(p.n_nodes)) * p.c_max_neg *
                       p.a_neg * p.l_neg;
  Eigen::RowVectorXd pos_row = row.head(p.n_nodes) * p.c_max_neg;  // same quadrature on the cathode grid
  const double d_pos = pos_row.dot(b.conc.tail(p.n_nodes) - a.conc.tail(p.n_nodes)) * p.a_pos * p.l_pos;
  CHECK(d_neg == doctest::Approx(-d_pos).epsilon(1e-10));
}
