#include "fidgap/gradient_check.hpp"

#include <cmath>
#include <random>

namespace fidgap::inverse {

GradientCase random_gradient_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  rint::RintParams rp;
  rp.q_c = uni(5e4, 2e5);
  rp.r_0 = uni(1e-3, 5e-3);
  rp.ocv = Polynomial(std::vector<double>{uni(3.2, 3.5), uni(0.5, 0.9)});

  mpc::HorizonSettings hs;
  hs.horizon = std::uniform_int_distribution<int>(3, 8)(rng);
  hs.control_scale = rp.q_c / 3600.0;
  hs.soc_target = uni(0.7, 0.85);
  hs.limits.soc_max = 0.9;
  hs.limits.current_max = uni(1.0, 3.0) * hs.control_scale;
  hs.limits.voltage_max = 4.5;
  const double dt = 20.0;
  const int steps = std::uniform_int_distribution<int>(15, 40)(rng);
  const auto anchoring = seed % 2 == 0 ? Anchoring::replay : Anchoring::free_rolling;

  Eigen::VectorXd x0(2);
  x0 << uni(0.2, 0.5), 0.0;
  const ThetaParams theta_ref{uni(0.2, 2.0), uni(0.2, 2.0)};

  // reference closed loop on the same model, then perturbed so the fit is not exact
  const auto free_scenario = rint_scenario(rp, hs, dt, {x0}, steps, Anchoring::free_rolling);
  const auto ref = rollout(theta_ref, Eigen::VectorXd::Zero(steps), free_scenario);

  GradientCase c;
  c.seed = seed;
  c.u_ref = ref.controls;
  for (Eigen::Index k = 0; k < c.u_ref.size(); ++k) c.u_ref(k) += 0.05 * hs.control_scale * uni(-1.0, 1.0);
  std::vector<Eigen::VectorXd> anchors = anchoring == Anchoring::replay ? ref.states : std::vector<Eigen::VectorXd>{x0};
  c.scenario = rint_scenario(rp, hs, dt, std::move(anchors), steps, anchoring);
  c.theta = ThetaParams{uni(0.2, 2.0), uni(0.2, 2.0)};
  return c;
}

GradientCheck check_gradient(const GradientCase& c, double h) {
  GradientCheck out;
  out.seed = c.seed;
  const auto g = pdp_gradient(c.theta, c.u_ref, c.scenario);
  out.pdp = g.value;
  out.loss = g.loss;
  out.fallback_steps = static_cast<int>(g.fallback_steps.size());
  out.fd = fd_gradient(c.theta, c.u_ref, c.scenario, h);
  out.rel_error = (out.pdp - out.fd).norm() / std::max(out.fd.norm(), 1e-12);
  return out;
}

}  // namespace fidgap::inverse
