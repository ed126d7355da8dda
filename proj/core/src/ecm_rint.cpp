#include "fidgap/ecm_rint.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fidgap::rint {

void RintParams::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument(fmt::format("RintParams.eta must be in (0, 1] (got {})", eta));
  if (!(q_c > 0.0) || !std::isfinite(q_c)) throw std::invalid_argument(fmt::format("RintParams.q_c must be > 0 (got {})", q_c));
  if (!(r_0 >= 0.0) || !std::isfinite(r_0)) throw std::invalid_argument(fmt::format("RintParams.r_0 must be >= 0 (got {})", r_0));
  if (!(area > 0.0)) throw std::invalid_argument("RintParams.area must be > 0");
  if (ocv.empty()) throw std::invalid_argument("RintParams.ocv has no coefficients");
}

EcmState step_soc(const EcmState& state, double delta_i, const RintParams& params, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_soc: dt must be > 0");
  const double gain = params.eta * dt / params.q_c;
  return {state.soc + gain * delta_i + gain * state.i_prev, state.i_prev + delta_i};
}

Reading terminal_voltage(const EcmState& state, double i_total, const RintParams& params) {
  const double soc = std::clamp(state.soc, 0.0, 1.0);
  return {params.ocv(soc) + params.r_0 * i_total, soc != state.soc};
}

CapacityFit identify_capacity(const Trajectory& traj, double area, double eta, double min_span) {
  const auto n = traj.size();
  if (n < 2) throw InsufficientExcitation("capacity identification needs at least two samples");
  const auto [lo, hi] = std::minmax_element(traj.soc_bulk.begin(), traj.soc_bulk.end());
  const double span = *hi - *lo;
  if (!(span >= min_span)) {
    throw InsufficientExcitation(
        fmt::format("capacity identification: SoC sweep width {:.4g} below required {:.4g}", span, min_span));
  }

  // d soc = (eta / q_c) * charge: fit the slope through the origin
  double charge = 0.0;
  double sxx = 0.0;
  double sxy = 0.0;
  std::vector<double> xs(n, 0.0);
  std::vector<double> ys(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) {
    charge += traj.currents[k - 1] * area * (traj.times[k] - traj.times[k - 1]);
    xs[k] = charge;
    ys[k] = traj.soc_bulk[k] - traj.soc_bulk[0];
    sxx += charge * charge;
    sxy += charge * ys[k];
  }
  if (!(sxx > 0.0)) throw InsufficientExcitation("capacity identification: no net charge transferred");
  const double slope = sxy / sxx;
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    const double r = ys[k] - slope * xs[k];
    ss_res += r * r;
    ss_tot += ys[k] * ys[k];
  }
  CapacityFit fit;
  fit.eta = eta;
  fit.q_c = eta / slope;
  fit.relative_residual = ss_tot > 0.0 ? std::sqrt(ss_res / ss_tot) : 0.0;
  fit.soc_span = span;
  return fit;
}

OcvFit identify_ocv(const Trajectory& traj, int degree, const OcvFitOptions& options) {
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    if (std::abs(traj.currents[k]) > options.quasi_static_threshold) continue;
    x.push_back(traj.soc_bulk[k]);
    y.push_back(traj.voltages[k] - options.r_0 * traj.currents[k] * options.area);
  }
  if (static_cast<int>(x.size()) < degree + 1) {
    throw InsufficientExcitation(
        fmt::format("OCV identification: {} quasi-static samples, need at least {}", x.size(), degree + 1));
  }
  OcvFit fit;
  fit.ocv = Polynomial::fit(x, y, degree);
  double ss = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - fit.ocv(x[k]);
    ss += r * r;
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(x.size()));
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  fit.soc_lo = *lo;
  fit.soc_hi = *hi;
  fit.monotone = fit.ocv.nondecreasing_on(fit.soc_lo, fit.soc_hi, 1e-3);
  fit.samples = static_cast<int>(x.size());
  return fit;
}

ResistanceFit identify_r0(const Trajectory& traj, double area, double pulse_threshold) {
  std::vector<double> estimates;
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const double di = traj.currents[k] - traj.currents[k - 1];
    if (std::abs(di) < pulse_threshold) continue;
    estimates.push_back((traj.voltages[k] - traj.voltages[k - 1]) / (di * area));
  }
  if (estimates.empty()) {
    throw InsufficientExcitation(
        fmt::format("resistance identification: no current step of magnitude >= {}", pulse_threshold));
  }
  ResistanceFit fit;
  fit.pulses = static_cast<int>(estimates.size());
  fit.r_0 = std::accumulate(estimates.begin(), estimates.end(), 0.0) / fit.pulses;
  double var = 0.0;
  for (double e : estimates) var += (e - fit.r_0) * (e - fit.r_0);
  fit.spread = std::sqrt(var / fit.pulses);
  return fit;
}

IdentificationReport identify(const Trajectory& traj, const IdentificationOptions& options) {
  IdentificationReport report;
  report.capacity = identify_capacity(traj, options.area, options.eta, options.min_capacity_span);
  report.resistance = identify_r0(traj, options.area, options.pulse_threshold);
  if (report.resistance.r_0 < 0.0) {
    report.warnings.push_back(fmt::format("identified r_0 = {:.6g} is negative; clamped to 0", report.resistance.r_0));
  }
  OcvFitOptions ocv_options;
  ocv_options.quasi_static_threshold = options.quasi_static_threshold;
  ocv_options.r_0 = std::max(0.0, report.resistance.r_0);
  ocv_options.area = options.area;
  report.ocv = identify_ocv(traj, options.ocv_degree, ocv_options);
  if (!report.ocv.monotone) report.warnings.push_back("fitted OCV is not monotone on the observed SoC range");

  report.params.eta = options.eta;
  report.params.q_c = report.capacity.q_c;
  report.params.r_0 = std::max(0.0, report.resistance.r_0);
  report.params.ocv = report.ocv.ocv;
  report.params.area = options.area;
  if (!report.params.ocv_monotone()) report.warnings.push_back("fitted OCV is not monotone on [0, 1]");
  return report;
}

}  // namespace fidgap::rint
