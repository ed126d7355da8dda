#pragma once

// Rint equivalent-circuit model (OCV source in series with one resistance) and
// identification of its parameters from single-particle simulation data.

#include <stdexcept>
#include <string>
#include <vector>

#include "fidgap/polynomial.hpp"
#include "fidgap/spm_model.hpp"

namespace fidgap::rint {

using spm::Reading;
using spm::Trajectory;

struct RintParams {
  double eta = 1.0;   // Coulombic efficiency
  double q_c = 0.0;   // capacity, coulombs
  double r_0 = 0.0;   // Ohm
  Polynomial ocv;     // SoC -> volts
  double area = 1.0;  // m^2, converts plant current density to amperes

  void validate() const;
  /// Audit: ocv nondecreasing on [0, 1] at 1e-3 resolution.
  bool ocv_monotone() const { return ocv.nondecreasing_on(0.0, 1.0, 1e-3); }
  double capacity_ah() const { return q_c / 3600.0; }

  friend bool operator==(const RintParams&, const RintParams&) = default;
};

struct EcmState {
  double soc = 0.0;
  double i_prev = 0.0;  // A
};

inline constexpr double kSocTolerance = 1e-6;

EcmState step_soc(const EcmState& state, double delta_i, const RintParams& params, double dt);

/// ocv(soc) + r_0 * i_total; soc outside [0, 1] is clamped and flagged.
Reading terminal_voltage(const EcmState& state, double i_total, const RintParams& params);

class InsufficientExcitation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CapacityFit {
  double q_c = 0.0;
  double eta = 1.0;
  double relative_residual = 0.0;
  double soc_span = 0.0;
};

/// Least-squares slope of bulk-SoC change against cumulative charge (A s).
CapacityFit identify_capacity(const Trajectory& traj, double area, double eta = 1.0,
                              double min_span = 0.5);

struct OcvFitOptions {
  double quasi_static_threshold = 2.0;  // A/m^2; samples with larger |I| are ignored
  double r_0 = 0.0;                     // subtract r_0 * I * area before fitting
  double area = 1.0;
};

struct OcvFit {
  Polynomial ocv;
  double rms_residual = 0.0;
  bool monotone = true;
  double soc_lo = 0.0;
  double soc_hi = 0.0;
  int samples = 0;
};

OcvFit identify_ocv(const Trajectory& traj, int degree, const OcvFitOptions& options = {});

struct ResistanceFit {
  double r_0 = 0.0;
  int pulses = 0;
  double spread = 0.0;  // standard deviation across pulses
};

/// Mean of dV/dI across current steps of magnitude >= pulse_threshold (A/m^2).
ResistanceFit identify_r0(const Trajectory& traj, double area, double pulse_threshold);

struct IdentificationOptions {
  double area = 1.0;
  double eta = 1.0;
  int ocv_degree = 7;
  double quasi_static_threshold = 2.0;
  double pulse_threshold = 10.0;
  double min_capacity_span = 0.5;

  friend bool operator==(const IdentificationOptions&, const IdentificationOptions&) = default;
};

struct IdentificationReport {
  CapacityFit capacity;
  ResistanceFit resistance;
  OcvFit ocv;
  RintParams params;
  std::vector<std::string> warnings;
};

/// Capacity, then internal resistance, then the r_0-compensated OCV curve.
IdentificationReport identify(const Trajectory& traj, const IdentificationOptions& options);

}  // namespace fidgap::rint
