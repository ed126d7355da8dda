#pragma once

// Single-particle lithium-ion model: Fickian diffusion in one spherical particle
// per electrode, discretized on evenly spaced radial nodes (center -> surface)
// and advanced with explicit Euler steps.
//
// Sign convention: positive current charges the cell (anode lithiates).
// Currents are densities in A/m^2 of electrode area.

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

#include "fidgap/polynomial.hpp"

namespace fidgap::spm {

inline constexpr int kNodes = 10;

/// A value computed from a curve that may have been evaluated at a clamped argument.
struct Reading {
  double value = 0.0;
  bool clamped = false;
};

/// Electrode open-circuit potential as a polynomial in stoichiometry on a fitted domain.
struct OcvCurve {
  Polynomial poly;
  double domain_lo = 0.0;
  double domain_hi = 1.0;

  Reading evaluate(double stoichiometry) const;
  double slope(double stoichiometry) const;
  double curvature(double stoichiometry) const;

  friend bool operator==(const OcvCurve&, const OcvCurve&) = default;
};

struct VoltageModel {
  OcvCurve ocv_pos;
  OcvCurve ocv_neg;
  double r_lumped = 0.0;  // Ohm m^2

  friend bool operator==(const VoltageModel&, const VoltageModel&) = default;
};

/// Stoichiometry window used to initialize the cathode from an anode state of charge.
/// The cathode is full (pos_max) when the anode sits at neg_min and vice versa.
struct StoichiometryWindow {
  double neg_min = 0.0;
  double neg_max = 1.0;
  double pos_min = 0.4;
  double pos_max = 0.99;

  friend bool operator==(const StoichiometryWindow&, const StoichiometryWindow&) = default;
};

struct SpmParams {
  double d_s_pos = 0.0;    // m^2/s
  double d_s_neg = 0.0;    // m^2/s
  double r_s = 0.0;        // m
  double a_pos = 0.0;      // 1/m
  double a_neg = 0.0;      // 1/m
  double l_pos = 0.0;      // m
  double l_neg = 0.0;      // m
  double faraday = 96485.33212;
  double c_max_pos = 0.0;  // mol/m^3
  double c_max_neg = 0.0;  // mol/m^3
  int n_nodes = kNodes;
  double dt = 1.0;         // s, diffusion step
  int substeps = 1;        // diffusion steps per control period
  StoichiometryWindow window;
  VoltageModel voltage;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Physical checks only; allows node counts other than kNodes (refinement studies).
  void validate_physics() const;

  double node_spacing() const { return r_s / (n_nodes - 1); }
  double node_radius(int i) const { return i * node_spacing(); }
  double control_period() const { return dt * substeps; }
  /// Analytic bulk-SoC change per second per unit current density (1/(A/m^2 s)).
  double coulomb_rate() const;
  /// Charge per unit area stored between bulk SoC 0 and 1 (C/m^2).
  double areal_capacity() const { return 1.0 / coulomb_rate(); }

  friend bool operator==(const SpmParams&, const SpmParams&) = default;
};

/// Parameter set loosely following the published SPMeT LCO/graphite cell, with
/// polynomial electrode OCV curves. Values are defaults, not measurements.
SpmParams default_params();

/// Raised when the explicit Euler step violates the positivity/stability bound.
class StabilityError : public std::invalid_argument {
 public:
  StabilityError(const std::string& what, double max_dt)
      : std::invalid_argument(what), max_dt_(max_dt) {}
  double max_dt() const { return max_dt_; }

 private:
  double max_dt_;
};

struct SpmState {
  Eigen::VectorXd conc;  // [anode center..surface, cathode center..surface]
  double i_prev = 0.0;   // A/m^2 applied during the previous step
};

/// One electrode's explicit update c' = c + a c + b I.
struct ElectrodeOperator {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
};

struct DiffusionOperators {
  ElectrodeOperator neg;
  ElectrodeOperator pos;
  double period = 0.0;  // seconds covered by one application
  int nodes = kNodes;
  double c_max_neg = 0.0;
  double c_max_pos = 0.0;
};

/// Largest dt for which every diagonal entry of I + A_diff stays non-negative.
double max_stable_dt(const SpmParams& params);

/// Per-dt operators. Interior rows use half-node radii so that the
/// trapezoid-weighted anode inventory is conserved exactly at zero current.
DiffusionOperators build_diffusion_operators(const SpmParams& params);

/// Operators for `substeps` consecutive steps at constant current.
DiffusionOperators compose(const DiffusionOperators& ops, int substeps);

/// compose(build_diffusion_operators(p), p.substeps)
DiffusionOperators control_operators(const SpmParams& params);

/// Applies current i_prev + delta_i for one operator period.
SpmState step(const SpmState& state, double delta_i, const DiffusionOperators& ops);

bool concentrations_in_range(const SpmState& state, const DiffusionOperators& ops,
                             double rel_tol = 1e-9);

/// Row vector mapping the full concentration vector to bulk SoC.
Eigen::RowVectorXd bulk_soc_row(const SpmParams& params);
/// Trapezoid rule applied to 3 r^2/R^3 over the nodes; exceeds 1 by the quadrature defect.
double quadrature_sum(const SpmParams& params);

double bulk_soc(const SpmState& state, const SpmParams& params);
double surf_soc(const SpmState& state, const SpmParams& params);

/// U_pos(surface) - U_neg(surface) + r_lumped * i_applied.
Reading terminal_voltage(const SpmState& state, double i_applied, const SpmParams& params);

double cathode_stoichiometry(double anode_stoichiometry, const StoichiometryWindow& window);

/// Uniform particles with bulk SoC equal to `initial_soc`; cathode from the window.
SpmState initial_state(const SpmParams& params, double initial_soc, double i_init = 0.0);

struct Trajectory {
  std::vector<double> times;
  std::vector<SpmState> states;   // may be empty for externally generated data
  std::vector<double> currents;   // A/m^2 applied from this sample to the next
  std::vector<double> voltages;
  std::vector<double> soc_bulk;
  std::vector<double> soc_surf;
  std::vector<int> flagged;       // sample indices with range or OCV-domain audit flags

  std::size_t size() const { return times.size(); }
  void append(double time, const SpmState& state, double current, const SpmParams& params);
};

/// Rolls the model through `current_profile` (absolute currents, one per control period).
Trajectory simulate(const SpmParams& params, double initial_soc,
                    const std::vector<double>& current_profile, double i_init = 0.0);

}  // namespace fidgap::spm
