#pragma once

// Six-stage fidelity-gap attack case study on the SPM plant:
//   excitation -> Rint identification -> adversarial high-fidelity MPC run ->
//   inverse fit of the Rint controller weights -> closed-loop deployment -> evaluation.

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fidgap/ecm_rint.hpp"
#include "fidgap/inverse_pdp.hpp"
#include "fidgap/mpc_engine.hpp"
#include "fidgap/spm_model.hpp"
#include "fidgap/types.hpp"

namespace fidgap::attack {

/// Identification experiment: quasi-static charge sweep, current pulse train, then a
/// constant-current discharge. Rates are C-rates of the plant's areal capacity.
struct ExcitationProtocol {
  double sweep_c_rate = 1.0 / 25.0;
  double soc_lo = 0.02;
  double soc_hi = 0.98;
  int pulses = 6;
  double pulse_c_rate = 1.0;
  double pulse_seconds = 20.0;
  double rest_seconds = 120.0;
  double discharge_c_rate = 0.5;
  double voltage_noise = 0.0;  // V, standard deviation, drawn from the run seed

  void validate() const;
  friend bool operator==(const ExcitationProtocol&, const ExcitationProtocol&) = default;
};

/// Plant defaults for the case study: 20 s control period built from 1 s diffusion steps.
spm::SpmParams case_study_spm();

struct PipelineConfig {
  spm::SpmParams spm = case_study_spm();
  std::optional<rint::RintParams> rint_override;
  double area = 1.0;  // m^2
  int horizon = 10;
  int steps = 200;
  Limits limits;
  double soc_target = 0.8;
  double soc_init = 0.25;
  double i_init = 0.0;          // A
  double slack_weight = 1e4;
  double control_scale = 0.0;   // A; 0 selects the plant's 1C current
  ThetaParams theta_h{0.99, 0.01};
  ThetaParams theta0{1.0, 1.0};
  inverse::FitSchedule fit;
  inverse::Anchoring anchoring = inverse::Anchoring::replay;
  ExcitationProtocol excitation;
  rint::IdentificationOptions identification;
  std::uint64_t seed = 0;
  double audit_tol = 1e-6;

  void validate() const;
  double one_c_current() const;        // A
  double resolved_control_scale() const;  // A
  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// Canonical text of every field that influences a run except the attack level.
std::string fingerprint(const PipelineConfig& config);

struct ClosedLoopRun {
  spm::Trajectory traj;
  Eigen::VectorXd increments;  // applied control per step, A
  int softened_steps = 0;
  int max_iter_steps = 0;
};

spm::Trajectory excitation_trajectory(const spm::SpmParams& params, const ExcitationProtocol& protocol,
                                      double area, std::uint64_t seed);

/// High-fidelity MPC on the SPM plant; adversarial when `gamma` is set.
ClosedLoopRun run_high_fidelity(const PipelineConfig& config, const std::optional<AttackLevel>& gamma);

/// Rint MPC with weights `theta` driving the SPM plant, observing bulk SoC and the applied current.
ClosedLoopRun run_low_fidelity(const PipelineConfig& config, const rint::RintParams& rint, const ThetaParams& theta);

/// Replay-anchored (or free-rolling) fitting scenario built on a recorded SPM run.
inverse::Scenario fitting_scenario(const PipelineConfig& config, const rint::RintParams& rint,
                                   const spm::Trajectory& reference);

struct Satisfaction {
  std::vector<double> surf;
  std::vector<double> bulk;
  std::vector<double> threshold;
  std::vector<bool> satisfied;
  int count = 0;

  double margin(std::size_t k) const { return surf[k] - bulk[k] - threshold[k]; }
  double mean_positive_margin() const;
};

Satisfaction evaluate_satisfaction(const spm::Trajectory& traj, const AttackLevel& gamma);

struct StealthViolation {
  int step = 0;
  std::string constraint;
  double margin = 0.0;  // amount by which the bound is exceeded
};

/// Audits bulk SoC, current and Rint voltage against the limits on the defender's view.
/// Trajectory currents are densities; `area` converts them to amperes.
std::vector<StealthViolation> stealth_audit(const spm::Trajectory& traj, const rint::RintParams& rint,
                                            const Limits& limits, double area, double tol = 1e-6);

/// Stages shared by every attack level.
struct Baseline {
  spm::Trajectory excitation;
  rint::IdentificationReport identification;
  rint::RintParams rint;
  ClosedLoopRun benign;
  ThetaParams theta_nominal;
  inverse::FitReport nominal_fit;
  ClosedLoopRun nominal;
};

struct AttackReport {
  AttackLevel level;
  std::string config_fingerprint;
  std::shared_ptr<const Baseline> baseline;
  ClosedLoopRun adversarial;
  Eigen::VectorXd u_adv;
  ThetaParams theta_star;
  inverse::FitReport fit;
  ClosedLoopRun compromised;
  Satisfaction satisfaction;          // compromised run
  Satisfaction nominal_satisfaction;  // nominal run, same level
  Satisfaction adversarial_satisfaction;
  std::vector<StealthViolation> stealth_violations;
  std::vector<StealthViolation> nominal_violations;
  std::vector<std::string> completed_stages;

  int satisfied_count() const { return satisfaction.count; }
};

class StageFailure : public std::runtime_error {
 public:
  StageFailure(std::string stage, const std::string& what, std::shared_ptr<AttackReport> partial)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), partial_(std::move(partial)) {}
  const std::string& stage() const { return stage_; }
  const std::shared_ptr<AttackReport>& partial() const { return partial_; }

 private:
  std::string stage_;
  std::shared_ptr<AttackReport> partial_;
};

std::shared_ptr<const Baseline> prepare_baseline(const PipelineConfig& config);
AttackReport run_dstab(const PipelineConfig& config, const AttackLevel& level);
AttackReport run_dstab(const PipelineConfig& config, const AttackLevel& level,
                       std::shared_ptr<const Baseline> baseline);

struct LevelRow {
  std::string label;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  int satisfied_count = 0;
  int nominal_count = 0;
  double mean_positive_margin = 0.0;
  double fit_loss = 0.0;
  std::string config_fingerprint;
};

LevelRow summarize(const AttackReport& report);

struct LevelComparison {
  std::vector<LevelRow> rows;  // ordered by (gamma1, gamma2)
  bool monotone = true;        // satisfied_count non-increasing along the rows
};

LevelComparison compare_levels(std::vector<LevelRow> rows);
LevelComparison compare_levels(const std::vector<AttackReport>& reports);

}  // namespace fidgap::attack
