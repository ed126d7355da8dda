#pragma once

// CSV and JSON persistence for trajectories, identification results and attack reports.
//
// Trajectory CSV: time_s, current_A_per_m2, voltage_V, soc_bulk, soc_surf, conc_1..conc_20
//   (conc_1..conc_10 anode center to surface, conc_11..conc_20 cathode, mol/m^3).
// Satisfaction CSV: step, surf, bulk, threshold, satisfied (0/1).
// Fit CSV: iteration, q, r, loss, grad_norm, step.
// Stealth CSV: step, constraint, margin.
// Controls CSV: step, u_adv_A.
// Numbers are written with 17 significant digits so files reload bit-exactly.

#include <Eigen/Core>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fidgap/attack_pipeline.hpp"
#include "fidgap/ecm_rint.hpp"
#include "fidgap/spm_model.hpp"

namespace fidgap::io {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_trajectory_csv(const std::filesystem::path& path, const spm::Trajectory& traj);

/// Accepts files with or without the concentration columns; states are rebuilt when present.
spm::Trajectory read_trajectory_csv(const std::filesystem::path& path);

/// Current profile for `simulate`: the `current_A_per_m2` column if a header names it,
/// otherwise the first column. One value per control period.
std::vector<double> read_profile_csv(const std::filesystem::path& path);

void write_satisfaction_csv(const std::filesystem::path& path, const attack::Satisfaction& s);
void write_fit_csv(const std::filesystem::path& path, const inverse::FitReport& fit);
void write_stealth_csv(const std::filesystem::path& path, const std::vector<attack::StealthViolation>& v);
void write_controls_csv(const std::filesystem::path& path, const Eigen::VectorXd& u);

std::string identification_json(const rint::IdentificationReport& report);

/// Writes summary.json, CSVs and SVG plots into `dir` (created if needed).
/// Missing pieces of a partial report are skipped.
void write_report_dir(const std::filesystem::path& dir, const attack::AttackReport& report);

/// Reads the comparison row back from `<dir>/summary.json`.
attack::LevelRow read_summary(const std::filesystem::path& dir);

}  // namespace fidgap::io
