#pragma once

#include <string>

namespace fidgap {

/// Quadratic cost weights: q on SoC tracking, r on the current increment.
struct ThetaParams {
  double q = 1.0;
  double r = 1.0;

  void validate() const;
  double ratio() const { return q / r; }
  friend bool operator==(const ThetaParams&, const ThetaParams&) = default;
};

/// Adversarial gradient threshold: surf - bulk >= gamma1 * bulk + gamma2.
struct AttackLevel {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  std::string label = "custom";

  void validate() const;
  double threshold(double soc_bulk) const { return gamma1 * soc_bulk + gamma2; }
  friend bool operator==(const AttackLevel&, const AttackLevel&) = default;

  static AttackLevel low() { return {1e-2, 5e-4, "low"}; }
  static AttackLevel medium() { return {4e-2, 1e-3, "medium"}; }
  static AttackLevel high() { return {8e-2, 2e-3, "high"}; }
  /// "low" | "medium" | "high"; throws std::invalid_argument otherwise.
  static AttackLevel named(const std::string& label);
};

/// Defender-visible operating limits. current_max is in amperes.
struct Limits {
  double soc_max = 0.85;
  double current_max = 60.0;
  double voltage_max = 4.2;

  void validate() const;
  friend bool operator==(const Limits&, const Limits&) = default;
};

}  // namespace fidgap
