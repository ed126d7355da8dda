#pragma once

// Randomized consistency check of pdp_gradient against central finite differences
// on small Rint fitting problems.

#include <Eigen/Core>
#include <cstdint>

#include "fidgap/inverse_pdp.hpp"

namespace fidgap::inverse {

struct GradientCase {
  std::uint64_t seed = 0;
  Scenario scenario;
  Eigen::VectorXd u_ref;  // reference controls the loss is measured against
  ThetaParams theta;      // evaluation point
};

/// Random Rint plant, horizon, anchoring and weights drawn from `seed`. The reference is the
/// closed-loop response under other weights plus a perturbation, so the loss is nonzero.
GradientCase random_gradient_case(std::uint64_t seed);

struct GradientCheck {
  std::uint64_t seed = 0;
  Eigen::Vector2d pdp = Eigen::Vector2d::Zero();
  Eigen::Vector2d fd = Eigen::Vector2d::Zero();
  double rel_error = 0.0;  // |pdp - fd| / max(|fd|, 1e-12)
  double loss = 0.0;
  int fallback_steps = 0;
};

GradientCheck check_gradient(const GradientCase& c, double h = 1e-6);

}  // namespace fidgap::inverse
