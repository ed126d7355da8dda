#include "fidgap/types.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace fidgap {

void ThetaParams::validate() const {
  if (!std::isfinite(q) || !std::isfinite(r)) throw std::invalid_argument("theta: q and r must be finite");
  if (q < 0.0 || r < 0.0) throw std::invalid_argument(fmt::format("theta: weights must be >= 0 (q={}, r={})", q, r));
  if (!(q + r > 0.0)) throw std::invalid_argument("theta: q + r must be > 0");
}

void AttackLevel::validate() const {
  if (!(gamma1 >= 0.0) || !(gamma2 >= 0.0) || !std::isfinite(gamma1) || !std::isfinite(gamma2)) {
    throw std::invalid_argument(fmt::format("attack level '{}': gamma1 and gamma2 must be finite and >= 0", label));
  }
}

AttackLevel AttackLevel::named(const std::string& label) {
  if (label == "low") return low();
  if (label == "medium") return medium();
  if (label == "high") return high();
  throw std::invalid_argument(fmt::format("unknown attack level '{}' (expected low, medium or high)", label));
}

void Limits::validate() const {
  if (!(soc_max > 0.0)) throw std::invalid_argument("limits: SoC_max must be > 0");
  if (!(current_max > 0.0)) throw std::invalid_argument("limits: I_max must be > 0");
  if (!(voltage_max > 0.0)) throw std::invalid_argument("limits: V_max must be > 0");
}

}  // namespace fidgap
