#pragma once

#include <span>
#include <vector>

namespace fidgap {

/// Dense polynomial in ascending-power form, c0 + c1 x + c2 x^2 + ...
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::vector<double> coefficients);

  double operator()(double x) const;
  double derivative(double x) const;
  double second_derivative(double x) const;

  int degree() const { return static_cast<int>(coeffs_.size()) - 1; }
  const std::vector<double>& coefficients() const { return coeffs_; }
  bool empty() const { return coeffs_.empty(); }

  /// Least-squares fit of the given degree (Householder QR on the Vandermonde matrix).
  static Polynomial fit(std::span<const double> x, std::span<const double> y, int degree);

  /// True when the polynomial is nondecreasing on [lo, hi] sampled at `resolution`.
  bool nondecreasing_on(double lo, double hi, double resolution = 1e-3) const;

  friend bool operator==(const Polynomial&, const Polynomial&) = default;

 private:
  std::vector<double> coeffs_;
};

}  // namespace fidgap
