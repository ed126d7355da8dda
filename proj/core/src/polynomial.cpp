#include "fidgap/polynomial.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace fidgap {

Polynomial::Polynomial(std::vector<double> coefficients) : coeffs_(std::move(coefficients)) {}

double Polynomial::operator()(double x) const {
  double acc = 0.0;
  for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double Polynomial::derivative(double x) const {
  double acc = 0.0;
  for (int k = degree(); k >= 1; --k) acc = acc * x + k * coeffs_[k];
  return acc;
}

double Polynomial::second_derivative(double x) const {
  double acc = 0.0;
  for (int k = degree(); k >= 2; --k) acc = acc * x + k * (k - 1) * coeffs_[k];
  return acc;
}

Polynomial Polynomial::fit(std::span<const double> x, std::span<const double> y, int degree) {
  if (degree < 0) throw std::invalid_argument("polynomial degree must be non-negative");
  if (x.size() != y.size()) throw std::invalid_argument("polynomial fit: x/y size mismatch");
  const auto n = static_cast<Eigen::Index>(x.size());
  if (n < degree + 1) throw std::invalid_argument("polynomial fit: not enough samples for degree");

  Eigen::MatrixXd vander(n, degree + 1);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int k = 0; k <= degree; ++k) {
      vander(i, k) = p;
      p *= x[i];
    }
    rhs(i) = y[i];
  }
  const Eigen::VectorXd c = vander.colPivHouseholderQr().solve(rhs);
  return Polynomial(std::vector<double>(c.data(), c.data() + c.size()));
}

bool Polynomial::nondecreasing_on(double lo, double hi, double resolution) const {
  if (!(hi > lo)) return true;
  const int samples = static_cast<int>(std::ceil((hi - lo) / resolution));
  double prev = (*this)(lo);
  for (int i = 1; i <= samples; ++i) {
    const double x = std::min(hi, lo + i * resolution);
    const double v = (*this)(x);
    // allow round-off on flat segments
    if (v < prev - 1e-12 * (1.0 + std::abs(prev))) return false;
    prev = v;
  }
  return true;
}

}  // namespace fidgap
