#include "doctest.h"
#include "fidgap/polynomial.hpp"

#include <vector>

using fidgap::Polynomial;

TEST_CASE("evaluation and derivatives use ascending powers") {
  const Polynomial p({1.0, -2.0, 3.0});  // 1 - 2x + 3x^2
  CHECK(p(0.0) == 1.0);
  CHECK(p(2.0) == doctest::Approx(9.0));
  CHECK(p.derivative(2.0) == doctest::Approx(10.0));
  CHECK(p.second_derivative(-7.0) == doctest::Approx(6.0));
  CHECK(p.degree() == 2);
  CHECK(Polynomial().empty());
}

TEST_CASE("least-squares fit recovers an exact polynomial") {
  const Polynomial truth({3.4, 0.9, -0.4, 0.25});
  std::vector<double> x, y;
  for (int i = 0; i <= 50; ++i) {
    x.push_back(i / 50.0);
    y.push_back(truth(x.back()));
  }
  const auto fit = Polynomial::fit(x, y, 3);
  for (int k = 0; k <= 3; ++k) CHECK(fit.coefficients()[k] == doctest::Approx(truth.coefficients()[k]).epsilon(1e-10));
  CHECK_THROWS(Polynomial::fit(x, y, -1));
  CHECK_THROWS(Polynomial::fit(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 1.0}, 4));
}

TEST_CASE("monotonicity audit") {
  CHECK(Polynomial({0.0, 1.0}).nondecreasing_on(0.0, 1.0));
  CHECK_FALSE(Polynomial({0.0, 0.0, -1.0}).nondecreasing_on(0.0, 1.0));
  CHECK(Polynomial({2.0}).nondecreasing_on(0.0, 1.0));
  // (x - 0.5)^2 dips then rises
  CHECK_FALSE(Polynomial({0.25, -1.0, 1.0}).nondecreasing_on(0.0, 1.0));
  CHECK(Polynomial({0.25, -1.0, 1.0}).nondecreasing_on(0.5, 1.0));
}
