#pragma once

#include <cmath>
#include <numbers>

namespace optscale {

/// Standard normal CDF through the complementary error function, so the lower
/// tail keeps full relative accuracy.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  using std::erfc;
  return Scalar(0.5) * erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  using std::exp;
  return exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
         std::numbers::sqrt2_v<Scalar>;
}

/// Callable wrapper, used wherever a CDF may be injected.
struct StandardNormalCdf {
  double operator()(double x) const { return normal_cdf(x); }
};

}  // namespace optscale
