#pragma once

// Speed measure and limiting acceptance curve of the Langevin limit:
//   v(ell) = 2 ell^2 Phi(-ell sqrt(E_R) / 2),   a(ell) = 2 Phi(-ell sqrt(E_R) / 2).

#include "optscale/normal.hpp"

#include <cmath>

namespace optscale {

template <typename Scalar>
Scalar limiting_acceptance(Scalar ell, Scalar e_r) {
  using std::sqrt;
  return Scalar(2) * normal_cdf(-ell * sqrt(e_r) / Scalar(2));
}

template <typename Scalar>
Scalar speed(Scalar ell, Scalar e_r) {
  return ell * ell * limiting_acceptance(ell, e_r);
}

}  // namespace optscale
