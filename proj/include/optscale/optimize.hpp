#pragma once

#include <cmath>
#include <stdexcept>

namespace optscale {

template <typename Scalar>
struct ScalarOptimum {
  Scalar argmax;
  Scalar value;
  int iterations;
};

/// Golden-section search for the maximum of a unimodal function on [lo, hi].
/// Stops once the bracket is narrower than `tol`.
template <typename Scalar, typename F>
ScalarOptimum<Scalar> golden_section_maximize(F&& f, Scalar lo, Scalar hi, Scalar tol,
                                              int max_iterations = 500) {
  if (!(hi > lo)) throw std::invalid_argument("golden_section_maximize: empty bracket");
  const Scalar inv_phi = (std::sqrt(Scalar(5)) - Scalar(1)) / Scalar(2);
  Scalar a = lo;
  Scalar b = hi;
  Scalar c = b - inv_phi * (b - a);
  Scalar d = a + inv_phi * (b - a);
  Scalar fc = f(c);
  Scalar fd = f(d);
  int it = 0;
  while (b - a > tol && it < max_iterations) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
    ++it;
  }
  const Scalar x = (a + b) / Scalar(2);
  return {x, f(x), it};
}

}  // namespace optscale
