#pragma once

// Reference computations that share no code with the library.

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

inline double bisect(const std::function<double(double)>& g, double lo, double hi, double tol = 1e-13) {
  double glo = g(lo);
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if ((gm > 0) == (glo > 0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Phi through the series of erf, independent of std::erfc.
inline double phi_series(double x) {
  const double z = x / std::sqrt(2.0);
  double term = z;
  double sum = z;
  for (int n = 1; n < 200; ++n) {
    term *= -z * z / n;
    sum += term / (2 * n + 1);
  }
  return 0.5 + sum / std::sqrt(M_PI);
}

inline double normal_density(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

inline double logistic_density(double x) {
  const double e = std::exp(-std::abs(x));
  return e / ((1.0 + e) * (1.0 + e));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1) / n)};
}

}  // namespace oracle
