#include "optscale/diffusion.hpp"

#include "optscale/format.hpp"
#include "optscale/optimize.hpp"
#include "optscale/speed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace optscale {

SpeedOptimum maximize_speed(double e_r) {
  if (!(e_r > 0.0) || !std::isfinite(e_r)) throw std::invalid_argument("maximize_speed: e_r must be positive");
  const double hi = 10.0 / std::sqrt(e_r);
  const auto best = golden_section_maximize<double>([&](double ell) { return speed(ell, e_r); }, 0.0, hi, 1e-10);
  // argmax * sqrt(e_r) is the dimensionless u-hat
  if (std::abs(best.argmax * std::sqrt(e_r) - 2.38) > 0.01) {
    throw std::logic_error("maximize_speed: optimum " + format_double(best.argmax) + " disagrees with 2.38/sqrt(e_r)");
  }
  return {best.argmax, best.value};
}

std::vector<double> euler_maruyama(const DiffusionParams& p, double z0, std::int64_t n_steps, Rng& rng) {
  if (!(p.v >= 0.0) || !std::isfinite(p.v)) throw DiffusionError("euler_maruyama: v must be finite and >= 0");
  if (!(p.dt > 0.0)) throw DiffusionError("euler_maruyama: dt must be positive");
  if (p.dt * p.v > 0.1) throw DiffusionError("euler_maruyama: dt * v > 0.1, reduce dt");
  if (n_steps < 0) throw DiffusionError("euler_maruyama: negative step count");
  if (!std::isfinite(z0)) throw DiffusionError("euler_maruyama: non-finite start");

  std::vector<double> z(static_cast<std::size_t>(n_steps) + 1);
  z[0] = z0;
  const double half_v_dt = 0.5 * p.v * p.dt;
  const double noise = std::sqrt(p.v * p.dt);
  Gaussian gauss;
  for (std::int64_t k = 0; k < n_steps; ++k) {
    const double x = z[static_cast<std::size_t>(k)];
    const double next = x + half_v_dt * p.family.dlog_f(x) + noise * gauss(rng);
    if (!std::isfinite(next)) {
      throw DiffusionError("euler_maruyama: state became non-finite at step " + std::to_string(k + 1));
    }
    z[static_cast<std::size_t>(k) + 1] = next;
  }
  return z;
}

double autocorrelation(std::span<const double> values, std::size_t lag) {
  const std::size_t n = values.size();
  if (lag >= n) throw std::invalid_argument("autocorrelation: lag exceeds series length");
  // the rounded mean of a constant series need not equal its value
  if (std::ranges::all_of(values, [&](double v) { return v == values[0]; })) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  if (var == 0.0) return std::numeric_limits<double>::quiet_NaN();
  double cov = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) cov += (values[t] - mean) * (values[t + lag] - mean);
  return cov / var;
}

double ou_autocorrelation(double v, double tau, double sigma) {
  return std::exp(-v * tau / (2.0 * sigma * sigma));
}

std::vector<AcfPoint> acf_against_ou(std::span<const double> values, double h, const std::vector<double>& lags,
                                     double v, double sigma) {
  if (!(h > 0.0)) throw std::invalid_argument("acf_against_ou: spacing must be positive");
  std::vector<AcfPoint> out;
  for (double tau : lags) {
    const auto k = static_cast<std::size_t>(std::llround(tau / h));
    AcfPoint pt;
    pt.tau = tau;
    pt.tau_used = static_cast<double>(k) * h;
    pt.empirical = autocorrelation(values, k);
    pt.theory = ou_autocorrelation(v, pt.tau_used, sigma);
    out.push_back(pt);
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, std::span<const double> times, std::span<const double> values) {
  if (times.size() != values.size()) throw std::invalid_argument("write_trajectory_csv: length mismatch");
  os << "t,z\n";
  for (std::size_t k = 0; k < times.size(); ++k) os << format_double(times[k]) << ',' << format_double(values[k]) << '\n';
}

void write_speed_curve_csv(std::ostream& os, const std::vector<double>& ells, double e_r) {
  os << "ell,a_theory,v_theory\n";
  for (double ell : ells) {
    os << format_double(ell) << ',' << format_double(limiting_acceptance(ell, e_r)) << ','
       << format_double(speed(ell, e_r)) << '\n';
  }
}

}  // namespace optscale
