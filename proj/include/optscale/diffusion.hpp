#pragma once

// The one-dimensional Langevin limit dZ = v^{1/2} dB + (v/2) (log f)'(Z) dt
// and the numerics around it.

#include "optscale/density.hpp"
#include "optscale/rng.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

namespace optscale {

struct DiffusionParams {
  double v = 1.0;
  DensityFamily family = DensityFamily::normal();
  double dt = 0.01;
};

class DiffusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpeedOptimum {
  double ell_star = 0.0;
  double v_star = 0.0;
};

/// Golden section on [0, 10 / sqrt(e_r)] to 1e-10; throws std::logic_error if
/// the result is not within 0.01 of 2.38 / sqrt(e_r).
SpeedOptimum maximize_speed(double e_r);

/// z_{k+1} = z_k + (v/2) (log f)'(z_k) dt + sqrt(v dt) N(0,1). Returns the
/// n_steps + 1 states z_0..z_n. Requires v >= 0 and dt v <= 0.1.
std::vector<double> euler_maruyama(const DiffusionParams& p, double z0, std::int64_t n_steps, Rng& rng);

/// Sample autocorrelation of an equally spaced series at integer lag k
/// (mean and variance estimated from the series). NaN for a constant series.
double autocorrelation(std::span<const double> values, std::size_t lag);

/// exp(-v tau / (2 sigma^2)): lag-tau autocorrelation of the OU limit for a
/// normal f with scale sigma.
double ou_autocorrelation(double v, double tau, double sigma = 1.0);

struct AcfPoint {
  double tau = 0.0;       // requested lag
  double tau_used = 0.0;  // nearest multiple of the series spacing
  double empirical = 0.0;
  double theory = 0.0;
};

/// ACF of a series with spacing `h` at the requested lags, paired with the OU
/// curve for speed v.
std::vector<AcfPoint> acf_against_ou(std::span<const double> values, double h, const std::vector<double>& lags,
                                     double v, double sigma = 1.0);

void write_trajectory_csv(std::ostream& os, std::span<const double> times, std::span<const double> values);
/// Columns ell, a_theory, v_theory.
void write_speed_curve_csv(std::ostream& os, const std::vector<double>& ells, double e_r);

}  // namespace optscale
