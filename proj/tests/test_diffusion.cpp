#include "oracles.hpp"

#include <doctest.h>

#include "optscale/diffusion.hpp"
#include "optscale/speed.hpp"

#include <cmath>
#include <sstream>

using namespace optscale;

namespace {

// Batch means of a correlated series.
oracle::MeanSe batch_mean(const std::vector<double>& v, std::size_t batches, double (*fn)(double)) {
  std::vector<double> b;
  const std::size_t per = v.size() / batches;
  for (std::size_t k = 0; k < batches; ++k) {
    double s = 0.0;
    for (std::size_t i = k * per; i < (k + 1) * per; ++i) s += fn(v[i]);
    b.push_back(s / static_cast<double>(per));
  }
  return oracle::mean_se(b);
}

double identity(double x) { return x; }
double square(double x) { return x * x; }

}  // namespace

TEST_CASE("speed and limiting acceptance") {
  CHECK(speed(0.0, 1.0) == 0.0);
  CHECK(limiting_acceptance(0.0, 1.0) == 1.0);
  CHECK(limiting_acceptance(2.38, 1.0) == doctest::Approx(2.0 * oracle::phi_series(-1.19)).epsilon(1e-12));
  CHECK(limiting_acceptance(2.38, 1.0) == doctest::Approx(0.2340).epsilon(5e-4));
  CHECK(speed(2.38, 1.0) == doctest::Approx(1.326).epsilon(1e-3));
  for (double ell : {0.3, 1.0, 2.38, 5.0}) {
    for (double e : {0.25, 3.0, 40.0}) {
      CHECK(speed(ell, e) == doctest::Approx(speed(ell * std::sqrt(e), 1.0) / e).epsilon(1e-12));
    }
  }
  // normal_cdf against the independent series on [-5, 5]
  for (double x = -5.0; x <= 5.0; x += 0.25) CHECK(normal_cdf(x) == doctest::Approx(oracle::phi_series(x)).epsilon(1e-12));
}

TEST_CASE("shape of the speed curve") {
  double prev_a = 2.0;
  double best = 0.0;
  int peaks = 0;
  double prev_v = -1.0;
  bool rising = true;
  for (double ell = 0.0; ell <= 12.0; ell += 0.01) {
    const double a = limiting_acceptance(ell, 1.0);
    const double v = speed(ell, 1.0);
    CHECK(a < prev_a);
    prev_a = a;
    if (rising && v < prev_v) {
      rising = false;
      ++peaks;
    } else if (!rising && v > prev_v) {
      ++peaks;
    }
    prev_v = v;
    best = std::max(best, v);
  }
  CHECK(peaks == 1);
  CHECK(speed(30.0, 1.0) < 1e-6);
}

TEST_CASE("maximize_speed") {
  const auto one = maximize_speed(1.0);
  CHECK(one.ell_star >= 2.37);
  CHECK(one.ell_star <= 2.39);
  CHECK(one.v_star == doctest::Approx(1.33).epsilon(0.005));
  const double u = one.ell_star;
  CHECK(std::abs(4.0 * normal_cdf(-u / 2.0) - u * normal_pdf(u / 2.0)) < 1e-8);
  CHECK(maximize_speed(100.0).ell_star == doctest::Approx(one.ell_star / 10.0).epsilon(1e-8));
  for (double e = 1e-2; e <= 1e2 * 1.0001; e *= std::sqrt(10.0)) {
    const auto opt = maximize_speed(e);
    const double a = limiting_acceptance(opt.ell_star, e);
    CHECK(a >= 0.233);
    CHECK(a <= 0.235);
  }
  CHECK_THROWS_AS(maximize_speed(0.0), std::invalid_argument);
}

TEST_CASE("Euler-Maruyama") {
  SUBCASE("v = 0 is constant") {
    Rng rng(1);
    const auto z = euler_maruyama({0.0, DensityFamily::normal(), 0.01}, 0.7, 100, rng);
    REQUIRE(z.size() == 101);
    for (double v : z) CHECK(v == 0.7);
  }
  SUBCASE("OU stationary law and autocorrelation") {
    Rng rng(2);
    const double v = 1.326;
    Rng start(3);
    const auto z = euler_maruyama({v, DensityFamily::normal(), 0.01}, Gaussian{}(start), 1000000, rng);
    const auto m = batch_mean(z, 100, identity);
    const auto s = batch_mean(z, 100, square);
    CHECK(std::abs(m.mean) < 4.0 * m.se);
    CHECK(std::abs(s.mean - 1.0) < 4.0 * s.se);
    for (double tau : {0.1, 0.5, 1.0, 1.5}) {
      const auto lag = static_cast<std::size_t>(std::lround(tau / 0.01));
      CHECK(std::abs(autocorrelation(z, lag) - std::exp(-v * tau / 2.0)) < 0.02);
    }
  }
  SUBCASE("halving dt moves the variance by less than the MC error") {
    Rng a(4), b(5);
    const auto z1 = euler_maruyama({1.0, DensityFamily::normal(), 0.02}, 0.0, 500000, a);
    const auto z2 = euler_maruyama({1.0, DensityFamily::normal(), 0.01}, 0.0, 1000000, b);
    const auto s1 = batch_mean(z1, 100, square);
    const auto s2 = batch_mean(z2, 100, square);
    CHECK(std::abs(s1.mean - s2.mean) < 3.0 * std::hypot(s1.se, s2.se));
  }
  SUBCASE("guards") {
    Rng rng(1);
    CHECK_THROWS_AS(euler_maruyama({20.0, DensityFamily::normal(), 0.01}, 0.0, 10, rng), DiffusionError);
    CHECK_THROWS_AS(euler_maruyama({1.0, DensityFamily::normal(), 0.01}, std::nan(""), 10, rng), DiffusionError);
  }
  SUBCASE("deterministic") {
    Rng a(8), b(8);
    CHECK(euler_maruyama({1.0, DensityFamily::logistic(), 0.01}, 0.0, 1000, a) ==
          euler_maruyama({1.0, DensityFamily::logistic(), 0.01}, 0.0, 1000, b));
  }
}

TEST_CASE("autocorrelation helpers") {
  const std::vector<double> flat(100, 2.0);
  CHECK(std::isnan(autocorrelation(flat, 1)));
  std::vector<double> alt;
  for (int k = 0; k < 1000; ++k) alt.push_back(k % 2 ? 1.0 : -1.0);
  CHECK(autocorrelation(alt, 0) == doctest::Approx(1.0));
  CHECK(autocorrelation(alt, 1) == doctest::Approx(-1.0).epsilon(0.01));
  CHECK(ou_autocorrelation(2.0, 1.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(ou_autocorrelation(2.0, 1.0, 2.0) == doctest::Approx(std::exp(-0.25)));
  const auto pts = acf_against_ou(alt, 0.1, {0.1, 0.26}, 1.0);
  REQUIRE(pts.size() == 2);
  CHECK(pts[1].tau_used == doctest::Approx(0.3));
}

TEST_CASE("csv writers") {
  std::ostringstream a;
  const std::vector<double> t{0.0, 0.5}, z{1.0, -2.0};
  write_trajectory_csv(a, t, z);
  CHECK(a.str() == "t,z\n0,1\n0.5,-2\n");
  std::ostringstream b;
  write_speed_curve_csv(b, {0.0}, 1.0);
  CHECK(b.str() == "ell,a_theory,v_theory\n0,1,0\n");
}
