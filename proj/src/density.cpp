#include "optscale/density.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>

namespace optscale {
namespace {

double gk(const std::function<double(double)>& h, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(h, a, b, 15, 1e-13);
}

constexpr int kMaxDoublings = 24;
constexpr int kStallLimit = 5;

}  // namespace

double integrate_real_line(const std::function<double(double)>& h, double initial_half_width,
                           double rel_tol) {
  if (!(initial_half_width > 0.0)) throw std::invalid_argument("integrate_real_line: width must be positive");
  double t = initial_half_width;
  double total = gk(h, -t, 0.0) + gk(h, 0.0, t);
  double previous_tail = 0.0;
  int stalled = 0;
  for (int k = 0; k < kMaxDoublings; ++k) {
    const double tail = gk(h, -2.0 * t, -t) + gk(h, t, 2.0 * t);
    total += tail;
    if (!std::isfinite(total)) throw DivergentIntegralError("integrand is not finite on the truncation window");
    if (std::abs(tail) <= rel_tol * std::abs(total)) return total;
    // Tails that refuse to shrink as the window doubles mean the integral grows without bound.
    if (k > 0 && std::abs(tail) >= 0.7 * std::abs(previous_tail)) {
      if (++stalled >= kStallLimit) {
        throw DivergentIntegralError("integral keeps growing across expanding truncation windows");
      }
    } else {
      stalled = 0;
    }
    previous_tail = tail;
    t *= 2.0;
  }
  throw DivergentIntegralError("integral did not converge within the truncation budget");
}

DensityFamily::DensityFamily(Kernel kernel, double scale)
    : kernel_(kernel), scale_(scale), log_scale_(std::log(scale)) {
  if (!std::isfinite(scale) || scale <= 0.0) throw std::invalid_argument("density scale must be positive");
  fisher_ = expectation([this](double x) {
    const double g = dlog_f(x);
    return g * g;
  });
  fourth_ = expectation([this](double x) {
    const double g = dlog_f(x);
    return g * g * g * g;
  });
  curvature_ = expectation([this](double x) {
    // f''/f = (log f)'' + ((log f)')^2
    const double g = dlog_f(x);
    const double c = d2log_f(x) + g * g;
    return c * c;
  });
}

DensityFamily DensityFamily::from_name(const std::string& name, double scale) {
  if (name == "normal" || name == "gaussian") return normal(scale);
  if (name == "logistic") return logistic(scale);
  if (name == "laplace") return laplace(scale);
  throw std::invalid_argument("unknown density family '" + name + "' (normal, logistic, laplace)");
}

std::string DensityFamily::name() const {
  return visit([](auto k) { return std::string(decltype(k)::name); });
}

double DensityFamily::expectation(const std::function<double(double)>& g) const {
  return integrate_real_line([&](double x) { return g(x) * std::exp(log_f(x)); }, 8.0 * scale_);
}

double fisher_term(const DensityFamily& fam) { return fam.fisher(); }

FamilyReport validate_family(const DensityFamily& fam) {
  FamilyReport r;
  r.fisher = fam.fisher();
  r.fourth_moment = fam.fourth_moment();
  r.second_curvature_moment = fam.second_curvature_moment();
  r.moments_finite = std::isfinite(r.fisher) && std::isfinite(r.fourth_moment) &&
                     std::isfinite(r.second_curvature_moment);
  if (!r.moments_finite) r.violations.push_back("moment condition: E[(f'/f)^4] or E[(f''/f)^2] not finite");

  // Grid points straddle 0 symmetrically, so a kink at the mode is always seen.
  auto lipschitz = [&](double h) {
    const double half_width = 10.0 * fam.scale();
    const auto steps = static_cast<long>(half_width / h);
    double best = 0.0;
    double prev_x = -(static_cast<double>(steps) + 0.5) * h;
    double prev_g = fam.dlog_f(prev_x);
    for (long k = -steps; k <= steps; ++k) {
      const double x = (static_cast<double>(k) + 0.5) * h;
      const double g = fam.dlog_f(x);
      best = std::max(best, std::abs(g - prev_g) / (x - prev_x));
      prev_x = x;
      prev_g = g;
    }
    return best;
  };
  r.lipschitz_coarse = lipschitz(1e-2 * fam.scale());
  r.lipschitz_fine = lipschitz(1e-3 * fam.scale());
  r.lipschitz_ok = std::isfinite(r.lipschitz_fine) && r.lipschitz_fine <= 2.0 * r.lipschitz_coarse + 1e-12;
  if (!r.lipschitz_ok) {
    r.violations.push_back("(log f)' is not Lipschitz: difference quotients grow under grid refinement");
  }
  return r;
}

}  // namespace optscale
