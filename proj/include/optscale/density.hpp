#pragma once

// One-dimensional density families f with the log-derivatives the limit
// theory needs, plus quadrature for their moments.

#include "optscale/rng.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace optscale {

namespace kernels {

struct StandardNormal {
  static constexpr const char* name = "normal";
  static double log_f(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }
  static double dlog_f(double x) { return -x; }
  static double d2log_f(double) { return -1.0; }
  static double sample(Rng& rng, Gaussian& gauss) { return gauss(rng); }
};

struct Logistic {
  static constexpr const char* name = "logistic";
  static double log_f(double x) {
    const double a = std::abs(x);
    return -a - 2.0 * std::log1p(std::exp(-a));
  }
  static double dlog_f(double x) { return -std::tanh(0.5 * x); }
  static double d2log_f(double x) {
    const double c = std::cosh(0.5 * x);
    return -0.5 / (c * c);
  }
  static double sample(Rng& rng, Gaussian&) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    return std::log(u) - std::log1p(-u);
  }
};

/// Kinked at 0; kept as a negative example for the regularity checks.
struct Laplace {
  static constexpr const char* name = "laplace";
  static double log_f(double x) { return -std::abs(x) - std::numbers::ln2; }
  static double dlog_f(double x) { return x > 0 ? -1.0 : (x < 0 ? 1.0 : 0.0); }
  static double d2log_f(double) { return 0.0; }
  static double sample(Rng& rng, Gaussian&) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    const double e = -std::log(u);
    return uniform01(rng) < 0.5 ? -e : e;
  }
};

}  // namespace kernels

class DivergentIntegralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Integral of h over the real line on [-T, T], doubling T until the newly
/// added tails contribute less than `rel_tol` of the total. Split at 0 so a
/// kink there does not slow the adaptive rule.
double integrate_real_line(const std::function<double(double)>& h, double initial_half_width,
                           double rel_tol = 1e-10);

/// f_sigma(x) = f(x / sigma) / sigma for one of the built-in kernels.
class DensityFamily {
 public:
  using Kernel = std::variant<kernels::StandardNormal, kernels::Logistic, kernels::Laplace>;

  static DensityFamily normal(double scale = 1.0) { return DensityFamily(kernels::StandardNormal{}, scale); }
  static DensityFamily logistic(double scale = 1.0) { return DensityFamily(kernels::Logistic{}, scale); }
  static DensityFamily laplace(double scale = 1.0) { return DensityFamily(kernels::Laplace{}, scale); }
  static DensityFamily from_name(const std::string& name, double scale = 1.0);

  std::string name() const;
  double scale() const { return scale_; }
  bool is_normal() const { return std::holds_alternative<kernels::StandardNormal>(kernel_); }

  /// Calls `fn(kernel)` with the concrete kernel type, for tight loops that
  /// should not dispatch per element.
  template <typename F>
  decltype(auto) visit(F&& fn) const {
    return std::visit(std::forward<F>(fn), kernel_);
  }

  double log_f(double x) const {
    return visit([&](auto k) { return k.log_f(x / scale_); }) - log_scale_;
  }
  double dlog_f(double x) const {
    return visit([&](auto k) { return k.dlog_f(x / scale_); }) / scale_;
  }
  double d2log_f(double x) const {
    return visit([&](auto k) { return k.d2log_f(x / scale_); }) / (scale_ * scale_);
  }
  double sample(Rng& rng, Gaussian& gauss) const {
    return scale_ * visit([&](auto k) { return k.sample(rng, gauss); });
  }

  /// E[(f'/f)^2], computed once at construction.
  double fisher() const { return fisher_; }
  /// E[(f'/f)^4].
  double fourth_moment() const { return fourth_; }
  /// E[(f''/f)^2].
  double second_curvature_moment() const { return curvature_; }

  /// Expectation of g(X) for X ~ f by quadrature.
  double expectation(const std::function<double(double)>& g) const;

 private:
  DensityFamily(Kernel kernel, double scale);

  Kernel kernel_;
  double scale_ = 1.0;
  double log_scale_ = 0.0;
  double fisher_ = 0.0;
  double fourth_ = 0.0;
  double curvature_ = 0.0;
};

/// E[(f'(X)/f(X))^2] by adaptive quadrature (relative error <= 1e-6).
double fisher_term(const DensityFamily& fam);

struct FamilyReport {
  double fisher = 0.0;
  double fourth_moment = 0.0;
  double second_curvature_moment = 0.0;
  /// sup |(log f)'(x) - (log f)'(y)| / |x - y| at the coarse and fine grids.
  double lipschitz_coarse = 0.0;
  double lipschitz_fine = 0.0;
  bool moments_finite = true;
  bool lipschitz_ok = true;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Report-only regularity check: finite moments and a Lipschitz witness for
/// (log f)' that must stay bounded under grid refinement.
FamilyReport validate_family(const DensityFamily& fam);

}  // namespace optscale
