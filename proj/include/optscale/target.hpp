#pragma once

#include "optscale/asymptotics.hpp"
#include "optscale/density.hpp"
#include "optscale/rng.hpp"
#include "optscale/types.hpp"

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace optscale {

/// prod_j theta_j f(theta_j x_j). `block[j]` is the group index of component
/// j, or -1 for a finite term.
struct ProductTarget {
  DensityFamily family;
  Vector theta;
  std::vector<int> block;
};

/// Sigma = (diag - offdiag) I + offdiag 11^T.
struct GaussianIntraclass {
  Index d = 0;
  double diag = 2.0;
  double offdiag = 1.0;
};

/// X_1 ~ N(0,1), X_j | X_1 ~ N(X_1, 1) for j >= 2.
struct GaussianHierarchical {
  Index d = 0;
};

struct GaussianDiagonal {
  Vector variances;
};

class TargetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TargetModel {
 public:
  using Kind = std::variant<ProductTarget, GaussianIntraclass, GaussianHierarchical, GaussianDiagonal>;

  static TargetModel product(DensityFamily family, Vector theta, std::vector<int> block = {});
  static TargetModel intraclass(Index d, double diag = 2.0, double offdiag = 1.0);
  static TargetModel hierarchical(Index d);
  static TargetModel diagonal(Vector variances);

  Index dimension() const { return dimension_; }
  const Kind& kind() const { return kind_; }
  const ProductTarget* as_product() const { return std::get_if<ProductTarget>(&kind_); }
  bool is_gaussian() const { return !as_product() || as_product()->family.is_normal(); }
  std::string kind_name() const;

  /// Log density up to an additive constant that is the same for every x.
  /// Product targets keep log theta_j; Gaussian kinds are exact.
  double log_density(const Eigen::Ref<const Vector>& x) const;

  /// Exact draw from the target.
  Vector sample(Rng& rng) const;
  void sample_into(Rng& rng, Gaussian& gauss, Eigen::Ref<Vector> out) const;

  /// Dense covariance; Gaussian kinds and normal product targets only.
  Matrix covariance() const;

  /// Components exchangeable with `i` under the target (same marginal role).
  std::vector<Index> exchangeable_class(Index i) const;

 private:
  explicit TargetModel(Kind kind);

  Kind kind_;
  Index dimension_ = 0;
  // Structured factorization constants of the Gaussian kinds.
  double quad_scale_ = 1.0;   // intraclass: 1 / (diag - offdiag)
  double rank_one_ = 0.0;     // intraclass: offdiag / (diag - offdiag + d offdiag)
  double log_norm_ = 0.0;     // -(d/2) log(2 pi) - (1/2) log det Sigma
  Vector inv_variances_;      // diagonal kind
};

/// theta_j = (K_j d^{-lambda_j})^{-1/2} for every component of a normalized
/// scaling vector at dimension d.
struct MaterializedProduct {
  TargetModel target;
  Index istar = 0;
  /// Finite-term index of each component (or -1 for group members).
  std::vector<int> finite_index;
};

/// Group cardinalities round(C d^beta) (at least 1); the group with the
/// largest beta absorbs the remainder so the total is d - n.
std::vector<Index> group_counts(const ScalingVector& sv, Index d);

/// Requires a normalized scaling vector. RandomK constants are drawn from
/// `rng` with 1/K ~ Uniform(b/2, 3b/2).
MaterializedProduct materialize(const ScalingVector& normalized, Index d, const DensityFamily& family,
                                Rng& rng);

/// Per-component proposal exponents alpha_j at dimension d for `mode`.
std::vector<Rational> component_alphas(const MaterializedProduct& m, const ScalingAnalysis& analysis);

// ---------------------------------------------------------------------------
// Eigenvalue route from a covariance family to a scaling vector.

struct SpectrumRow {
  Index d = 0;
  Index eigen_index = 0;
  double eigenvalue = 0.0;
  double fitted_exponent = 0.0;
  int cluster_id = 0;
};

struct SpectrumCluster {
  int id = 0;
  double mean_exponent = 0.0;
  Rational exponent{0};  // growth exponent of the eigenvalues: eigenvalue ~ K d^{exponent}
  double constant = 1.0;
  Index count_largest = 0;
  Index count_second = 0;
  bool growing = false;
};

struct SpectrumClassification {
  ScalingVector scaling;
  std::vector<SpectrumCluster> clusters;
  std::vector<SpectrumRow> rows;
};

class SpectrumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using CovarianceBuilder = std::function<Matrix(Index)>;

/// Fits eigenvalue growth exponents across `d_grid` by log-log least squares,
/// clusters them (tolerance 0.1) and returns the implied scaling vector. The
/// component of interest defaults to a member of the largest group.
SpectrumClassification classify_spectrum(const CovarianceBuilder& cov_builder, const std::vector<Index>& d_grid,
                                         double cluster_tolerance = 0.1);

/// Nearest fraction with denominator <= max_den.
Rational rationalize(double x, std::int64_t max_den = 12);

}  // namespace optscale
