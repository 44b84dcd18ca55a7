#include "optscale/target.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace optscale {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

}  // namespace

TargetModel::TargetModel(Kind kind) : kind_(std::move(kind)) {}

TargetModel TargetModel::product(DensityFamily family, Vector theta, std::vector<int> block) {
  if (theta.size() == 0) throw TargetError("product target needs at least one component");
  for (Index j = 0; j < theta.size(); ++j) {
    if (!std::isfinite(theta[j]) || theta[j] <= 0.0) throw TargetError("theta_j must be positive and finite");
  }
  if (block.empty()) block.assign(static_cast<std::size_t>(theta.size()), 0);
  if (static_cast<Index>(block.size()) != theta.size()) throw TargetError("block labels must match theta");
  const Index d = theta.size();
  TargetModel t(ProductTarget{std::move(family), std::move(theta), std::move(block)});
  t.dimension_ = d;
  return t;
}

TargetModel TargetModel::intraclass(Index d, double diag, double offdiag) {
  if (d < 1) throw TargetError("dimension must be >= 1");
  const double a = diag - offdiag;
  const double top = a + static_cast<double>(d) * offdiag;
  if (!(a > 0.0) || !(top > 0.0)) throw TargetError("intraclass covariance is not positive definite");
  TargetModel t(GaussianIntraclass{d, diag, offdiag});
  t.dimension_ = d;
  t.quad_scale_ = 1.0 / a;
  t.rank_one_ = offdiag / top;
  t.log_norm_ = -0.5 * static_cast<double>(d) * kLog2Pi -
                0.5 * (static_cast<double>(d - 1) * std::log(a) + std::log(top));
  return t;
}

TargetModel TargetModel::hierarchical(Index d) {
  if (d < 2) throw TargetError("hierarchical target needs d >= 2");
  TargetModel t(GaussianHierarchical{d});
  t.dimension_ = d;
  // Unit-Jacobian triangular map from i.i.d. normals: det Sigma = 1.
  t.log_norm_ = -0.5 * static_cast<double>(d) * kLog2Pi;
  return t;
}

TargetModel TargetModel::diagonal(Vector variances) {
  if (variances.size() == 0) throw TargetError("diagonal target needs at least one component");
  for (Index j = 0; j < variances.size(); ++j) {
    if (!std::isfinite(variances[j]) || variances[j] <= 0.0) throw TargetError("variances must be positive");
  }
  const Index d = variances.size();
  TargetModel t(GaussianDiagonal{variances});
  t.dimension_ = d;
  t.inv_variances_ = variances.cwiseInverse();
  t.log_norm_ = -0.5 * static_cast<double>(d) * kLog2Pi - 0.5 * variances.array().log().sum();
  return t;
}

std::string TargetModel::kind_name() const {
  struct Namer {
    std::string operator()(const ProductTarget& p) const { return "product-" + p.family.name(); }
    std::string operator()(const GaussianIntraclass&) const { return "intraclass"; }
    std::string operator()(const GaussianHierarchical&) const { return "hierarchical"; }
    std::string operator()(const GaussianDiagonal&) const { return "diagonal"; }
  };
  return std::visit(Namer{}, kind_);
}

double TargetModel::log_density(const Eigen::Ref<const Vector>& x) const {
  if (x.size() != dimension_) throw TargetError("log_density: dimension mismatch");
  if (!x.allFinite()) throw TargetError("log_density: non-finite input");

  struct Eval {
    const TargetModel& self;
    const Eigen::Ref<const Vector>& x;

    double operator()(const ProductTarget& p) const {
      return p.family.visit([&](auto k) {
        const double sigma = p.family.scale();
        const double log_sigma = std::log(sigma);
        double s = 0.0;
        for (Index j = 0; j < x.size(); ++j) {
          s += std::log(p.theta[j]) + k.log_f(p.theta[j] * x[j] / sigma) - log_sigma;
        }
        return s;
      });
    }
    double operator()(const GaussianIntraclass&) const {
      const double sum = x.sum();
      const double quad = self.quad_scale_ * (x.squaredNorm() - self.rank_one_ * sum * sum);
      return self.log_norm_ - 0.5 * quad;
    }
    double operator()(const GaussianHierarchical&) const {
      const double x1 = x[0];
      const double rest = (x.tail(x.size() - 1).array() - x1).square().sum();
      return self.log_norm_ - 0.5 * (x1 * x1 + rest);
    }
    double operator()(const GaussianDiagonal&) const {
      return self.log_norm_ - 0.5 * (x.array().square() * self.inv_variances_.array()).sum();
    }
  };
  return std::visit(Eval{*this, x}, kind_);
}

Vector TargetModel::sample(Rng& rng) const {
  Vector out(dimension_);
  Gaussian gauss;
  sample_into(rng, gauss, out);
  return out;
}

void TargetModel::sample_into(Rng& rng, Gaussian& gauss, Eigen::Ref<Vector> out) const {
  if (out.size() != dimension_) throw TargetError("sample_into: dimension mismatch");
  struct Draw {
    Rng& rng;
    Gaussian& gauss;
    Eigen::Ref<Vector>& out;
    void operator()(const ProductTarget& p) const {
      for (Index j = 0; j < out.size(); ++j) out[j] = p.family.sample(rng, gauss) / p.theta[j];
    }
    void operator()(const GaussianIntraclass& g) const {
      // Sigma^{1/2} = sqrt(a)(I - P) + sqrt(a + d b) P with P = 11^T / d.
      const double a = g.diag - g.offdiag;
      const double top = a + static_cast<double>(g.d) * g.offdiag;
      for (Index j = 0; j < out.size(); ++j) out[j] = gauss(rng);
      const double mean = out.mean();
      out = std::sqrt(a) * out;
      out.array() += (std::sqrt(top) - std::sqrt(a)) * mean;
    }
    void operator()(const GaussianHierarchical&) const {
      const double x1 = gauss(rng);
      out[0] = x1;
      for (Index j = 1; j < out.size(); ++j) out[j] = x1 + gauss(rng);
    }
    void operator()(const GaussianDiagonal& g) const {
      for (Index j = 0; j < out.size(); ++j) out[j] = std::sqrt(g.variances[j]) * gauss(rng);
    }
  };
  std::visit(Draw{rng, gauss, out}, kind_);
}

Matrix TargetModel::covariance() const {
  struct Cov {
    Matrix operator()(const ProductTarget& p) const {
      if (!p.family.is_normal()) throw TargetError("covariance: only normal product targets are Gaussian");
      const double s2 = p.family.scale() * p.family.scale();
      return (s2 * p.theta.array().square().inverse()).matrix().asDiagonal();
    }
    Matrix operator()(const GaussianIntraclass& g) const {
      Matrix m = Matrix::Constant(g.d, g.d, g.offdiag);
      m.diagonal().setConstant(g.diag);
      return m;
    }
    Matrix operator()(const GaussianHierarchical& g) const {
      Matrix m = Matrix::Ones(g.d, g.d);
      m.diagonal().setConstant(2.0);
      m(0, 0) = 1.0;
      return m;
    }
    Matrix operator()(const GaussianDiagonal& g) const { return g.variances.asDiagonal(); }
  };
  return std::visit(Cov{}, kind_);
}

std::vector<Index> TargetModel::exchangeable_class(Index i) const {
  if (i < 0 || i >= dimension_) throw TargetError("exchangeable_class: index out of range");
  std::vector<Index> out;
  if (const auto* p = as_product()) {
    for (Index j = 0; j < dimension_; ++j) {
      if (p->theta[j] == p->theta[i]) out.push_back(j);
    }
  } else if (std::holds_alternative<GaussianIntraclass>(kind_)) {
    out.resize(static_cast<std::size_t>(dimension_));
    std::iota(out.begin(), out.end(), Index{0});
  } else if (std::holds_alternative<GaussianHierarchical>(kind_)) {
    if (i == 0) {
      out.push_back(0);
    } else {
      for (Index j = 1; j < dimension_; ++j) out.push_back(j);
    }
  } else {
    const auto& v = std::get<GaussianDiagonal>(kind_).variances;
    for (Index j = 0; j < dimension_; ++j) {
      if (v[j] == v[i]) out.push_back(j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Index> group_counts(const ScalingVector& sv, Index d) {
  const auto n = static_cast<Index>(sv.n());
  const auto m = static_cast<Index>(sv.m());
  if (d - n < m) throw TargetError("dimension too small for the scaling vector");
  std::vector<Index> counts;
  std::size_t absorber = 0;
  for (std::size_t i = 0; i < sv.m(); ++i) {
    const auto& g = sv.groups()[i];
    const double c = g.card_coeff * std::pow(static_cast<double>(d), to_double(g.card_exponent));
    counts.push_back(std::max<Index>(1, std::llround(c)));
    if (g.card_exponent > sv.groups()[absorber].card_exponent) absorber = i;
  }
  const Index total = std::accumulate(counts.begin(), counts.end(), Index{0});
  counts[absorber] += (d - n) - total;
  if (counts[absorber] < 1) throw TargetError("group cardinalities exceed the dimension");
  return counts;
}

MaterializedProduct materialize(const ScalingVector& normalized, Index d, const DensityFamily& family,
                                Rng& rng) {
  if (!normalized.is_normalized()) throw TargetError("materialize: scaling vector must be normalized");
  const auto counts = group_counts(normalized, d);
  const double dd = static_cast<double>(d);

  Vector theta(d);
  std::vector<int> block(static_cast<std::size_t>(d));
  std::vector<int> finite_index(static_cast<std::size_t>(d), -1);
  Index k = 0;
  for (std::size_t j = 0; j < normalized.n(); ++j, ++k) {
    const auto& t = normalized.finite_terms()[j];
    theta[k] = std::sqrt(std::pow(dd, to_double(t.exponent)) / t.constant);
    block[static_cast<std::size_t>(k)] = -1;
    finite_index[static_cast<std::size_t>(k)] = static_cast<int>(j);
  }
  for (std::size_t i = 0; i < normalized.m(); ++i) {
    const auto& g = normalized.groups()[i];
    const double growth = std::pow(dd, to_double(g.gamma));
    for (Index c = 0; c < counts[i]; ++c, ++k) {
      double inverse_k = g.inverse_constant();
      if (const auto* rk = std::get_if<RandomK>(&g.constant_model)) {
        inverse_k = rk->b * (0.5 + uniform01(rng));
      }
      theta[k] = std::sqrt(growth * inverse_k);
      block[static_cast<std::size_t>(k)] = static_cast<int>(i);
    }
  }
  const auto istar = static_cast<Index>(std::get<FiniteTermRef>(normalized.component_of_interest()).index);
  return {TargetModel::product(family, std::move(theta), std::move(block)), istar, std::move(finite_index)};
}

std::vector<Rational> component_alphas(const MaterializedProduct& m, const ScalingAnalysis& analysis) {
  const auto* p = m.target.as_product();
  std::vector<Rational> out(static_cast<std::size_t>(m.target.dimension()), analysis.alpha);
  if (analysis.mode == ProposalMode::Homogeneous) return out;
  for (std::size_t j = 0; j < out.size(); ++j) {
    const int b = p->block[j];
    if (b >= 0) out[j] = analysis.alpha_per_group[static_cast<std::size_t>(b)];
  }
  out[static_cast<std::size_t>(m.istar)] = istar_alpha(analysis.normalized, analysis.mode);
  return out;
}

// ---------------------------------------------------------------------------

Rational rationalize(double x, std::int64_t max_den) {
  Rational best(static_cast<std::int64_t>(std::llround(x)));
  double best_err = std::abs(x - to_double(best));
  for (std::int64_t q = 2; q <= max_den; ++q) {
    const Rational cand(static_cast<std::int64_t>(std::llround(x * static_cast<double>(q))), q);
    const double err = std::abs(x - to_double(cand));
    if (err < best_err - 1e-12) {
      best = cand;
      best_err = err;
    }
  }
  return best;
}

namespace {

struct Fit {
  double slope = 0.0;
  double max_residual = 0.0;
};

Fit log_log_fit(const std::vector<double>& log_d, const std::vector<double>& log_v) {
  const auto n = static_cast<double>(log_d.size());
  const double mx = std::accumulate(log_d.begin(), log_d.end(), 0.0) / n;
  const double my = std::accumulate(log_v.begin(), log_v.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < log_d.size(); ++k) {
    sxy += (log_d[k] - mx) * (log_v[k] - my);
    sxx += (log_d[k] - mx) * (log_d[k] - mx);
  }
  Fit f;
  f.slope = sxy / sxx;
  for (std::size_t k = 0; k < log_d.size(); ++k) {
    const double pred = my + f.slope * (log_d[k] - mx);
    f.max_residual = std::max(f.max_residual, std::abs(log_v[k] - pred));
  }
  return f;
}

// Flat steps below this size in log scale are rounding noise.
constexpr double kFlatLog = 1e-6;
constexpr double kMaxFitResidual = 0.1;

}  // namespace

SpectrumClassification classify_spectrum(const CovarianceBuilder& cov_builder, const std::vector<Index>& d_grid,
                                         double cluster_tolerance) {
  if (d_grid.size() < 4) throw SpectrumError("classify_spectrum: need at least 4 grid dimensions");
  for (std::size_t k = 1; k < d_grid.size(); ++k) {
    if (d_grid[k] <= d_grid[k - 1]) throw SpectrumError("classify_spectrum: d_grid must increase");
  }
  if (d_grid.front() < 2) throw SpectrumError("classify_spectrum: dimensions must be >= 2");

  std::vector<Vector> spectra;
  std::vector<double> log_d;
  for (Index d : d_grid) {
    const Matrix cov = cov_builder(d);
    if (cov.rows() != d || cov.cols() != d) throw SpectrumError("covariance builder returned wrong size");
    if (!cov.isApprox(cov.transpose(), 1e-12)) throw SpectrumError("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw SpectrumError("eigenvalue computation failed");
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw SpectrumError("covariance is not positive definite");
    spectra.push_back(es.eigenvalues());
    log_d.push_back(std::log(static_cast<double>(d)));
  }

  const Index d_min = d_grid.front();
  const Index d_max = d_grid.back();
  const Index half = d_min / 2;

  // Follow each eigenvalue of the largest spectrum back through smaller d:
  // fixed rank from the bottom, fixed rank from the top, or fixed quantile.
  auto index_at = [&](Index k, Index d) -> Index {
    if (k < half) return k;
    const Index from_top = d_max - 1 - k;
    if (from_top < half) return d - 1 - from_top;
    const double q = static_cast<double>(k) / static_cast<double>(d_max - 1);
    return std::clamp<Index>(std::llround(q * static_cast<double>(d - 1)), 0, d - 1);
  };

  std::vector<double> exponents(static_cast<std::size_t>(d_max));
  std::vector<double> log_v(d_grid.size());
  for (Index k = 0; k < d_max; ++k) {
    bool up = false;
    bool down = false;
    for (std::size_t g = 0; g < d_grid.size(); ++g) {
      log_v[g] = std::log(spectra[g][index_at(k, d_grid[g])]);
      if (g > 0) {
        const double step = log_v[g] - log_v[g - 1];
        up = up || step > kFlatLog;
        down = down || step < -kFlatLog;
      }
    }
    if (up && down) throw SpectrumError("ill-conditioned fit: non-monotone eigenvalue trajectory");
    const Fit fit = log_log_fit(log_d, log_v);
    if (fit.max_residual > kMaxFitResidual) {
      throw SpectrumError("ill-conditioned fit: eigenvalue trajectory is not a power of d");
    }
    exponents[static_cast<std::size_t>(k)] = fit.slope;
  }

  // Single-linkage clustering of the sorted exponents.
  std::vector<std::size_t> order(exponents.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return exponents[a] < exponents[b]; });
  std::vector<int> cluster_of(exponents.size());
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (r == 0 || exponents[order[r]] - exponents[order[r - 1]] > cluster_tolerance) members.emplace_back();
    members.back().push_back(order[r]);
    cluster_of[order[r]] = static_cast<int>(members.size() - 1);
  }

  const double dmax = static_cast<double>(d_max);
  const std::size_t second = d_grid.size() - 2;
  const double dsec = static_cast<double>(d_grid[second]);

  // K from eigenvalue / d^e at the two largest d, extrapolated assuming a
  // 1/d correction (exact for the intraclass spectrum d + 1).
  auto extrapolated_constant = [&](Index k, const Rational& e) {
    const double kl = spectra.back()[k] / std::pow(dmax, to_double(e));
    const double ks = spectra[second][index_at(k, d_grid[second])] / std::pow(dsec, to_double(e));
    const double kx = (dmax * kl - dsec * ks) / (dmax - dsec);
    return kx > 0.0 ? kx : kl;
  };

  std::vector<SpectrumCluster> clusters;
  for (std::size_t c = 0; c < members.size(); ++c) {
    SpectrumCluster cl;
    cl.id = static_cast<int>(c);
    double sum = 0.0;
    for (auto k : members[c]) sum += exponents[k];
    cl.mean_exponent = sum / static_cast<double>(members[c].size());
    cl.exponent = rationalize(cl.mean_exponent);
    double ksum = 0.0;
    for (auto k : members[c]) ksum += extrapolated_constant(static_cast<Index>(k), cl.exponent);
    cl.constant = ksum / static_cast<double>(members[c].size());
    cl.count_largest = static_cast<Index>(members[c].size());
    clusters.push_back(cl);
  }
  for (std::size_t c = 1; c < clusters.size(); ++c) {
    if (clusters[c].exponent == clusters[c - 1].exponent) {
      throw SpectrumError("ill-conditioned fit: distinct clusters rationalize to the same exponent");
    }
  }

  // Assign each eigenvalue of a smaller spectrum to the cluster whose
  // magnitude K d^e it is closest to in log scale.
  auto nearest_cluster = [&](double eigenvalue, double d) {
    int best = 0;
    double best_gap = INFINITY;
    for (const auto& cl : clusters) {
      const double pred = std::log(cl.constant) + to_double(cl.exponent) * std::log(d);
      const double gap = std::abs(std::log(eigenvalue) - pred);
      if (gap < best_gap) {
        best_gap = gap;
        best = cl.id;
      }
    }
    return best;
  };

  SpectrumClassification out{ScalingVector({}, {GroupSpec{}}), {}, {}};
  for (std::size_t g = 0; g < d_grid.size(); ++g) {
    const bool largest = g + 1 == d_grid.size();
    for (Index k = 0; k < spectra[g].size(); ++k) {
      SpectrumRow row{d_grid[g], k, spectra[g][k], 0.0, 0};
      if (largest) {
        row.fitted_exponent = exponents[static_cast<std::size_t>(k)];
        row.cluster_id = cluster_of[static_cast<std::size_t>(k)];
      } else {
        row.cluster_id = nearest_cluster(row.eigenvalue, static_cast<double>(d_grid[g]));
        row.fitted_exponent = clusters[static_cast<std::size_t>(row.cluster_id)].mean_exponent;
        if (g == second) ++clusters[static_cast<std::size_t>(row.cluster_id)].count_second;
      }
      out.rows.push_back(row);
    }
  }

  const double log_ratio = std::log(dmax / dsec);
  std::vector<OrderTerm> finite;
  std::vector<GroupSpec> groups;
  std::size_t largest_group = 0;
  Index largest_count = 0;
  for (auto& cl : clusters) {
    cl.growing = cl.count_largest > cl.count_second;
    // eigenvalue ~ K d^{e} is the scaling term K / d^{-e}.
    if (!cl.growing) {
      for (auto k : members[static_cast<std::size_t>(cl.id)]) {
        finite.push_back(OrderTerm{extrapolated_constant(static_cast<Index>(k), cl.exponent), -cl.exponent});
      }
      continue;
    }
    if (cl.count_second < 1) throw SpectrumError("ill-conditioned fit: growing cluster absent at second-largest d");
    const double beta_fit =
        std::log(static_cast<double>(cl.count_largest) / static_cast<double>(cl.count_second)) / log_ratio;
    const Rational beta = rationalize(beta_fit);
    if (beta <= Rational(0)) throw SpectrumError("ill-conditioned fit: cluster cardinality does not grow");
    GroupSpec gs;
    gs.constant_model = FixedK{cl.constant};
    gs.gamma = -cl.exponent;
    gs.card_exponent = beta;
    // two-point fit of C d^beta + offset
    gs.card_coeff = static_cast<double>(cl.count_largest - cl.count_second) /
                    (std::pow(dmax, to_double(beta)) - std::pow(dsec, to_double(beta)));
    if (cl.count_largest > largest_count) {
      largest_count = cl.count_largest;
      largest_group = groups.size();
    }
    groups.push_back(gs);
  }
  if (groups.empty()) throw SpectrumError("no eigenvalue cluster grows with d; not a replicated structure");
  out.scaling = ScalingVector(std::move(finite), std::move(groups), GroupMemberRef{largest_group});
  out.clusters = std::move(clusters);
  return out;
}

}  // namespace optscale
