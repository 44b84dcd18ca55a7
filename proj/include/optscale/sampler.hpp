#pragma once

// Random-walk Metropolis with Gaussian proposals and streaming diagnostics.

#include "optscale/asymptotics.hpp"
#include "optscale/rng.hpp"
#include "optscale/target.hpp"
#include "optscale/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace optscale {

/// Per-component proposal standard deviations s_j = ell * d^{-alpha_j / 2} * sqrt(scale).
struct ProposalSpec {
  double ell = 0.0;
  ProposalMode mode = ProposalMode::Homogeneous;
  std::vector<Rational> alphas;
  Vector sd;
  /// theta_{i*}^{-2} in the sampled coordinates; 1 for normalized targets.
  double istar_scale = 1.0;

  static ProposalSpec homogeneous(double ell, const Rational& alpha, Index d, double istar_scale = 1.0);
  static ProposalSpec inhomogeneous(double ell, std::vector<Rational> alphas, double istar_scale = 1.0);

  Index dimension() const { return sd.size(); }
};

struct StepOutcome {
  bool accepted = false;
  double log_ratio = 0.0;
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One Metropolis step: y = x + s * N(0, I), accept iff log U < log pi(y) - log pi(x).
/// Draw order (d normals, then one uniform) is the same as in run_chain, so a
/// chain can be replayed step by step from its seed.
StepOutcome rwm_step(const TargetModel& target, Eigen::Ref<Vector> x, const ProposalSpec& proposal, Rng& rng,
                     Gaussian& gauss);

struct RecordOptions {
  /// Rescaled-time spacing of the i* trajectory skeleton.
  double dt = 0.1;
  std::size_t trajectory_budget = 10000;
  bool trajectory = true;
  /// Accumulate the R_i roughness statistics (product targets only).
  bool roughness = true;
  /// Components averaged for the class ESJD; empty means target.exchangeable_class(i*).
  std::vector<Index> esjd_class;
};

struct ChainDiagnostics {
  std::uint64_t seed = 0;
  Index dimension = 0;
  Index istar = 0;
  double ell = 0.0;
  double time_factor = 1.0;  // d^{alpha_{i*}}
  double istar_scale = 1.0;
  std::int64_t iterations = 0;
  std::int64_t accept_count = 0;

  /// Sum over iterations of (X_j(t+1) - X_j(t))^2; rejected steps add 0.
  Vector sq_jump_sum;
  std::vector<Index> esjd_class;

  std::int64_t batch_size = 0;
  std::vector<std::int64_t> batch_accepts;
  std::vector<double> batch_class_jump;  // per batch: sum over class of squared jumps
  std::vector<std::int64_t> batch_lengths;

  /// Skeleton of Z(t) = X_{i*}([d^alpha t]); times in iterations, strictly increasing.
  std::vector<std::int64_t> trajectory_iterations;
  std::vector<double> trajectory_values;
  std::int64_t trajectory_stride = 0;

  /// Running sums of R_i per group and the number of samples taken.
  std::vector<double> r_sums;
  std::int64_t r_samples = 0;

  double acceptance_rate() const {
    return iterations > 0 ? static_cast<double>(accept_count) / static_cast<double>(iterations) : 0.0;
  }
  double esjd(Index j) const { return sq_jump_sum[j] / static_cast<double>(iterations); }
  double esjd_istar() const { return esjd(istar); }
  /// Mean per-iteration squared jump over the class.
  double esjd_class_mean() const;
  /// d^{alpha_{i*}} * class ESJD / theta_{i*}^{-2}: estimates v(ell).
  double esjd_rescaled() const { return time_factor * esjd_class_mean() / istar_scale; }
  /// Batch-means standard error of esjd_rescaled.
  double esjd_rescaled_se() const;
  /// Mean of sum_i R_i over the recorded samples (NaN if none).
  double mean_sum_r() const;

  std::vector<double> trajectory_times() const;

  /// Batches of per-step acceptance flags (for synthetic diagnostics).
  static ChainDiagnostics from_acceptances(std::span<const std::uint8_t> accepted);
};

ChainDiagnostics run_chain(const TargetModel& target, const ProposalSpec& proposal, std::int64_t iterations,
                           Index istar, const RecordOptions& record, std::uint64_t seed);

struct RateWithError {
  double rate = 0.0;
  double se = 0.0;
};

/// Acceptance rate with a batch-means standard error over ceil(sqrt(n)) batches.
RateWithError acceptance_with_se(const ChainDiagnostics& diag);

struct EmpiricalR {
  std::vector<double> mean;  // per group
  std::vector<double> se;
  double sum_mean = 0.0;
  double sum_se = 0.0;
  Index draws = 0;
};

/// Stationary Monte Carlo estimate of R_i(d, X) = sum_{j in J(i), j != i*} d^{-alpha_j} (theta_j (log f)'(theta_j x_j))^2.
EmpiricalR empirical_r(const MaterializedProduct& m, const std::vector<Rational>& alphas, Index n_draws, Rng& rng);

nlohmann::json to_json(const ChainDiagnostics& diag);

}  // namespace optscale
