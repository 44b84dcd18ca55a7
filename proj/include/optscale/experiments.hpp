#pragma once

// Studies that set the analyzer's predictions against sampler measurements.

#include "optscale/asymptotics.hpp"
#include "optscale/diffusion.hpp"
#include "optscale/io.hpp"
#include "optscale/sampler.hpp"
#include "optscale/target.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace optscale {

struct TargetSpec {
  enum class Kind { Product, Intraclass, Hierarchical, Identity };
  Kind kind = Kind::Product;
  std::string family = "normal";
  double scale = 1.0;
  double diag = 2.0;
  double offdiag = 1.0;

  bool is_product() const { return kind == Kind::Product; }
  /// The one-dimensional f: the product family, or the standard normal for
  /// the Gaussian kinds (their eigen-coordinates are normal).
  DensityFamily density() const;
  std::string name() const;
  /// Dense covariance at dimension d for the Gaussian kinds.
  Matrix covariance(Index d) const;
  TargetModel gaussian_model(Index d) const;
};

/// A log-spaced grid: points values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, int points);

struct ExperimentPlan {
  TargetSpec target;
  /// Declared scaling vector. When absent, Gaussian kinds are classified from
  /// their spectrum over spectrum_grid.
  std::optional<ScalingVector> scaling;
  std::vector<Index> spectrum_grid{32, 64, 128, 256, 512};
  /// Overrides the component of interest (also after spectrum classification).
  ComponentOfInterest component;
  ProposalMode mode = ProposalMode::Homogeneous;

  std::vector<double> ell_grid = log_grid(0.5, 5.0, 13);
  /// Multiply ell_grid by the predicted ell-hat (when the dominance condition holds).
  bool ell_grid_relative = false;
  std::vector<Index> dims{100};
  std::int64_t iterations = 100000;
  int replicates = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  int bootstrap = 200;

  /// simulate / compare: ell for single-chain studies; absent means ell-hat.
  std::optional<double> ell;
  double trajectory_dt = 0.05;
  std::size_t trajectory_budget = 200000;
  std::vector<double> acf_lags{0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};
  double em_dt = 0.01;

  Index r_draws = 50;
  int r_seeds = 50;
  std::vector<Rational> scan_lambdas{Rational(0)};

  std::vector<std::string> studies{"sweep"};
};

/// Scaling vector, normalization and analysis a plan works with.
struct ResolvedPlan {
  ScalingVector raw;
  ScalingAnalysis analysis;
  std::optional<SpectrumClassification> spectrum;
};

ResolvedPlan resolve(const ExperimentPlan& plan);

/// A concrete target at one dimension with the proposal geometry for i*.
struct CellTarget {
  TargetModel target;
  Index istar = 0;
  std::vector<Rational> alphas;
  double istar_scale = 1.0;
  std::vector<Index> esjd_class;
  /// i*'s own rescaling exponent.
  Rational istar_alpha{0};

  ProposalSpec proposal(double ell) const { return ProposalSpec::inhomogeneous(ell, alphas, istar_scale); }
};

/// Gaussian kinds need a group-member i* and the homogeneous mode.
CellTarget build_cell_target(const ExperimentPlan& plan, const ResolvedPlan& resolved, Index d, Rng& rng);

struct SweepRow {
  Index d = 0;
  double ell = 0.0;
  int replicates = 0;
  std::int64_t iterations = 0;  // per chain
  Rational alpha{0};
  double accept = 0.0;
  double accept_se = 0.0;
  double esjd_istar = 0.0;
  double esjd_rescaled = 0.0;
  double esjd_rescaled_se = 0.0;
  double sum_r = 0.0;
  std::optional<double> a_theory;
  std::optional<double> v_theory;
  std::vector<ChainRow> chains;  // one per replicate
  std::string error;

  /// Full batches pooled over replicates; the bootstrap resamples these.
  std::vector<double> batch_accept;
  std::vector<double> batch_efficiency;

  bool ok() const { return error.empty(); }
};

struct SweepOptimum {
  Index d = 0;
  double ell_argmax = 0.0;
  double accept_at_argmax = 0.0;
  double accept_se = 0.0;  // bootstrap
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// The grid maximum sits at an end of the ell grid.
  bool at_edge = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by (d, ell)
  std::vector<SweepOptimum> optima;
  bool has_theory = false;
  std::optional<double> e_r;
  std::optional<double> ell_hat;
  std::optional<double> aoar;
};

/// Argmax of the efficiency by a quadratic in log(ell) through the three best
/// neighbouring grid points, and the acceptance interpolated there.
struct ArgmaxFit {
  double ell = 0.0;
  double accept = 0.0;
  bool at_edge = false;
};
ArgmaxFit fit_argmax(const std::vector<double>& ells, const std::vector<double>& efficiency,
                     const std::vector<double>& accept);

/// A seeded cell: what run_plan records in the manifest.
struct CellSeed {
  std::string study;
  std::string key;
  std::uint64_t seed = 0;
};

struct StudyContext {
  std::vector<CellSeed>* seeds = nullptr;
  std::function<void(const std::string&)> log;
};

SweepResult sweep_ell(const ExperimentPlan& plan, const ResolvedPlan& resolved, const std::string& study = "sweep",
                      StudyContext ctx = {});
SweepResult sweep_ell(const ExperimentPlan& plan);

struct ScanRow {
  Rational lambda{0};
  Index d = 0;
  double ell_hat = 0.0;
  double accept_at_ell_hat = 0.0;
  double accept_at_ell_hat_se = 0.0;
  SweepOptimum optimum;
};

/// Theta^{-2} = (d^{-lambda}, 1, ..., 1) for each lambda in plan.scan_lambdas,
/// with i* the d^{-lambda} component.
struct ScanResult {
  std::vector<ScanRow> rows;
  std::vector<SweepResult> sweeps;
};
ScalingVector scan_vector(const Rational& lambda);
ScanResult dimension_scan(const ExperimentPlan& plan, StudyContext ctx = {});

struct ViolationReport {
  Verdict verdict = Verdict::Holds;
  SweepResult sweep;
  /// Empirical optimum minus 0.234 in bootstrap standard errors, per d.
  std::vector<double> z_below_aoar;
};
ViolationReport violation_demo(const ExperimentPlan& plan, StudyContext ctx = {});

struct CompareRow {
  Index d = 0;
  double ell = 0.0;
  double v = 0.0;
  std::vector<double> lags;
  std::vector<double> acf_chain;  // mean over replicates
  std::vector<double> acf_chain_se;
  std::vector<double> acf_em;
  std::vector<double> acf_theory;
  double max_dev_chain = 0.0;
  double max_dev_em = 0.0;
  /// Rescaled horizon over the OU correlation time, summed over replicates.
  double effective_samples = 0.0;
  std::vector<std::string> warnings;
  std::vector<double> trajectory_times;  // first replicate
  std::vector<double> trajectory_values;
};
struct CompareResult {
  std::vector<CompareRow> rows;
};

/// Requires a normal product target and the dominance condition.
CompareResult diffusion_compare(const ExperimentPlan& plan, StudyContext ctx = {});

struct ErRow {
  Index d = 0;
  double e_r = 0.0;
  double sum_r_mean = 0.0;
  double sum_r_se = 0.0;
  double rel_error = 0.0;
  /// RMS over r_seeds single-draw values of |sum R - E_R|.
  double rms_deviation = 0.0;
  /// rms(d_k) / rms(d_{k-1}), observed and predicted by the variance order.
  std::optional<double> rms_ratio;
  std::optional<double> rms_ratio_predicted;
};
struct ErResult {
  std::vector<ErRow> rows;
};
ErResult er_convergence(const ExperimentPlan& plan, StudyContext ctx = {});

/// Exponent e with Var(sum R) of order d^e.
Rational er_variance_order(const ScalingAnalysis& analysis);

struct RunOutcome {
  std::filesystem::path dir;
  bool partial_failure = false;
  std::vector<std::string> failures;
  nlohmann::json summary;
};

/// Runs plan.studies, writing CSV/JSON outputs, summary.json, verdict.txt and
/// manifest.json into `out`. `config` is the document the plan was read from;
/// it is embedded in the manifest so the run can be repeated.
RunOutcome run_plan(const ExperimentPlan& plan, const nlohmann::json& config, const std::filesystem::path& out,
                    std::function<void(const std::string&)> log = {});

std::uint64_t fnv1a(std::string_view bytes);
/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

/// Runs fn(0..n-1) on up to `threads` workers. Exceptions are rethrown for
/// the lowest failing index after all work finishes.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace optscale
