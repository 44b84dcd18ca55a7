#include "optscale/experiments.hpp"

#include "optscale/format.hpp"
#include "optscale/speed.hpp"

#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace optscale {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Targets

DensityFamily TargetSpec::density() const {
  if (is_product()) return DensityFamily::from_name(family, scale);
  return DensityFamily::normal();
}

std::string TargetSpec::name() const {
  switch (kind) {
    case Kind::Product:
      return "product/" + family;
    case Kind::Intraclass:
      return "intraclass";
    case Kind::Hierarchical:
      return "hierarchical";
    case Kind::Identity:
      return "identity";
  }
  return "?";
}

TargetModel TargetSpec::gaussian_model(Index d) const {
  switch (kind) {
    case Kind::Intraclass:
      return TargetModel::intraclass(d, diag, offdiag);
    case Kind::Hierarchical:
      return TargetModel::hierarchical(d);
    case Kind::Identity:
      return TargetModel::diagonal(Vector::Ones(d));
    case Kind::Product:
      break;
  }
  throw std::invalid_argument("gaussian_model: product targets are built from a scaling vector");
}

Matrix TargetSpec::covariance(Index d) const { return gaussian_model(d).covariance(); }

std::vector<double> log_grid(double lo, double hi, int points) {
  if (!(lo > 0.0) || !(hi >= lo) || points < 1) throw std::invalid_argument("log_grid: need 0 < lo <= hi, points >= 1");
  std::vector<double> out;
  if (points == 1) return {lo};
  const double step = std::log(hi / lo) / (points - 1);
  for (int k = 0; k < points; ++k) out.push_back(lo * std::exp(step * k));
  out.back() = hi;
  return out;
}

ResolvedPlan resolve(const ExperimentPlan& plan) {
  if (plan.target.is_product()) {
    const auto report = validate_family(plan.target.density());
    if (!report.ok()) {
      throw std::invalid_argument("family " + plan.target.family + " fails the regularity check: " +
                                  report.violations.front());
    }
  }
  std::optional<SpectrumClassification> spectrum;
  std::optional<ScalingVector> raw = plan.scaling;
  if (!raw) {
    if (plan.target.is_product()) throw std::invalid_argument("product targets need a scaling_vector");
    spectrum = classify_spectrum([&](Index d) { return plan.target.covariance(d); }, plan.spectrum_grid);
    raw = spectrum->scaling;
  }
  if (!std::holds_alternative<std::monostate>(plan.component)) raw = raw->with_component(plan.component);
  auto analysis = analyze(*raw, plan.target.density().fisher(), plan.mode);
  return {*raw, std::move(analysis), std::move(spectrum)};
}

CellTarget build_cell_target(const ExperimentPlan& plan, const ResolvedPlan& resolved, Index d, Rng& rng) {
  const auto& a = resolved.analysis;
  if (plan.target.is_product()) {
    auto m = materialize(a.normalized, d, plan.target.density(), rng);
    auto alphas = component_alphas(m, a);
    const Index istar = m.istar;
    auto cls = m.target.exchangeable_class(istar);
    const Rational ia = alphas[static_cast<std::size_t>(istar)];
    return {std::move(m.target), istar, std::move(alphas), 1.0, std::move(cls), ia};
  }

  // Gaussian kinds are sampled in their own coordinates. The scaling vector
  // describes eigen-directions, so only a bulk (group) i* maps onto coordinates.
  const auto* gm = std::get_if<GroupMemberRef>(&resolved.raw.component_of_interest());
  if (!gm) throw std::invalid_argument("sampling a Gaussian target needs a group-member component of interest");
  if (plan.mode != ProposalMode::Homogeneous) {
    throw std::invalid_argument("Gaussian targets support the homogeneous proposal only");
  }
  auto target = plan.target.gaussian_model(d);
  const Index istar = plan.target.kind == TargetSpec::Kind::Hierarchical ? 1 : 0;
  const auto& g = resolved.raw.groups()[gm->index];
  const double istar_scale = g.nominal_constant() * std::pow(static_cast<double>(d), -to_double(g.gamma));
  auto cls = target.exchangeable_class(istar);
  return {std::move(target), istar, std::vector<Rational>(static_cast<std::size_t>(d), a.alpha), istar_scale,
          std::move(cls), a.alpha};
}

// ---------------------------------------------------------------------------
// Argmax fitting

namespace {

/// Lagrange quadratic through three points evaluated at x.
double quad_interp(const double* xs, const double* ys, double x) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    double w = 1.0;
    for (int j = 0; j < 3; ++j) {
      if (j != i) w *= (x - xs[j]) / (xs[i] - xs[j]);
    }
    s += w * ys[i];
  }
  return s;
}

}  // namespace

ArgmaxFit fit_argmax(const std::vector<double>& ells, const std::vector<double>& efficiency,
                     const std::vector<double>& accept) {
  const std::size_t n = ells.size();
  if (n == 0 || efficiency.size() != n || accept.size() != n) throw std::invalid_argument("fit_argmax: bad input");
  const auto k = static_cast<std::size_t>(std::max_element(efficiency.begin(), efficiency.end()) - efficiency.begin());
  ArgmaxFit fit{ells[k], accept[k], k == 0 || k + 1 == n};
  if (n < 3) return fit;

  const std::size_t lo = std::clamp<std::size_t>(k, 1, n - 2) - 1;
  const double xs[3] = {std::log(ells[lo]), std::log(ells[lo + 1]), std::log(ells[lo + 2])};
  const double ys[3] = {efficiency[lo], efficiency[lo + 1], efficiency[lo + 2]};
  const double as[3] = {accept[lo], accept[lo + 1], accept[lo + 2]};

  // y = c2 x^2 + c1 x + c0 through the three points.
  const double d01 = (ys[1] - ys[0]) / (xs[1] - xs[0]);
  const double d12 = (ys[2] - ys[1]) / (xs[2] - xs[1]);
  const double c2 = (d12 - d01) / (xs[2] - xs[0]);
  const double c1 = d01 - c2 * (xs[0] + xs[1]);
  double x = std::log(ells[k]);
  if (c2 < 0.0) x = std::clamp(-c1 / (2.0 * c2), xs[0], xs[2]);
  fit.ell = std::exp(x);
  fit.accept = std::clamp(quad_interp(xs, as, x), 0.0, 1.0);
  return fit;
}

// ---------------------------------------------------------------------------
// Work pool

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::uint64_t h = fnv1a(bytes);
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

constexpr std::uint64_t kTargetStream = 0x7a29e7;
constexpr std::uint64_t kBootstrapStream = 0xb0075;
constexpr std::uint64_t kEmStream = 0xe111;

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double se_of_mean(const std::vector<double>& v) {
  if (v.size() < 2) return std::nan("");
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const auto n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

void note(StudyContext& ctx, const std::string& msg) {
  if (ctx.log) ctx.log(msg);
}

std::string cell_key(Index d, double ell, int replicate) {
  return "d=" + std::to_string(d) + ",ell=" + format_double(ell) + ",rep=" + std::to_string(replicate);
}

std::vector<Index> sorted_dims(const ExperimentPlan& plan) {
  auto dims = plan.dims;
  std::sort(dims.begin(), dims.end());
  dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
  if (dims.empty()) throw std::invalid_argument("plan has an empty dimension list");
  return dims;
}

void bootstrap_optimum(const std::vector<const SweepRow*>& rows, int resamples, std::uint64_t seed,
                       SweepOptimum& opt) {
  for (const auto* r : rows) {
    if (r->batch_accept.size() < 2) {
      opt.accept_se = opt.ci_low = opt.ci_high = std::nan("");
      return;
    }
  }
  if (resamples < 2 || rows.size() < 3) {
    opt.accept_se = opt.ci_low = opt.ci_high = std::nan("");
    return;
  }
  Rng rng(seed);
  std::vector<double> ells;
  for (const auto* r : rows) ells.push_back(r->ell);
  std::vector<double> eff(rows.size());
  std::vector<double> acc(rows.size());
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = *rows[i];
      const std::size_t nb = r.batch_accept.size();
      boost::random::uniform_int_distribution<std::size_t> pick(0, nb - 1);
      double sa = 0.0;
      double se = 0.0;
      for (std::size_t k = 0; k < nb; ++k) {
        const std::size_t j = pick(rng);
        sa += r.batch_accept[j];
        se += r.batch_efficiency[j];
      }
      acc[i] = sa / static_cast<double>(nb);
      eff[i] = se / static_cast<double>(nb);
    }
    draws.push_back(fit_argmax(ells, eff, acc).accept);
  }
  const double m = mean_of(draws);
  double ss = 0.0;
  for (double x : draws) ss += (x - m) * (x - m);
  opt.accept_se = std::sqrt(ss / static_cast<double>(draws.size() - 1));
  std::sort(draws.begin(), draws.end());
  const auto q = [&](double p) {
    const auto idx = static_cast<std::size_t>(std::floor(p * static_cast<double>(draws.size() - 1)));
    return draws[idx];
  };
  opt.ci_low = q(0.025);
  opt.ci_high = q(0.975);
}

}  // namespace

SweepResult sweep_ell(const ExperimentPlan& plan, const ResolvedPlan& resolved, const std::string& study,
                      StudyContext ctx) {
  if (plan.ell_grid.empty()) throw std::invalid_argument("plan has an empty ell grid");
  if (plan.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (plan.replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  const auto& a = resolved.analysis;

  SweepResult res;
  res.has_theory = a.optimum.has_value();
  if (res.has_theory) {
    res.e_r = a.e_r();
    res.ell_hat = a.optimum->ell_hat;
    res.aoar = a.optimum->aoar;
  }
  std::vector<double> ells = plan.ell_grid;
  if (plan.ell_grid_relative) {
    if (!res.ell_hat) throw std::invalid_argument("a relative ell grid needs the dominance condition to hold");
    for (auto& e : ells) e *= *res.ell_hat;
  }
  std::sort(ells.begin(), ells.end());
  for (double e : ells) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw std::invalid_argument("ell grid values must be finite and >= 0");
  }
  const auto dims = sorted_dims(plan);
  const int reps = plan.replicates;
  const std::uint64_t key = fnv1a(study);

  // One target per (d, replicate), shared across the ell grid.
  std::vector<std::optional<CellTarget>> targets(dims.size() * static_cast<std::size_t>(reps));
  std::vector<std::string> target_errors(targets.size());
  for (std::size_t di = 0; di < dims.size(); ++di) {
    for (int r = 0; r < reps; ++r) {
      const std::size_t t = di * static_cast<std::size_t>(reps) + static_cast<std::size_t>(r);
      Rng rng(derive_seed(plan.seed, {key, static_cast<std::uint64_t>(dims[di]), static_cast<std::uint64_t>(r),
                                      kTargetStream}));
      try {
        targets[t] = build_cell_target(plan, resolved, dims[di], rng);
        const double need = 10.0 * std::pow(static_cast<double>(dims[di]), to_double(targets[t]->istar_alpha));
        if (r == 0 && static_cast<double>(plan.iterations) < need) {
          note(ctx, study + ": d=" + std::to_string(dims[di]) + " runs " + std::to_string(plan.iterations) +
                        " iterations, fewer than 10 d^alpha = " + format_double(need));
        }
      } catch (const std::exception& e) {
        target_errors[t] = e.what();
      }
    }
  }

  struct Cell {
    std::size_t row;
    std::size_t target;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t di = 0; di < dims.size(); ++di) {
    for (std::size_t li = 0; li < ells.size(); ++li) {
      SweepRow row;
      row.d = dims[di];
      row.ell = ells[li];
      row.replicates = reps;
      row.iterations = plan.iterations;
      const std::size_t row_index = res.rows.size();
      res.rows.push_back(std::move(row));
      for (int r = 0; r < reps; ++r) {
        const std::uint64_t seed = derive_seed(plan.seed, {key, static_cast<std::uint64_t>(dims[di]),
                                                            static_cast<std::uint64_t>(li), static_cast<std::uint64_t>(r)});
        cells.push_back({row_index, di * static_cast<std::size_t>(reps) + static_cast<std::size_t>(r), seed});
        if (ctx.seeds) ctx.seeds->push_back({study, cell_key(dims[di], ells[li], r), seed});
      }
    }
  }

  std::vector<std::optional<ChainDiagnostics>> diags(cells.size());
  std::vector<std::string> errors(cells.size());
  std::mutex log_mutex;
  parallel_for(cells.size(), plan.threads, [&](std::size_t i) {
    const auto& c = cells[i];
    const auto& row = res.rows[c.row];
    if (!targets[c.target]) {
      errors[i] = target_errors[c.target];
      return;
    }
    const auto& ct = *targets[c.target];
    try {
      RecordOptions rec;
      rec.trajectory = false;
      rec.esjd_class = ct.esjd_class;
      diags[i] = run_chain(ct.target, ct.proposal(row.ell), plan.iterations, ct.istar, rec, c.seed);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
    if (ctx.log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      ctx.log(study + ": " + cell_key(row.d, row.ell, static_cast<int>(c.target % static_cast<std::size_t>(reps))) +
              (errors[i].empty() ? " done" : " failed: " + errors[i]));
    }
  });

  // Deterministic merge in cell order.
  std::vector<std::vector<std::size_t>> by_row(res.rows.size());
  for (std::size_t i = 0; i < cells.size(); ++i) by_row[cells[i].row].push_back(i);
  for (std::size_t ri = 0; ri < res.rows.size(); ++ri) {
    auto& row = res.rows[ri];
    std::vector<double> esjd_istar;
    std::vector<double> esjd_rescaled;
    std::vector<double> sum_r;
    std::int64_t accepts = 0;
    std::int64_t iters = 0;
    for (std::size_t i : by_row[ri]) {
      if (!errors[i].empty()) {
        if (row.error.empty()) row.error = errors[i];
        continue;
      }
      const auto& dg = *diags[i];
      const auto& ct = *targets[cells[i].target];
      row.alpha = ct.istar_alpha;
      row.chains.push_back(summarize(dg, ct.istar_alpha));
      accepts += dg.accept_count;
      iters += dg.iterations;
      esjd_istar.push_back(dg.esjd_istar());
      esjd_rescaled.push_back(dg.esjd_rescaled());
      sum_r.push_back(dg.mean_sum_r());
      const double denom = static_cast<double>(dg.esjd_class.size()) * dg.istar_scale;
      for (std::size_t b = 0; b < dg.batch_accepts.size(); ++b) {
        if (dg.batch_lengths[b] != dg.batch_size) continue;
        const auto len = static_cast<double>(dg.batch_size);
        row.batch_accept.push_back(static_cast<double>(dg.batch_accepts[b]) / len);
        row.batch_efficiency.push_back(dg.time_factor * dg.batch_class_jump[b] / (denom * len));
      }
    }
    if (!row.ok()) continue;
    row.accept = static_cast<double>(accepts) / static_cast<double>(iters);
    row.accept_se = se_of_mean(row.batch_accept);
    row.esjd_istar = mean_of(esjd_istar);
    row.esjd_rescaled = mean_of(esjd_rescaled);
    row.esjd_rescaled_se = se_of_mean(row.batch_efficiency);
    row.sum_r = mean_of(sum_r);
    if (res.has_theory) {
      row.a_theory = limiting_acceptance(row.ell, *res.e_r);
      row.v_theory = speed(row.ell, *res.e_r);
    }
  }

  for (Index d : dims) {
    std::vector<const SweepRow*> rows;
    for (const auto& r : res.rows) {
      if (r.d == d && r.ok()) rows.push_back(&r);
    }
    if (rows.empty()) continue;
    std::vector<double> ell_v;
    std::vector<double> eff;
    std::vector<double> acc;
    for (const auto* r : rows) {
      ell_v.push_back(r->ell);
      eff.push_back(r->esjd_rescaled);
      acc.push_back(r->accept);
    }
    const auto fit = fit_argmax(ell_v, eff, acc);
    SweepOptimum opt;
    opt.d = d;
    opt.ell_argmax = fit.ell;
    opt.accept_at_argmax = fit.accept;
    opt.at_edge = fit.at_edge;
    bootstrap_optimum(rows, plan.bootstrap, derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), kBootstrapStream}),
                      opt);
    res.optima.push_back(opt);
  }
  return res;
}

SweepResult sweep_ell(const ExperimentPlan& plan) { return sweep_ell(plan, resolve(plan)); }

// ---------------------------------------------------------------------------
// Dimension scan

ScalingVector scan_vector(const Rational& lambda) {
  return ScalingVector({OrderTerm{1.0, lambda}}, {GroupSpec{FixedK{1.0}, Rational(0), 1.0, Rational(1)}},
                       FiniteTermRef{0});
}

ScanResult dimension_scan(const ExperimentPlan& plan, StudyContext ctx) {
  if (!plan.target.is_product()) throw std::invalid_argument("scan needs a product target");
  if (plan.scan_lambdas.empty()) throw std::invalid_argument("scan needs at least one lambda");
  ScanResult out;
  for (const auto& lambda : plan.scan_lambdas) {
    ExperimentPlan sub = plan;
    sub.scaling = scan_vector(lambda);
    sub.component = {};
    sub.mode = ProposalMode::Homogeneous;
    const auto resolved = resolve(sub);
    if (!resolved.analysis.optimum) {
      throw std::invalid_argument("scan: lambda = " + to_string(lambda) + " violates the dominance condition; need lambda < 1");
    }
    const double ell_hat = resolved.analysis.optimum->ell_hat;
    const std::string study = "scan/lambda=" + to_string(lambda);
    auto sweep = sweep_ell(sub, resolved, study, ctx);

    ExperimentPlan at = sub;
    at.ell_grid = {ell_hat};
    at.ell_grid_relative = false;
    const auto point = sweep_ell(at, resolved, study + "/ell_hat", ctx);

    for (const auto& opt : sweep.optima) {
      ScanRow row;
      row.lambda = lambda;
      row.d = opt.d;
      row.ell_hat = ell_hat;
      row.optimum = opt;
      row.accept_at_ell_hat = std::nan("");
      row.accept_at_ell_hat_se = std::nan("");
      for (const auto& r : point.rows) {
        if (r.d == opt.d && r.ok()) {
          row.accept_at_ell_hat = r.accept;
          row.accept_at_ell_hat_se = r.accept_se;
        }
      }
      out.rows.push_back(row);
    }
    out.sweeps.push_back(std::move(sweep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Violation demonstration

ViolationReport violation_demo(const ExperimentPlan& plan, StudyContext ctx) {
  const auto resolved = resolve(plan);
  ViolationReport rep;
  rep.verdict = resolved.analysis.condition5.verdict;
  if (rep.verdict != Verdict::Violated) {
    throw std::invalid_argument("violation demo expects a target whose dominance condition fails");
  }
  rep.sweep = sweep_ell(plan, resolved, "violation", ctx);
  const double ref = unit_optimum().aoar;
  for (const auto& opt : rep.sweep.optima) rep.z_below_aoar.push_back((ref - opt.accept_at_argmax) / opt.accept_se);
  return rep;
}

// ---------------------------------------------------------------------------
// Chain versus diffusion

CompareResult diffusion_compare(const ExperimentPlan& plan, StudyContext ctx) {
  if (!plan.target.is_product() || plan.target.family != "normal") {
    throw std::invalid_argument("compare needs a normal product target: the OU autocorrelation is the only oracle");
  }
  const auto resolved = resolve(plan);
  const auto& a = resolved.analysis;
  if (!a.optimum) throw std::invalid_argument("compare needs the dominance condition to hold");
  const double ell = plan.ell.value_or(a.optimum->ell_hat);
  const double v = speed(ell, a.e_r());
  const double sigma = plan.target.scale;
  const std::uint64_t key = fnv1a("compare");
  const int reps = plan.replicates;
  CompareResult out;

  for (Index d : sorted_dims(plan)) {
    CompareRow row;
    row.d = d;
    row.ell = ell;
    row.v = v;
    row.lags = plan.acf_lags;
    std::vector<std::vector<double>> acfs;
    double horizon = 0.0;
    for (int r = 0; r < reps; ++r) {
      Rng trng(derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(r), kTargetStream}));
      const auto ct = build_cell_target(plan, resolved, d, trng);
      const std::uint64_t seed =
          derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(r)});
      if (ctx.seeds) ctx.seeds->push_back({"compare", cell_key(d, ell, r), seed});
      RecordOptions rec;
      rec.dt = plan.trajectory_dt;
      rec.trajectory_budget = plan.trajectory_budget;
      rec.roughness = false;
      rec.esjd_class = ct.esjd_class;
      const auto dg = run_chain(ct.target, ct.proposal(ell), plan.iterations, ct.istar, rec, seed);
      const double h = static_cast<double>(dg.trajectory_stride) / dg.time_factor;
      horizon += static_cast<double>(dg.iterations) / dg.time_factor;
      std::vector<double> acf;
      for (const auto& p : acf_against_ou(dg.trajectory_values, h, plan.acf_lags, v, sigma)) {
        acf.push_back(std::isnan(p.empirical) ? 1.0 : p.empirical);
        if (std::isnan(p.empirical) && row.warnings.empty()) {
          row.warnings.push_back("degenerate: constant trajectory, ACF reported as 1");
        }
        if (std::abs(p.tau_used - p.tau) > 0.5 * h + 1e-12) row.warnings.push_back("lag beyond trajectory");
      }
      acfs.push_back(std::move(acf));
      if (r == 0) {
        row.trajectory_times = dg.trajectory_times();
        row.trajectory_values = dg.trajectory_values;
      }
      note(ctx, "compare: " + cell_key(d, ell, r) + " done");
    }
    for (std::size_t k = 0; k < plan.acf_lags.size(); ++k) {
      std::vector<double> vals;
      for (const auto& acf : acfs) vals.push_back(acf[k]);
      row.acf_chain.push_back(mean_of(vals));
      row.acf_chain_se.push_back(se_of_mean(vals));
      row.acf_theory.push_back(ou_autocorrelation(v, plan.acf_lags[k], sigma));
    }

    // Euler-Maruyama reference over the same total rescaled horizon.
    DiffusionParams dp{v, plan.target.density(), plan.em_dt};
    Rng erng(derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), kEmStream}));
    Gaussian g0;
    const double z0 = dp.family.sample(erng, g0);
    const auto steps = static_cast<std::int64_t>(std::ceil(horizon / plan.em_dt));
    const auto z = euler_maruyama(dp, z0, steps, erng);
    for (const auto& p : acf_against_ou(z, plan.em_dt, plan.acf_lags, v, sigma)) {
      row.acf_em.push_back(std::isnan(p.empirical) ? 1.0 : p.empirical);
    }
    for (std::size_t k = 0; k < plan.acf_lags.size(); ++k) {
      row.max_dev_chain = std::max(row.max_dev_chain, std::abs(row.acf_chain[k] - row.acf_theory[k]));
      row.max_dev_em = std::max(row.max_dev_em, std::abs(row.acf_em[k] - row.acf_theory[k]));
    }
    row.effective_samples = v > 0.0 ? horizon * v / (2.0 * sigma * sigma) : 0.0;
    if (row.effective_samples < 1000.0) {
      row.warnings.push_back("effective sample size " + format_double(std::round(row.effective_samples)) +
                             " is below 1000; ACF estimates are noisy");
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Roughness convergence

Rational er_variance_order(const ScalingAnalysis& a) {
  const auto& groups = a.normalized.groups();
  std::optional<Rational> best;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Rational alpha_i = a.mode == ProposalMode::Homogeneous ? a.alpha : a.alpha_per_group[i];
    const Rational e = groups[i].card_exponent + 2 * groups[i].gamma - 2 * alpha_i;
    if (!best || e > *best) best = e;
  }
  return *best;
}

ErResult er_convergence(const ExperimentPlan& plan, StudyContext ctx) {
  if (!plan.target.is_product()) throw std::invalid_argument("E_R convergence needs a product target");
  if (plan.r_draws < 1 || plan.r_seeds < 2) throw std::invalid_argument("need r_draws >= 1 and r_seeds >= 2");
  const auto resolved = resolve(plan);
  const auto& a = resolved.analysis;
  const double e_r = a.e_r();
  const std::uint64_t key = fnv1a("er");
  const Rational order = er_variance_order(a);
  const auto family = plan.target.density();
  ErResult out;

  for (Index d : sorted_dims(plan)) {
    ErRow row;
    row.d = d;
    row.e_r = e_r;
    {
      const std::uint64_t seed = derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), 0});
      if (ctx.seeds) ctx.seeds->push_back({"er", "d=" + std::to_string(d) + ",mean", seed});
      Rng rng(seed);
      const auto m = materialize(a.normalized, d, family, rng);
      const auto est = empirical_r(m, component_alphas(m, a), plan.r_draws, rng);
      row.sum_r_mean = est.sum_mean;
      row.sum_r_se = est.sum_se;
      row.rel_error = std::abs(est.sum_mean - e_r) / e_r;
    }
    double ss = 0.0;
    for (int s = 0; s < plan.r_seeds; ++s) {
      const std::uint64_t seed =
          derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(s) + 1});
      if (ctx.seeds) ctx.seeds->push_back({"er", "d=" + std::to_string(d) + ",seed=" + std::to_string(s), seed});
      Rng rng(seed);
      const auto m = materialize(a.normalized, d, family, rng);
      const auto est = empirical_r(m, component_alphas(m, a), 1, rng);
      ss += (est.sum_mean - e_r) * (est.sum_mean - e_r);
    }
    row.rms_deviation = std::sqrt(ss / plan.r_seeds);
    if (!out.rows.empty()) {
      const auto& prev = out.rows.back();
      row.rms_ratio = row.rms_deviation / prev.rms_deviation;
      row.rms_ratio_predicted =
          std::pow(static_cast<double>(d) / static_cast<double>(prev.d), 0.5 * to_double(order));
    }
    note(ctx, "er: d=" + std::to_string(d) + " done");
    out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plan runner

namespace {

std::string opt_cell(const std::optional<double>& x) { return x ? format_double(*x) : std::string(); }

std::string sweep_csv(const SweepResult& s) {
  std::ostringstream os;
  os << "d,ell,replicates,iterations,alpha,accept_emp,accept_se,esjd_rescaled,esjd_rescaled_se,sum_R";
  if (s.has_theory) os << ",a_theory,v_theory";
  os << ",status\n";
  for (const auto& r : s.rows) {
    os << r.d << ',' << format_double(r.ell) << ',' << r.replicates << ',' << r.iterations << ','
       << to_string(r.alpha) << ',' << format_double(r.accept) << ',' << format_double(r.accept_se) << ','
       << format_double(r.esjd_rescaled) << ',' << format_double(r.esjd_rescaled_se) << ','
       << format_double(r.sum_r);
    if (s.has_theory) os << ',' << opt_cell(r.a_theory) << ',' << opt_cell(r.v_theory);
    std::string status = r.ok() ? "ok" : "error: " + r.error;
    std::replace(status.begin(), status.end(), ',', ';');
    os << ',' << status << '\n';
  }
  return os.str();
}

std::string optimum_csv(const std::vector<SweepOptimum>& optima) {
  std::ostringstream os;
  os << "d,ell_argmax,accept_at_argmax,accept_se,ci_low,ci_high,at_edge\n";
  for (const auto& o : optima) {
    os << o.d << ',' << format_double(o.ell_argmax) << ',' << format_double(o.accept_at_argmax) << ','
       << format_double(o.accept_se) << ',' << format_double(o.ci_low) << ',' << format_double(o.ci_high) << ','
       << (o.at_edge ? "true" : "false") << '\n';
  }
  return os.str();
}

std::string chains_csv(const SweepResult& s) {
  std::ostringstream os;
  write_chain_csv_header(os);
  for (const auto& r : s.rows) {
    for (const auto& c : r.chains) write_chain_csv_row(os, c);
  }
  return os.str();
}

nlohmann::json optimum_json(const SweepOptimum& o) {
  return {{"d", o.d},
          {"ell_argmax", o.ell_argmax},
          {"accept_at_argmax", o.accept_at_argmax},
          {"accept_se", std::isfinite(o.accept_se) ? nlohmann::json(o.accept_se) : nlohmann::json()},
          {"ci", {std::isfinite(o.ci_low) ? nlohmann::json(o.ci_low) : nlohmann::json(),
                  std::isfinite(o.ci_high) ? nlohmann::json(o.ci_high) : nlohmann::json()}},
          {"at_edge", o.at_edge}};
}

std::string file_tag(const Rational& r) {
  std::string s = to_string(r);
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

nlohmann::json tolerances() {
  return {{"acceptance_band", {0.18, 0.30}},
          {"se_multiplier", 2.0},
          {"esjd_relative", 0.15},
          {"acf_max_deviation", 0.05},
          {"er_relative", {{"1000", 0.05}, {"10000", 0.02}}},
          {"aoar_anchor", 0.234},
          {"ell_anchor", 2.38}};
}

}  // namespace

RunOutcome run_plan(const ExperimentPlan& plan, const nlohmann::json& config, const fs::path& out,
                    std::function<void(const std::string&)> log) {
  RunOutcome outcome;
  outcome.dir = out;
  std::map<std::string, std::string> files;
  std::vector<CellSeed> seeds;
  StudyContext ctx{&seeds, log};
  nlohmann::json summary;
  summary["schema_version"] = kSchemaVersion;
  std::vector<std::string> verdict;

  const auto resolved = resolve(plan);
  const auto& a = resolved.analysis;
  files["analysis.json"] = to_json(a).dump(2) + "\n";
  if (resolved.spectrum) {
    std::ostringstream os;
    write_spectrum_csv(os, *resolved.spectrum);
    files["spectrum.csv"] = os.str();
  }
  summary["analysis"] = analysis_headline(a);
  verdict.push_back("target: " + plan.target.name());
  verdict.push_back("analysis: " + analysis_headline(a));
  if (a.optimum) {
    std::vector<double> ells = log_grid(0.05, 10.0 / std::sqrt(a.e_r()), 200);
    std::ostringstream os;
    write_speed_curve_csv(os, ells, a.e_r());
    files["speed_curve.csv"] = os.str();
  }

  const double band_lo = 0.18;
  const double band_hi = 0.30;
  auto fail = [&](const std::string& what) {
    outcome.partial_failure = true;
    outcome.failures.push_back(what);
    verdict.push_back("FAILED " + what);
  };
  auto record_row_errors = [&](const std::string& study, const SweepResult& s) {
    for (const auto& r : s.rows) {
      if (!r.ok()) fail(study + " cell d=" + std::to_string(r.d) + " ell=" + format_double(r.ell) + ": " + r.error);
    }
  };

  for (const auto& study : plan.studies) {
    try {
      if (study == "simulate") {
        if (!plan.ell && !a.optimum) throw std::invalid_argument("simulate needs experiment.ell when the dominance condition fails");
        const double ell = plan.ell.value_or(a.optimum ? a.optimum->ell_hat : 0.0);
        const std::uint64_t key = fnv1a("simulate");
        std::ostringstream csv;
        write_chain_csv_header(csv);
        nlohmann::json chains = nlohmann::json::array();
        for (Index d : sorted_dims(plan)) {
          for (int r = 0; r < plan.replicates; ++r) {
            Rng trng(derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(r), kTargetStream}));
            const auto ct = build_cell_target(plan, resolved, d, trng);
            const std::uint64_t seed =
                derive_seed(plan.seed, {key, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(r)});
            seeds.push_back({"simulate", cell_key(d, ell, r), seed});
            RecordOptions rec;
            rec.dt = plan.trajectory_dt;
            rec.trajectory_budget = plan.trajectory_budget;
            rec.esjd_class = ct.esjd_class;
            const auto dg = run_chain(ct.target, ct.proposal(ell), plan.iterations, ct.istar, rec, seed);
            const auto row = summarize(dg, ct.istar_alpha);
            write_chain_csv_row(csv, row);
            chains.push_back(to_json(dg));
            std::ostringstream traj;
            const auto times = dg.trajectory_times();
            write_trajectory_csv(traj, times, dg.trajectory_values);
            files["trajectory_d" + std::to_string(d) + "_r" + std::to_string(r) + ".csv"] = traj.str();
            verdict.push_back("simulate d=" + std::to_string(d) + " ell=" + format_fixed(ell, 4) +
                              ": acceptance " + format_fixed(row.accept_rate, 4) + " (se " +
                              format_fixed(row.accept_se, 4) + "), rescaled ESJD " + format_fixed(row.esjd_rescaled, 4));
            if (log) log("simulate: " + cell_key(d, ell, r) + " done");
          }
        }
        files["chains.csv"] = csv.str();
        files["chains.json"] = nlohmann::json{{"schema_version", kSchemaVersion}, {"chains", chains}}.dump(1) + "\n";
        summary["simulate"] = {{"chains", chains.size()}};
      } else if (study == "sweep") {
        const auto s = sweep_ell(plan, resolved, "sweep", ctx);
        record_row_errors("sweep", s);
        files["sweep.csv"] = sweep_csv(s);
        files["sweep_optimum.csv"] = optimum_csv(s.optima);
        files["sweep_chains.csv"] = chains_csv(s);
        nlohmann::json js = nlohmann::json::array();
        for (const auto& o : s.optima) {
          js.push_back(optimum_json(o));
          const bool in_band = o.accept_at_argmax >= band_lo && o.accept_at_argmax <= band_hi;
          verdict.push_back("sweep d=" + std::to_string(o.d) + ": optimal acceptance " +
                            format_fixed(o.accept_at_argmax, 4) + " at ell " + format_fixed(o.ell_argmax, 3) +
                            (in_band ? " (inside" : " (outside") + " [0.18, 0.30])" + (o.at_edge ? ", at grid edge" : ""));
        }
        summary["sweep"] = {{"optima", js}, {"has_theory", s.has_theory}};
      } else if (study == "scan") {
        const auto sc = dimension_scan(plan, ctx);
        std::ostringstream os;
        os << "lambda,d,ell_hat,accept_at_ell_hat,accept_at_ell_hat_se,ell_opt,accept_opt,accept_opt_se,ci_low,ci_high,"
              "at_edge\n";
        nlohmann::json js = nlohmann::json::array();
        for (const auto& r : sc.rows) {
          const auto& o = r.optimum;
          os << to_string(r.lambda) << ',' << r.d << ',' << format_double(r.ell_hat) << ','
             << format_double(r.accept_at_ell_hat) << ',' << format_double(r.accept_at_ell_hat_se) << ','
             << format_double(o.ell_argmax) << ',' << format_double(o.accept_at_argmax) << ','
             << format_double(o.accept_se) << ',' << format_double(o.ci_low) << ',' << format_double(o.ci_high) << ','
             << (o.at_edge ? "true" : "false") << '\n';
          auto j = optimum_json(o);
          j["lambda"] = to_string(r.lambda);
          js.push_back(j);
          const double z = (o.accept_at_argmax - unit_optimum().aoar) / o.accept_se;
          verdict.push_back("scan lambda=" + to_string(r.lambda) + " d=" + std::to_string(r.d) +
                            ": optimal acceptance " + format_fixed(o.accept_at_argmax, 4) + " (" +
                            format_fixed(z, 2) + " SE from 0.234)");
        }
        for (std::size_t k = 0; k < sc.sweeps.size(); ++k) {
          const std::string tag = file_tag(plan.scan_lambdas[k]);
          record_row_errors("scan", sc.sweeps[k]);
          files["scan_sweep_lambda_" + tag + ".csv"] = sweep_csv(sc.sweeps[k]);
        }
        files["scan.csv"] = os.str();
        summary["scan"] = js;
      } else if (study == "violation") {
        const auto rep = violation_demo(plan, ctx);
        record_row_errors("violation", rep.sweep);
        files["violation_sweep.csv"] = sweep_csv(rep.sweep);
        files["violation_optimum.csv"] = optimum_csv(rep.sweep.optima);
        nlohmann::json js = nlohmann::json::array();
        for (std::size_t k = 0; k < rep.sweep.optima.size(); ++k) {
          const auto& o = rep.sweep.optima[k];
          auto j = optimum_json(o);
          j["z_below_aoar"] = std::isfinite(rep.z_below_aoar[k]) ? nlohmann::json(rep.z_below_aoar[k]) : nlohmann::json();
          js.push_back(j);
          verdict.push_back("violation d=" + std::to_string(o.d) + ": condition5=violated, no theory AOAR; "
                            "empirical optimal acceptance " + format_fixed(o.accept_at_argmax, 4) + " (" +
                            format_fixed(rep.z_below_aoar[k], 2) + " SE below 0.234)");
        }
        summary["violation"] = {{"verdict", to_string(rep.verdict)}, {"optima", js}};
      } else if (study == "compare") {
        const auto cmp = diffusion_compare(plan, ctx);
        std::ostringstream acf;
        acf << "d,ell,v,lag,acf_chain,acf_chain_se,acf_em,acf_theory\n";
        std::ostringstream sum;
        sum << "d,ell,v,max_dev_chain,max_dev_em,effective_samples,warnings\n";
        nlohmann::json js = nlohmann::json::array();
        for (const auto& r : cmp.rows) {
          for (std::size_t k = 0; k < r.lags.size(); ++k) {
            acf << r.d << ',' << format_double(r.ell) << ',' << format_double(r.v) << ',' << format_double(r.lags[k])
                << ',' << format_double(r.acf_chain[k]) << ',' << format_double(r.acf_chain_se[k]) << ','
                << format_double(r.acf_em[k]) << ',' << format_double(r.acf_theory[k]) << '\n';
          }
          std::string warn;
          for (const auto& w : r.warnings) warn += (warn.empty() ? "" : "; ") + w;
          std::replace(warn.begin(), warn.end(), ',', ' ');
          sum << r.d << ',' << format_double(r.ell) << ',' << format_double(r.v) << ','
              << format_double(r.max_dev_chain) << ',' << format_double(r.max_dev_em) << ','
              << format_double(r.effective_samples) << ',' << warn << '\n';
          std::ostringstream traj;
          write_trajectory_csv(traj, r.trajectory_times, r.trajectory_values);
          files["compare_trajectory_d" + std::to_string(r.d) + ".csv"] = traj.str();
          js.push_back({{"d", r.d},
                        {"max_dev_chain", r.max_dev_chain},
                        {"max_dev_em", r.max_dev_em},
                        {"warnings", r.warnings}});
          verdict.push_back("compare d=" + std::to_string(r.d) + ": max |ACF - exp(-v tau/2)| chain " +
                            format_fixed(r.max_dev_chain, 4) + ", Euler-Maruyama " + format_fixed(r.max_dev_em, 4));
        }
        files["compare_acf.csv"] = acf.str();
        files["compare.csv"] = sum.str();
        summary["compare"] = js;
      } else if (study == "er_convergence") {
        const auto er = er_convergence(plan, ctx);
        std::ostringstream os;
        os << "d,e_r,sum_R_mean,sum_R_se,rel_error,rms_deviation,rms_ratio,rms_ratio_predicted\n";
        nlohmann::json js = nlohmann::json::array();
        for (const auto& r : er.rows) {
          os << r.d << ',' << format_double(r.e_r) << ',' << format_double(r.sum_r_mean) << ','
             << format_double(r.sum_r_se) << ',' << format_double(r.rel_error) << ','
             << format_double(r.rms_deviation) << ',' << opt_cell(r.rms_ratio) << ',' << opt_cell(r.rms_ratio_predicted)
             << '\n';
          js.push_back({{"d", r.d}, {"sum_R_mean", r.sum_r_mean}, {"rel_error", r.rel_error}});
          verdict.push_back("er d=" + std::to_string(r.d) + ": mean sum R " + format_fixed(r.sum_r_mean, 4) +
                            " vs E_R " + format_fixed(r.e_r, 4) + " (relative error " + format_fixed(r.rel_error, 4) +
                            ")");
        }
        files["er_convergence.csv"] = os.str();
        summary["er_convergence"] = js;
      } else {
        throw std::invalid_argument("unknown study '" + study + "'");
      }
    } catch (const std::exception& e) {
      fail(study + ": " + e.what());
    }
  }

  summary["status"] = outcome.partial_failure ? "partial_failure" : "ok";
  summary["failures"] = outcome.failures;
  outcome.summary = summary;
  files["summary.json"] = summary.dump(2) + "\n";
  std::string vt;
  for (const auto& line : verdict) vt += line + "\n";
  files["verdict.txt"] = vt;

  nlohmann::json manifest;
  manifest["manifest_version"] = 1;
  manifest["tool"] = "optscale";
  manifest["version"] = OPTSCALE_VERSION;
  manifest["config"] = config;
  manifest["config_hash"] = fnv1a_hex(config.dump());
  manifest["master_seed"] = plan.seed;
  manifest["threads"] = plan.threads;
  manifest["tolerances"] = tolerances();
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : seeds) cells.push_back({{"study", c.study}, {"key", c.key}, {"seed", c.seed}});
  manifest["cells"] = cells;
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& [name, content] : files) outputs[name] = fnv1a_hex(content);
  manifest["outputs"] = outputs;
  manifest["status"] = summary["status"];
  files["manifest.json"] = manifest.dump(2) + "\n";

  fs::create_directories(out);
  for (const auto& [name, content] : files) {
    std::ofstream f(out / name, std::ios::binary | std::ios::trunc);
    f << content;
    if (!f) throw std::runtime_error("cannot write " + (out / name).string());
  }
  return outcome;
}

}  // namespace optscale
