#include "optscale/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace optscale {

ProposalSpec ProposalSpec::homogeneous(double ell, const Rational& alpha, Index d, double istar_scale) {
  return inhomogeneous(ell, std::vector<Rational>(static_cast<std::size_t>(d), alpha), istar_scale);
}

ProposalSpec ProposalSpec::inhomogeneous(double ell, std::vector<Rational> alphas, double istar_scale) {
  if (!std::isfinite(ell) || ell < 0.0) throw SamplerError("proposal ell must be finite and >= 0");
  if (!(istar_scale > 0.0)) throw SamplerError("istar scale must be positive");
  if (alphas.empty()) throw SamplerError("proposal needs at least one component");
  ProposalSpec p;
  p.ell = ell;
  p.mode = std::all_of(alphas.begin(), alphas.end(), [&](const Rational& a) { return a == alphas.front(); })
               ? ProposalMode::Homogeneous
               : ProposalMode::Inhomogeneous;
  const auto d = static_cast<double>(alphas.size());
  p.sd.resize(static_cast<Index>(alphas.size()));
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    p.sd[static_cast<Index>(j)] = ell * std::pow(d, -0.5 * to_double(alphas[j])) * std::sqrt(istar_scale);
  }
  p.alphas = std::move(alphas);
  p.istar_scale = istar_scale;
  return p;
}

namespace {

template <typename K>
inline double component_log_f(const K& k, double theta, double x, double sigma, double log_sigma) {
  return k.log_f(theta * x / sigma) - log_sigma;
}

void check_dims(const TargetModel& target, Index x_size, const ProposalSpec& proposal) {
  if (x_size != target.dimension() || proposal.dimension() != target.dimension()) {
    throw SamplerError("dimension mismatch between target, state and proposal");
  }
}

}  // namespace

StepOutcome rwm_step(const TargetModel& target, Eigen::Ref<Vector> x, const ProposalSpec& proposal, Rng& rng,
                     Gaussian& gauss) {
  check_dims(target, x.size(), proposal);
  if (!x.allFinite()) throw SamplerError("rwm_step: non-finite state");
  const Index d = x.size();
  Vector y(d);
  for (Index j = 0; j < d; ++j) y[j] = x[j] + proposal.sd[j] * gauss(rng);

  double log_ratio = 0.0;
  if (const auto* p = target.as_product()) {
    const double sigma = p->family.scale();
    const double log_sigma = std::log(sigma);
    log_ratio = p->family.visit([&](auto k) {
      double s = 0.0;
      for (Index j = 0; j < d; ++j) {
        s += component_log_f(k, p->theta[j], y[j], sigma, log_sigma) -
             component_log_f(k, p->theta[j], x[j], sigma, log_sigma);
      }
      return s;
    });
  } else {
    const double lx = target.log_density(x);
    const double ly = target.log_density(y);
    log_ratio = lx == -std::numeric_limits<double>::infinity() ? std::numeric_limits<double>::infinity() : ly - lx;
  }
  if (std::isnan(log_ratio)) throw SamplerError("rwm_step: non-finite log acceptance ratio");

  const double u = uniform01(rng);
  const bool accepted = std::log(u) < log_ratio;
  if (accepted) x = y;
  return {accepted, log_ratio};
}

namespace {

/// Bookkeeping shared by the product and Gaussian step loops.
class Recorder {
 public:
  Recorder(const TargetModel& target, const ProposalSpec& proposal, std::int64_t iterations, Index istar,
           const RecordOptions& record, std::uint64_t seed)
      : record_(record) {
    const Index d = target.dimension();
    diag_.seed = seed;
    diag_.dimension = d;
    diag_.istar = istar;
    diag_.ell = proposal.ell;
    diag_.istar_scale = proposal.istar_scale;
    diag_.iterations = iterations;
    diag_.sq_jump_sum = Vector::Zero(d);
    diag_.time_factor =
        std::pow(static_cast<double>(d), to_double(proposal.alphas[static_cast<std::size_t>(istar)]));
    diag_.esjd_class = record.esjd_class.empty() ? target.exchangeable_class(istar) : record.esjd_class;
    class_weight_ = Vector::Zero(d);
    for (Index j : diag_.esjd_class) {
      if (j < 0 || j >= d) throw SamplerError("esjd class index out of range");
      class_weight_[j] = 1.0;
    }

    const auto n_batches = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(iterations))));
    diag_.batch_size = (iterations + n_batches - 1) / n_batches;
    const std::int64_t count = (iterations + diag_.batch_size - 1) / diag_.batch_size;
    diag_.batch_accepts.assign(static_cast<std::size_t>(count), 0);
    diag_.batch_class_jump.assign(static_cast<std::size_t>(count), 0.0);
    diag_.batch_lengths.assign(static_cast<std::size_t>(count), 0);
    for (std::int64_t b = 0; b < count; ++b) {
      diag_.batch_lengths[static_cast<std::size_t>(b)] =
          std::min(diag_.batch_size, iterations - b * diag_.batch_size);
    }

    const double stride = std::ceil(diag_.time_factor * record.dt);
    stride_ = static_cast<std::int64_t>(std::clamp(stride, 1.0, 1e15));
    diag_.trajectory_stride = stride_;
    r_stride_ = stride_;

    if (const auto* p = target.as_product(); p && record.roughness) {
      const int groups = *std::max_element(p->block.begin(), p->block.end()) + 1;
      diag_.r_sums.assign(static_cast<std::size_t>(std::max(groups, 0)), 0.0);
      r_weight_ = Vector::Zero(d);
      for (Index j = 0; j < d; ++j) {
        if (p->block[static_cast<std::size_t>(j)] >= 0 && j != istar) {
          r_weight_[j] = std::pow(static_cast<double>(d), -to_double(proposal.alphas[static_cast<std::size_t>(j)]));
        }
      }
      product_ = p;
    }
  }

  void before_step(std::int64_t t, const Vector& x) {
    if (record_.trajectory && t % stride_ == 0) record_point(t, x[diag_.istar]);
    if (product_ && !diag_.r_sums.empty() && t % r_stride_ == 0) record_r(x);
  }

  void after_step(std::int64_t t, bool accepted, const Vector& x, const Vector& y) {
    if (!accepted) return;
    const auto b = static_cast<std::size_t>(t / diag_.batch_size);
    ++diag_.accept_count;
    ++diag_.batch_accepts[b];
    double class_sum = 0.0;
    for (Index j = 0; j < x.size(); ++j) {
      const double dj = y[j] - x[j];
      const double sq = dj * dj;
      diag_.sq_jump_sum[j] += sq;
      class_sum += class_weight_[j] * sq;
    }
    diag_.batch_class_jump[b] += class_sum;
  }

  ChainDiagnostics finish() { return std::move(diag_); }

 private:
  void record_point(std::int64_t t, double value) {
    if (!diag_.trajectory_iterations.empty() && t % stride_ != 0) return;
    diag_.trajectory_iterations.push_back(t);
    diag_.trajectory_values.push_back(value);
    if (record_.trajectory_budget > 1 && diag_.trajectory_iterations.size() > record_.trajectory_budget) {
      // Uniform thinning: keep every other point and double the stride.
      std::size_t keep = 0;
      for (std::size_t k = 0; k < diag_.trajectory_iterations.size(); k += 2, ++keep) {
        diag_.trajectory_iterations[keep] = diag_.trajectory_iterations[k];
        diag_.trajectory_values[keep] = diag_.trajectory_values[k];
      }
      diag_.trajectory_iterations.resize(keep);
      diag_.trajectory_values.resize(keep);
      stride_ *= 2;
      diag_.trajectory_stride = stride_;
    }
  }

  void record_r(const Vector& x) {
    const auto& p = *product_;
    p.family.visit([&](auto k) {
      const double sigma = p.family.scale();
      for (Index j = 0; j < x.size(); ++j) {
        if (r_weight_[j] == 0.0) continue;
        const double g = p.theta[j] * k.dlog_f(p.theta[j] * x[j] / sigma) / sigma;
        diag_.r_sums[static_cast<std::size_t>(p.block[static_cast<std::size_t>(j)])] += r_weight_[j] * g * g;
      }
    });
    ++diag_.r_samples;
  }

  const RecordOptions& record_;
  ChainDiagnostics diag_;
  Vector class_weight_;
  Vector r_weight_;
  const ProductTarget* product_ = nullptr;
  std::int64_t stride_ = 1;
  std::int64_t r_stride_ = 1;
};

}  // namespace

ChainDiagnostics run_chain(const TargetModel& target, const ProposalSpec& proposal, std::int64_t iterations,
                           Index istar, const RecordOptions& record, std::uint64_t seed) {
  if (iterations < 1) throw SamplerError("run_chain: iterations must be >= 1");
  if (proposal.dimension() != target.dimension()) throw SamplerError("run_chain: proposal dimension mismatch");
  if (istar < 0 || istar >= target.dimension()) throw SamplerError("run_chain: i* out of range");

  const Index d = target.dimension();
  Rng rng(seed);
  Gaussian gauss;
  Vector x(d);
  target.sample_into(rng, gauss, x);
  Vector y(d);
  Recorder rec(target, proposal, iterations, istar, record, seed);
  const Vector& sd = proposal.sd;

  if (const auto* p = target.as_product()) {
    const double sigma = p->family.scale();
    const double log_sigma = std::log(sigma);
    p->family.visit([&](auto k) {
      Vector lf(d);
      Vector lf_new(d);
      for (Index j = 0; j < d; ++j) lf[j] = component_log_f(k, p->theta[j], x[j], sigma, log_sigma);
      for (std::int64_t t = 0; t < iterations; ++t) {
        rec.before_step(t, x);
        double log_ratio = 0.0;
        for (Index j = 0; j < d; ++j) {
          y[j] = x[j] + sd[j] * gauss(rng);
          lf_new[j] = component_log_f(k, p->theta[j], y[j], sigma, log_sigma);
          log_ratio += lf_new[j] - lf[j];
        }
        if (std::isnan(log_ratio)) throw SamplerError("run_chain: non-finite log acceptance ratio");
        const bool accepted = std::log(uniform01(rng)) < log_ratio;
        rec.after_step(t, accepted, x, y);
        if (accepted) {
          x.swap(y);
          lf.swap(lf_new);
        }
      }
    });
  } else {
    double lx = target.log_density(x);
    for (std::int64_t t = 0; t < iterations; ++t) {
      rec.before_step(t, x);
      for (Index j = 0; j < d; ++j) y[j] = x[j] + sd[j] * gauss(rng);
      const double ly = target.log_density(y);
      const double log_ratio = ly - lx;
      if (std::isnan(log_ratio)) throw SamplerError("run_chain: non-finite log acceptance ratio");
      const bool accepted = std::log(uniform01(rng)) < log_ratio;
      rec.after_step(t, accepted, x, y);
      if (accepted) {
        x.swap(y);
        lx = ly;
      }
    }
  }
  return rec.finish();
}

double ChainDiagnostics::esjd_class_mean() const {
  double s = 0.0;
  for (double v : batch_class_jump) s += v;
  return s / (static_cast<double>(esjd_class.size()) * static_cast<double>(iterations));
}

double ChainDiagnostics::esjd_rescaled_se() const {
  std::vector<double> values;
  for (std::size_t b = 0; b < batch_class_jump.size(); ++b) {
    if (batch_lengths[b] != batch_size) continue;
    values.push_back(time_factor * batch_class_jump[b] /
                     (static_cast<double>(esjd_class.size()) * static_cast<double>(batch_size) * istar_scale));
  }
  if (values.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const auto n = static_cast<double>(values.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

double ChainDiagnostics::mean_sum_r() const {
  if (r_samples == 0) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : r_sums) s += v;
  return s / static_cast<double>(r_samples);
}

std::vector<double> ChainDiagnostics::trajectory_times() const {
  std::vector<double> out;
  out.reserve(trajectory_iterations.size());
  for (auto t : trajectory_iterations) out.push_back(static_cast<double>(t) / time_factor);
  return out;
}

ChainDiagnostics ChainDiagnostics::from_acceptances(std::span<const std::uint8_t> accepted) {
  ChainDiagnostics d;
  d.iterations = static_cast<std::int64_t>(accepted.size());
  if (d.iterations == 0) return d;
  const auto n_batches = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(d.iterations))));
  d.batch_size = (d.iterations + n_batches - 1) / n_batches;
  const std::int64_t count = (d.iterations + d.batch_size - 1) / d.batch_size;
  d.batch_accepts.assign(static_cast<std::size_t>(count), 0);
  d.batch_lengths.assign(static_cast<std::size_t>(count), 0);
  d.batch_class_jump.assign(static_cast<std::size_t>(count), 0.0);
  for (std::size_t t = 0; t < accepted.size(); ++t) {
    const auto b = static_cast<std::size_t>(static_cast<std::int64_t>(t) / d.batch_size);
    ++d.batch_lengths[b];
    if (accepted[t]) {
      ++d.batch_accepts[b];
      ++d.accept_count;
    }
  }
  return d;
}

RateWithError acceptance_with_se(const ChainDiagnostics& diag) {
  if (diag.iterations < 100) throw SamplerError("acceptance_with_se: need at least 100 iterations");
  RateWithError r;
  r.rate = diag.acceptance_rate();
  std::vector<double> rates;
  for (std::size_t b = 0; b < diag.batch_accepts.size(); ++b) {
    if (diag.batch_lengths[b] != diag.batch_size) continue;
    rates.push_back(static_cast<double>(diag.batch_accepts[b]) / static_cast<double>(diag.batch_size));
  }
  if (rates.size() < 2) {
    r.se = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double mean = 0.0;
  for (double v : rates) mean += v;
  mean /= static_cast<double>(rates.size());
  double ss = 0.0;
  for (double v : rates) ss += (v - mean) * (v - mean);
  const auto n = static_cast<double>(rates.size());
  r.se = std::sqrt(ss / (n - 1.0) / n);
  return r;
}

EmpiricalR empirical_r(const MaterializedProduct& m, const std::vector<Rational>& alphas, Index n_draws, Rng& rng) {
  const auto* p = m.target.as_product();
  if (!p) throw SamplerError("empirical_r: requires a product target");
  if (n_draws < 1) throw SamplerError("empirical_r: n_draws must be >= 1");
  const Index d = m.target.dimension();
  if (static_cast<Index>(alphas.size()) != d) throw SamplerError("empirical_r: alphas must have one entry per component");

  const int groups = *std::max_element(p->block.begin(), p->block.end()) + 1;
  Vector weight = Vector::Zero(d);
  for (Index j = 0; j < d; ++j) {
    if (p->block[static_cast<std::size_t>(j)] >= 0 && j != m.istar) {
      weight[j] = std::pow(static_cast<double>(d), -to_double(alphas[static_cast<std::size_t>(j)]));
    }
  }

  EmpiricalR out;
  out.draws = n_draws;
  const auto g = static_cast<std::size_t>(std::max(groups, 0));
  std::vector<double> sum(g, 0.0);
  std::vector<double> sum_sq(g, 0.0);
  double total = 0.0;
  double total_sq = 0.0;
  Gaussian gauss;
  Vector x(d);
  std::vector<double> r(g);
  const double sigma = p->family.scale();
  for (Index n = 0; n < n_draws; ++n) {
    m.target.sample_into(rng, gauss, x);
    std::fill(r.begin(), r.end(), 0.0);
    p->family.visit([&](auto k) {
      for (Index j = 0; j < d; ++j) {
        if (weight[j] == 0.0) continue;
        const double gj = p->theta[j] * k.dlog_f(p->theta[j] * x[j] / sigma) / sigma;
        r[static_cast<std::size_t>(p->block[static_cast<std::size_t>(j)])] += weight[j] * gj * gj;
      }
    });
    double s = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      sum[i] += r[i];
      sum_sq[i] += r[i] * r[i];
      s += r[i];
    }
    total += s;
    total_sq += s * s;
  }
  const auto nd = static_cast<double>(n_draws);
  auto se_of = [&](double s, double ss) {
    if (n_draws < 2) return std::numeric_limits<double>::quiet_NaN();
    const double mean = s / nd;
    const double var = std::max(0.0, (ss - nd * mean * mean) / (nd - 1.0));
    return std::sqrt(var / nd);
  };
  for (std::size_t i = 0; i < g; ++i) {
    out.mean.push_back(sum[i] / nd);
    out.se.push_back(se_of(sum[i], sum_sq[i]));
  }
  out.sum_mean = total / nd;
  out.sum_se = se_of(total, total_sq);
  return out;
}

nlohmann::json to_json(const ChainDiagnostics& diag) {
  nlohmann::json j;
  j["seed"] = diag.seed;
  j["dimension"] = diag.dimension;
  j["istar"] = diag.istar;
  j["ell"] = diag.ell;
  j["time_factor"] = diag.time_factor;
  j["istar_scale"] = diag.istar_scale;
  j["iterations"] = diag.iterations;
  j["accept_count"] = diag.accept_count;
  j["sq_jump_sum"] = std::vector<double>(diag.sq_jump_sum.data(), diag.sq_jump_sum.data() + diag.sq_jump_sum.size());
  j["esjd_class"] = diag.esjd_class;
  j["batch_size"] = diag.batch_size;
  j["batch_accepts"] = diag.batch_accepts;
  j["batch_class_jump"] = diag.batch_class_jump;
  j["trajectory_stride"] = diag.trajectory_stride;
  j["trajectory_iterations"] = diag.trajectory_iterations;
  j["trajectory_values"] = diag.trajectory_values;
  j["r_sums"] = diag.r_sums;
  j["r_samples"] = diag.r_samples;
  return j;
}

}  // namespace optscale
