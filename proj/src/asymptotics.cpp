#include "optscale/asymptotics.hpp"

#include "optscale/format.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace optscale {

double GroupSpec::inverse_constant() const {
  return std::visit(
      [](const auto& model) -> double {
        using T = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<T, FixedK>) {
          return 1.0 / model.K;
        } else {
          return model.b;
        }
      },
      constant_model);
}

namespace {

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

void validate(const std::vector<OrderTerm>& finite, const std::vector<GroupSpec>& groups,
              const ComponentOfInterest& coi) {
  if (groups.empty()) throw ScalingVectorError("scaling vector needs at least one replicated group");
  for (const auto& t : finite) {
    if (!positive_finite(t.constant)) {
      throw ScalingVectorError("finite term constant must be positive and finite");
    }
  }
  std::set<Rational> gammas;
  for (const auto& g : groups) {
    const double k = std::visit(
        [](const auto& model) {
          using T = std::decay_t<decltype(model)>;
          if constexpr (std::is_same_v<T, FixedK>) {
            return model.K;
          } else {
            return model.b;
          }
        },
        g.constant_model);
    if (!positive_finite(k)) throw ScalingVectorError("group constant (K or b) must be positive and finite");
    if (!positive_finite(g.card_coeff)) throw ScalingVectorError("card_coeff must be positive and finite");
    if (g.card_exponent <= Rational(0)) {
      throw ScalingVectorError("card_exponent must be > 0 (group cardinality has to grow with d)");
    }
    if (!gammas.insert(g.gamma).second) {
      throw ScalingVectorError("group exponents gamma must be pairwise distinct, repeated " +
                               to_string(g.gamma));
    }
  }
  if (const auto* ft = std::get_if<FiniteTermRef>(&coi); ft && ft->index >= finite.size()) {
    throw ScalingVectorError("component_of_interest finite_term index out of range");
  }
  if (const auto* gm = std::get_if<GroupMemberRef>(&coi); gm && gm->index >= groups.size()) {
    throw ScalingVectorError("component_of_interest group_member index out of range");
  }
}

}  // namespace

ScalingVector::ScalingVector(std::vector<OrderTerm> finite, std::vector<GroupSpec> groups,
                             ComponentOfInterest coi, std::optional<std::size_t> istar_origin_group)
    : groups_(std::move(groups)), coi_(coi), origin_group_(istar_origin_group) {
  validate(finite, groups_, coi_);

  std::vector<std::size_t> order(finite.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return finite[a].exponent > finite[b].exponent;
  });
  finite_.reserve(finite.size());
  const auto* ft_in = std::get_if<FiniteTermRef>(&coi);
  for (std::size_t k = 0; k < order.size(); ++k) {
    finite_.push_back(finite[order[k]]);
    if (ft_in && ft_in->index == order[k]) coi_ = FiniteTermRef{k};
  }
  if (origin_group_ && !std::holds_alternative<FiniteTermRef>(coi_)) {
    throw ScalingVectorError("istar origin group given without a finite-term component of interest");
  }
  if (origin_group_ && *origin_group_ >= groups_.size()) {
    throw ScalingVectorError("istar origin group out of range");
  }

  // With random constants the replicated orders may not coincide with any
  // finite-term order. The pulled-out i* is exempt: it is a group member.
  if (has_random_constants()) {
    const auto* ft = std::get_if<FiniteTermRef>(&coi_);
    for (std::size_t j = 0; j < finite_.size(); ++j) {
      if (ft && ft->index == j && origin_group_) continue;
      for (const auto& g : groups_) {
        if (finite_[j].exponent == g.gamma) {
          throw ScalingVectorError("with random constants no finite-term lambda may equal a group gamma (" +
                                   to_string(g.gamma) + ")");
        }
      }
    }
  }
}

bool ScalingVector::has_random_constants() const {
  return std::any_of(groups_.begin(), groups_.end(),
                     [](const GroupSpec& g) { return std::holds_alternative<RandomK>(g.constant_model); });
}

bool ScalingVector::is_normalized() const {
  const auto* ft = std::get_if<FiniteTermRef>(&coi_);
  if (!ft) return false;
  const auto& t = finite_[ft->index];
  return t.constant == 1.0 && t.exponent == Rational(0);
}

ScalingVector ScalingVector::with_component(ComponentOfInterest coi) const {
  return ScalingVector(finite_, groups_, coi);
}

ScalingVector ScalingVector::shifted(const Rational& c) const {
  auto finite = finite_;
  for (auto& t : finite) t.exponent += c;
  auto groups = groups_;
  for (auto& g : groups) g.gamma += c;
  return ScalingVector(std::move(finite), std::move(groups), coi_, origin_group_);
}

std::string ScalingVector::describe() const {
  std::ostringstream out;
  out << "finite=[";
  for (std::size_t j = 0; j < finite_.size(); ++j) {
    if (j) out << ",";
    out << "(" << format_double(finite_[j].constant) << "," << to_string(finite_[j].exponent) << ")";
  }
  out << "] groups=[";
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const auto& g = groups_[i];
    if (i) out << ",";
    out << "(";
    if (const auto* fk = std::get_if<FixedK>(&g.constant_model)) {
      out << "K=" << format_double(fk->K);
    } else {
      out << "b=" << format_double(std::get<RandomK>(g.constant_model).b);
    }
    out << ",gamma=" << to_string(g.gamma) << ",C=" << format_double(g.card_coeff)
        << ",beta=" << to_string(g.card_exponent) << ")";
  }
  out << "]";
  if (const auto* ft = std::get_if<FiniteTermRef>(&coi_)) out << " i*=finite[" << ft->index << "]";
  if (const auto* gm = std::get_if<GroupMemberRef>(&coi_)) out << " i*=group[" << gm->index << "]";
  return out.str();
}

std::string to_string(ProposalMode mode) {
  return mode == ProposalMode::Homogeneous ? "homogeneous" : "inhomogeneous";
}

std::string to_string(Verdict v) { return v == Verdict::Holds ? "holds" : "violated"; }

ProposalMode parse_proposal_mode(const std::string& text) {
  if (text == "homogeneous") return ProposalMode::Homogeneous;
  if (text == "inhomogeneous") return ProposalMode::Inhomogeneous;
  throw std::invalid_argument("proposal mode must be 'homogeneous' or 'inhomogeneous', got '" + text + "'");
}

ScalingVector normalize_component(const ScalingVector& sv) {
  const auto& coi = sv.component_of_interest();
  if (std::holds_alternative<std::monostate>(coi)) {
    throw ScalingVectorError("normalize_component: component_of_interest is not set");
  }

  auto finite = sv.finite_terms();
  auto groups = sv.groups();
  std::size_t istar = 0;
  std::optional<std::size_t> origin = sv.istar_origin_group();

  if (const auto* gm = std::get_if<GroupMemberRef>(&coi)) {
    const auto& g = groups[gm->index];
    finite.push_back(OrderTerm{g.nominal_constant(), g.gamma});
    istar = finite.size() - 1;
    origin = gm->index;
  } else {
    istar = std::get<FiniteTermRef>(coi).index;
  }

  const double k_star = finite[istar].constant;
  const Rational e_star = finite[istar].exponent;

  for (std::size_t j = 0; j < finite.size(); ++j) {
    if (j == istar) {
      finite[j] = OrderTerm{1.0, Rational(0)};
      continue;
    }
    finite[j].constant /= k_star;
    finite[j].exponent -= e_star;
  }
  for (auto& g : groups) {
    g.gamma -= e_star;
    std::visit(
        [&](auto& model) {
          using T = std::decay_t<decltype(model)>;
          if constexpr (std::is_same_v<T, FixedK>) {
            model.K /= k_star;
          } else {
            model.b *= k_star;
          }
        },
        g.constant_model);
  }
  return ScalingVector(std::move(finite), std::move(groups), FiniteTermRef{istar}, origin);
}

std::vector<Rational> group_alphas(const ScalingVector& sv) {
  std::vector<Rational> out;
  out.reserve(sv.m());
  for (const auto& g : sv.groups()) out.push_back(g.order());
  return out;
}

Rational compute_alpha(const ScalingVector& sv) {
  Rational alpha = sv.groups().front().order();
  for (const auto& g : sv.groups()) alpha = std::max(alpha, g.order());
  if (!sv.finite_terms().empty()) alpha = std::max(alpha, sv.finite_terms().front().exponent);
  return alpha;
}

Condition5 check_condition5(const ScalingVector& sv) {
  Rational group_max = sv.groups().front().order();
  for (const auto& g : sv.groups()) group_max = std::max(group_max, g.order());

  Condition5 out;
  if (sv.finite_terms().empty()) {
    out.verdict = Verdict::Holds;
    out.denominator_exponent = group_max;
    return out;
  }
  const Rational lambda1 = sv.finite_terms().front().exponent;
  out.numerator_exponent = lambda1;
  out.denominator_exponent = std::max(lambda1, group_max);
  // Equal leading orders leave a positive constant in the limit, not zero.
  out.verdict = lambda1 < group_max ? Verdict::Holds : Verdict::Violated;
  return out;
}

std::vector<std::size_t> dominating_groups(const ScalingVector& sv) {
  const Rational alpha = compute_alpha(sv);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sv.m(); ++i) {
    if (sv.groups()[i].order() == alpha) out.push_back(i);
  }
  return out;
}

double compute_er(const ScalingVector& sv, double fisher, ProposalMode mode) {
  if (!std::isfinite(fisher) || fisher <= 0.0) {
    throw std::invalid_argument("compute_er: Fisher information must be positive and finite");
  }
  double sum = 0.0;
  if (mode == ProposalMode::Homogeneous) {
    for (std::size_t i : dominating_groups(sv)) {
      const auto& g = sv.groups()[i];
      sum += g.card_coeff * g.inverse_constant() * fisher;
    }
  } else {
    for (const auto& g : sv.groups()) sum += g.card_coeff * g.inverse_constant() * fisher;
  }
  return sum;
}

const UnitOptimum& unit_optimum() {
  static const UnitOptimum cached = [] {
    const UnitOptimum u = unit_optimum_with(StandardNormalCdf{});
    if (std::abs(u.u_hat - 2.38) > 0.01 || std::abs(u.aoar - 0.234) > 0.001) {
      throw std::logic_error("optimal scaling constant disagrees with the 2.38 / 0.234 anchors");
    }
    return u;
  }();
  return cached;
}

OptimalScaling optimal_ell(double e_r) {
  if (!(e_r > 0.0) || !std::isfinite(e_r)) {
    throw ConditionViolatedError(
        "no optimal scaling: E_R must be positive (AOAR below 0.234, see violated-condition verdict)");
  }
  const auto& u = unit_optimum();
  return {u.u_hat / std::sqrt(e_r), u.aoar, u.u_hat};
}

Rational mixing_order(const ScalingVector& sv) { return compute_alpha(normalize_component(sv)); }

Rational istar_alpha(const ScalingVector& normalized, ProposalMode mode) {
  if (mode == ProposalMode::Inhomogeneous && normalized.istar_origin_group()) {
    return normalized.groups()[*normalized.istar_origin_group()].order();
  }
  return compute_alpha(normalized);
}

ScalingAnalysis analyze(const ScalingVector& sv, double fisher, ProposalMode mode) {
  ScalingAnalysis a{.normalized = normalize_component(sv)};
  const auto& n = a.normalized;
  a.mode = mode;
  a.fisher = fisher;
  a.alpha = compute_alpha(n);
  a.alpha_per_group = group_alphas(n);
  a.condition5 = check_condition5(n);
  a.dominating_groups = dominating_groups(n);
  a.e_r_homogeneous = compute_er(n, fisher, ProposalMode::Homogeneous);
  a.e_r_inhomogeneous = compute_er(n, fisher, ProposalMode::Inhomogeneous);
  if (a.condition5.verdict == Verdict::Holds) a.optimum = optimal_ell(a.e_r());
  a.mixing_order_exponent = istar_alpha(n, mode);
  return a;
}

// ---------------------------------------------------------------------------

std::string to_string(LimitClass c) {
  switch (c) {
    case LimitClass::Zero:
      return "zero";
    case LimitClass::Finite:
      return "finite";
    case LimitClass::Infinite:
      return "infinite";
  }
  return "?";
}

namespace {

double log_sum_exp(const std::vector<double>& xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

LimitClass classify_slope(double slope, double tol) {
  if (slope < -tol) return LimitClass::Zero;
  if (slope > tol) return LimitClass::Infinite;
  return LimitClass::Finite;
}

}  // namespace

BruteForceReport brute_force_limits_log10(const ScalingVector& sv, const std::vector<double>& log10_d,
                                          double slope_tolerance) {
  if (log10_d.size() < 3) throw std::invalid_argument("brute_force_limits: need at least 3 grid points");
  for (std::size_t k = 1; k < log10_d.size(); ++k) {
    if (!(log10_d[k] > log10_d[k - 1])) throw std::invalid_argument("brute_force_limits: grid must increase");
  }

  const std::size_t last = log10_d.size() - 1;
  std::vector<double> ln_d(log10_d.size());
  for (std::size_t k = 0; k < ln_d.size(); ++k) ln_d[k] = log10_d[k] * std::log(10.0);
  const double dl = ln_d[last] - ln_d[last - 1];
  const bool has_finite = sv.n() > 0;

  // log of each group's c(J(i,d)) d^{gamma_i}, and of d^{lambda_1}.
  auto group_log = [&](std::size_t i, double L) {
    const auto& g = sv.groups()[i];
    return std::log(g.card_coeff) + (to_double(g.gamma) + to_double(g.card_exponent)) * L;
  };
  auto lambda1_log = [&](double L) { return to_double(sv.finite_terms().front().exponent) * L; };

  // Smallest alpha keeping every ratio bounded: growth rate of the largest term.
  auto dominant_log = [&](double L) {
    std::vector<double> terms;
    if (has_finite) terms.push_back(lambda1_log(L));
    for (std::size_t i = 0; i < sv.m(); ++i) terms.push_back(group_log(i, L));
    return log_sum_exp(terms);
  };

  BruteForceReport r;
  r.log10_d = log10_d;
  r.alpha_estimate = (dominant_log(ln_d[last]) - dominant_log(ln_d[last - 1])) / dl;

  auto ratio_slope = [&](auto&& log_term) {
    const double a = log_term(ln_d[last - 1]) - r.alpha_estimate * ln_d[last - 1];
    const double b = log_term(ln_d[last]) - r.alpha_estimate * ln_d[last];
    return (b - a) / dl;
  };

  if (has_finite) r.finite_limit = classify_slope(ratio_slope(lambda1_log), slope_tolerance);
  for (std::size_t i = 0; i < sv.m(); ++i) {
    r.group_limits.push_back(
        classify_slope(ratio_slope([&](double L) { return group_log(i, L); }), slope_tolerance));
  }

  if (!has_finite) {
    r.condition5 = Verdict::Holds;
    return r;
  }
  auto cond5_log = [&](double L) {
    std::vector<double> denom;
    for (const auto& t : sv.finite_terms()) denom.push_back(to_double(t.exponent) * L);
    for (std::size_t i = 0; i < sv.m(); ++i) denom.push_back(group_log(i, L));
    return lambda1_log(L) - log_sum_exp(denom);
  };
  r.condition5_slope = (cond5_log(ln_d[last]) - cond5_log(ln_d[last - 1])) / dl;
  r.condition5 = classify_slope(*r.condition5_slope, slope_tolerance) == LimitClass::Zero ? Verdict::Holds
                                                                                          : Verdict::Violated;
  return r;
}

BruteForceReport brute_force_limits(const ScalingVector& sv, const std::vector<long long>& d_grid,
                                    double slope_tolerance) {
  std::vector<double> log10_d;
  log10_d.reserve(d_grid.size());
  for (long long d : d_grid) {
    if (d < 1) throw std::invalid_argument("brute_force_limits: dimensions must be >= 1");
    log10_d.push_back(std::log10(static_cast<double>(d)));
  }
  return brute_force_limits_log10(sv, log10_d, slope_tolerance);
}

}  // namespace optscale
