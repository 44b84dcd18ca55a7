#include "optscale/selftest.hpp"

#include "optscale/density.hpp"
#include "optscale/format.hpp"
#include "optscale/normal.hpp"
#include "optscale/target.hpp"

#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>

namespace optscale {

namespace {

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return boost::random::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

Rational random_exponent(Rng& rng, std::int64_t max_den, std::int64_t lo, std::int64_t hi) {
  const std::int64_t q = uniform_int(rng, 1, max_den);
  return Rational(uniform_int(rng, lo * q, hi * q), q);
}

}  // namespace

ScalingVector random_scaling_vector(Rng& rng, std::int64_t max_den) {
  for (;;) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 0, 3));
    const auto m = static_cast<std::size_t>(uniform_int(rng, 1, 3));
    std::vector<GroupSpec> groups;
    while (groups.size() < m) {
      GroupSpec g;
      g.gamma = random_exponent(rng, max_den, -3, 3);
      if (std::any_of(groups.begin(), groups.end(), [&](const GroupSpec& h) { return h.gamma == g.gamma; })) continue;
      const std::int64_t q = uniform_int(rng, 1, max_den);
      g.card_exponent = Rational(uniform_int(rng, 1, 3 * q), q);
      g.card_coeff = 0.25 + 2.0 * uniform01(rng);
      if (uniform01(rng) < 0.3) {
        g.constant_model = RandomK{0.2 + 3.0 * uniform01(rng)};
      } else {
        g.constant_model = FixedK{0.2 + 3.0 * uniform01(rng)};
      }
      groups.push_back(g);
    }
    std::vector<OrderTerm> finite;
    for (std::size_t j = 0; j < n; ++j) finite.push_back({0.2 + 3.0 * uniform01(rng), random_exponent(rng, max_den, -3, 3)});
    ComponentOfInterest coi;
    if (n > 0 && uniform01(rng) < 0.5) {
      coi = FiniteTermRef{static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1))};
    } else {
      coi = GroupMemberRef{static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(m) - 1))};
    }
    try {
      return ScalingVector(std::move(finite), std::move(groups), coi);
    } catch (const ScalingVectorError&) {
      // lambda collided with a gamma under random constants; draw again
    }
  }
}

OracleComparison compare_with_oracle(const ScalingVector& sv) {
  const auto norm = normalize_component(sv);
  const Rational alpha = compute_alpha(norm);
  const auto c5 = check_condition5(norm);
  // Distinct exponents with denominators <= 6 differ by at least 1/60, so at
  // d = 10^1000..10^4000 the subleading terms are below e^-38 and slopes
  // separate cleanly from 0 at tolerance 1e-3.
  const auto bf = brute_force_limits_log10(norm, {1000.0, 2000.0, 4000.0});
  OracleComparison out;
  auto mismatch = [&](const std::string& what) {
    out.agree = false;
    out.detail += (out.detail.empty() ? "" : "; ") + what;
  };
  if (std::abs(bf.alpha_estimate - to_double(alpha)) > 1e-3) {
    mismatch("alpha " + to_string(alpha) + " vs numeric " + format_double(bf.alpha_estimate));
  }
  if (bf.condition5 != c5.verdict) mismatch("condition5 " + to_string(c5.verdict) + " vs " + to_string(bf.condition5));
  if (norm.n() > 0) {
    const auto expect = norm.finite_terms().front().exponent == alpha ? LimitClass::Finite : LimitClass::Zero;
    if (!bf.finite_limit || *bf.finite_limit != expect) mismatch("finite-term limit class");
  }
  const auto dom = dominating_groups(norm);
  for (std::size_t i = 0; i < norm.m(); ++i) {
    const bool is_dom = std::find(dom.begin(), dom.end(), i) != dom.end();
    const auto expect = is_dom ? LimitClass::Finite : LimitClass::Zero;
    if (bf.group_limits[i] != expect) mismatch("group " + std::to_string(i) + " limit class");
  }
  if (!out.agree) out.detail = sv.describe() + ": " + out.detail;
  return out;
}

bool SelftestReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const SelftestCheck& c) { return c.pass; });
}

SelftestReport run_selftest(const std::function<double(double)>& cdf) {
  SelftestReport rep;
  auto add = [&](std::string name, bool pass, std::string detail) {
    rep.checks.push_back({std::move(name), pass, std::move(detail)});
  };
  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      add(name, false, std::string("threw: ") + e.what());
    }
  };

  guarded("constants", [&] {
    const auto opt = cdf ? unit_optimum_with(cdf) : unit_optimum_with(StandardNormalCdf{});
    add("u_hat in [2.37, 2.39]", opt.u_hat >= 2.37 && opt.u_hat <= 2.39, "u_hat=" + format_fixed(opt.u_hat, 7));
    add("AOAR in [0.233, 0.235]", opt.aoar >= 0.233 && opt.aoar <= 0.235, "AOAR=" + format_fixed(opt.aoar, 7));
    const double u = opt.u_hat;
    const double phi = cdf ? cdf(-u / 2.0) : normal_cdf(-u / 2.0);
    const double gap = std::abs(4.0 * phi - u * normal_pdf(u / 2.0));
    add("stationarity 4 Phi(-u/2) = u phi(u/2)", gap < 1e-8, "gap=" + format_double(gap));
  });

  guarded("fisher", [&] {
    const double fn = fisher_term(DensityFamily::normal());
    const double fl = fisher_term(DensityFamily::logistic());
    add("fisher(normal) = 1", std::abs(fn - 1.0) < 1e-6, "fisher=" + format_double(fn));
    add("fisher(logistic) = 1/3", std::abs(fl - 1.0 / 3.0) < 1e-6, "fisher=" + format_double(fl));
  });

  guarded("analyzer examples", [&] {
    // (d, 1, ..., 1)
    const ScalingVector intraclass({OrderTerm{1.0, Rational(-1)}}, {GroupSpec{FixedK{1.0}, Rational(0), 1.0, Rational(1)}});
    const auto bulk = analyze(intraclass.with_component(GroupMemberRef{0}), 1.0);
    const auto first = analyze(intraclass.with_component(FiniteTermRef{0}), 1.0);
    add("intraclass bulk: alpha=1, holds, mixing O(d)",
        bulk.alpha == Rational(1) && bulk.condition5.verdict == Verdict::Holds && bulk.mixing_order_exponent == Rational(1),
        "alpha=" + to_string(bulk.alpha));
    add("intraclass first component: alpha=2, mixing O(d^2)",
        first.alpha == Rational(2) && first.condition5.verdict == Verdict::Holds &&
            first.mixing_order_exponent == Rational(2),
        "alpha=" + to_string(first.alpha));
    const ScalingVector hier({OrderTerm{1.0, Rational(-1)}, OrderTerm{1.0, Rational(1)}},
                             {GroupSpec{FixedK{1.0}, Rational(0), 1.0, Rational(1)}}, GroupMemberRef{0});
    const auto h = analyze(hier, 1.0);
    add("hierarchical: violated", h.condition5.verdict == Verdict::Violated, to_string(h.condition5.verdict));
  });

  guarded("oracle agreement", [&] {
    Rng rng(20240611);
    int bad = 0;
    std::string first_bad;
    for (int k = 0; k < 200; ++k) {
      const auto cmp = compare_with_oracle(random_scaling_vector(rng));
      if (!cmp.agree) {
        ++bad;
        if (first_bad.empty()) first_bad = cmp.detail;
      }
    }
    add("analyzer matches brute force on 200 random vectors", bad == 0,
        bad == 0 ? "200/200" : std::to_string(bad) + " mismatches, first: " + first_bad);
  });

  guarded("spectrum", [&] {
    const auto ic = classify_spectrum(
        [](Index d) { return TargetModel::intraclass(d).covariance(); }, {16, 32, 64, 128});
    const auto hc = classify_spectrum(
        [](Index d) { return TargetModel::hierarchical(d).covariance(); }, {16, 32, 64, 128});
    const auto iv = check_condition5(normalize_component(ic.scaling)).verdict;
    const auto hv = check_condition5(normalize_component(hc.scaling)).verdict;
    add("spectrum route: intraclass holds, hierarchical violated", iv == Verdict::Holds && hv == Verdict::Violated,
        "intraclass " + to_string(iv) + ", hierarchical " + to_string(hv));
  });
  return rep;
}

}  // namespace optscale
