// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//   acceptance            all criteria
//   acceptance 4 7        selected criteria

#include "oracles.hpp"

#include "optscale/config.hpp"
#include "optscale/experiments.hpp"
#include "optscale/format.hpp"
#include "optscale/io.hpp"
#include "optscale/selftest.hpp"
#include "optscale/speed.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace optscale;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(ok ? what : "FAILED " + what);
  }
};

std::string f4(double x) { return format_fixed(x, 4); }

GroupSpec unit_group(Rational gamma = Rational(0)) { return GroupSpec{FixedK{1.0}, gamma, 1.0, Rational(1)}; }

ScalingVector iid_vector() { return ScalingVector({}, {unit_group()}, GroupMemberRef{0}); }

// (d, 1, ..., 1)
ScalingVector intraclass_vector(ComponentOfInterest coi) {
  return ScalingVector({OrderTerm{1.0, Rational(-1)}}, {unit_group()}, coi);
}

ExperimentPlan product_plan(const std::string& family, Index d) {
  ExperimentPlan p;
  p.target.family = family;
  p.scaling = iid_vector();
  p.dims = {d};
  return p;
}

ExperimentPlan intraclass_plan(Index d) {
  ExperimentPlan p;
  p.target.kind = TargetSpec::Kind::Intraclass;
  p.scaling = intraclass_vector(GroupMemberRef{0});
  p.dims = {d};
  return p;
}

ExperimentPlan hierarchical_plan() {
  ExperimentPlan p;
  p.target.kind = TargetSpec::Kind::Hierarchical;
  p.component = GroupMemberRef{0};
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome analyzer_intraclass() {
  Outcome o;
  for (const auto& [label, plan] :
       {std::pair{"declared", intraclass_plan(100)}, std::pair{"spectrum", [] {
                                                         auto p = intraclass_plan(100);
                                                         p.scaling.reset();
                                                         p.component = GroupMemberRef{0};
                                                         return p;
                                                       }()}}) {
    auto first = plan;
    if (first.scaling) {
      first.scaling = intraclass_vector(FiniteTermRef{0});
    } else {
      first.component = FiniteTermRef{0};
    }
    const auto bulk = resolve(plan).analysis;
    const auto one = resolve(first).analysis;
    const bool ok = bulk.alpha == Rational(1) && bulk.mixing_order_exponent == Rational(1) &&
                    bulk.condition5.verdict == Verdict::Holds && one.alpha == Rational(2) &&
                    one.mixing_order_exponent == Rational(2) && one.condition5.verdict == Verdict::Holds;
    o.require(ok, std::string(label) + ": bulk alpha=" + to_string(bulk.alpha) + " " +
                      order_string(bulk.mixing_order_exponent) + ", first alpha=" + to_string(one.alpha) + " " +
                      order_string(one.mixing_order_exponent) + ", condition5 " +
                      to_string(bulk.condition5.verdict) + "/" + to_string(one.condition5.verdict));
  }
  return o;
}

Outcome analyzer_hierarchical() {
  Outcome o;
  const auto spec = resolve(hierarchical_plan());
  o.require(spec.analysis.condition5.verdict == Verdict::Violated && !spec.analysis.optimum,
            "spectrum route: " + spec.raw.describe() + " -> " + to_string(spec.analysis.condition5.verdict));
  const ScalingVector declared({OrderTerm{1.0, Rational(-1)}, OrderTerm{1.0, Rational(1)}}, {unit_group()},
                               GroupMemberRef{0});
  const auto a = analyze(declared, 1.0);
  o.require(a.condition5.verdict == Verdict::Violated, "declared orders d, 1/d, 1: " + to_string(a.condition5.verdict));
  return o;
}

Outcome constants() {
  Outcome o;
  const auto u = unit_optimum_with(StandardNormalCdf{});
  o.require(u.u_hat >= 2.37 && u.u_hat <= 2.39, "u_hat=" + format_fixed(u.u_hat, 6));
  o.require(u.aoar >= 0.2330 && u.aoar <= 0.2350, "AOAR=" + format_fixed(u.aoar, 6));
  return o;
}

Outcome iid_acceptance() {
  Outcome o;
  const auto t = TargetModel::product(DensityFamily::normal(), Vector::Ones(100));
  RecordOptions rec;
  rec.trajectory = false;
  const auto dg = run_chain(t, ProposalSpec::homogeneous(2.38, Rational(1), 100), 1000000, 0, rec, 20240601);
  const auto r = acceptance_with_se(dg);
  o.require(std::abs(r.rate - 0.234) <= 0.02, "d=100 ell=2.38 acceptance " + f4(r.rate) + " (se " + f4(r.se) + ")");
  return o;
}

Outcome speed_identity() {
  Outcome o;
  const auto t = TargetModel::product(DensityFamily::normal(), Vector::Ones(200));
  RecordOptions rec;
  rec.trajectory = false;
  const auto dg = run_chain(t, ProposalSpec::homogeneous(2.38, Rational(1), 200), 1000000, 0, rec, 20240602);
  const double v = speed(2.38, 1.0);
  const double single = dg.time_factor * dg.esjd_istar();
  const double pooled = dg.esjd_rescaled();
  o.require(std::abs(single / v - 1.0) <= 0.15, "d^alpha ESJD_i* " + f4(single) + " vs v(2.38) " + f4(v));
  o.require(std::abs(pooled / v - 1.0) <= 0.15, "class mean " + f4(pooled) + " (se " + f4(dg.esjd_rescaled_se()) + ")");
  return o;
}

Outcome sweep_optima() {
  Outcome o;
  std::vector<double> argmax;
  std::vector<double> ell_hat;
  for (auto plan : {product_plan("normal", 100), intraclass_plan(100), product_plan("logistic", 100)}) {
    plan.ell_grid = log_grid(1.0, 8.0, 13);
    plan.iterations = 300000;
    plan.bootstrap = 200;
    plan.seed = 606;
    const auto s = sweep_ell(plan);
    const auto& opt = s.optima.at(0);
    const bool in_band = opt.accept_at_argmax >= 0.18 && opt.accept_at_argmax <= 0.30 && !opt.at_edge;
    o.require(in_band, plan.target.name() + ": acceptance " + f4(opt.accept_at_argmax) + " (se " +
                           f4(opt.accept_se) + ") at ell " + format_fixed(opt.ell_argmax, 3) + ", ell_hat " +
                           format_fixed(*s.ell_hat, 3));
    argmax.push_back(opt.ell_argmax);
    ell_hat.push_back(*s.ell_hat);
  }
  const double predicted = ell_hat[2] / ell_hat[0];
  const double observed = argmax[2] / argmax[0];
  o.require(std::abs(observed / predicted - 1.0) <= 0.15,
            "logistic/normal argmax ratio " + format_fixed(observed, 3) + " vs predicted " + format_fixed(predicted, 3));
  return o;
}

Outcome roughness() {
  Outcome o;
  auto plan = product_plan("normal", 1000);
  plan.dims = {1000, 10000};
  plan.r_draws = 100;
  plan.r_seeds = 2;
  plan.seed = 707;
  const auto er = er_convergence(plan);
  const double tol[] = {0.05, 0.02};
  for (std::size_t k = 0; k < er.rows.size(); ++k) {
    const auto& r = er.rows[k];
    o.require(r.rel_error <= tol[k], "d=" + std::to_string(r.d) + ": sum R " + f4(r.sum_r_mean) + " vs E_R " +
                                         f4(r.e_r) + " (relative " + f4(r.rel_error) + ")");
  }
  return o;
}

Outcome slow_convergence() {
  Outcome o;
  const double aoar = unit_optimum().aoar;
  {
    auto plan = product_plan("normal", 1000);
    plan.scan_lambdas = {Rational(3, 4)};
    plan.ell_grid = log_grid(0.5, 1.6, 11);
    plan.ell_grid_relative = true;
    plan.iterations = 200000;
    plan.seed = 11;
    const auto sc = dimension_scan(plan);
    const auto& r = sc.rows.at(0);
    const double z = (r.optimum.accept_at_argmax - aoar) / r.optimum.accept_se;
    o.require(z > 2.0 && !r.optimum.at_edge, "lambda=3/4 d=1000: optimum " + f4(r.optimum.accept_at_argmax) + " (se " +
                                                 f4(r.optimum.accept_se) + ", " + format_fixed(z, 1) +
                                                 " SE above 0.234)");
  }
  {
    auto plan = product_plan("normal", 100);
    plan.scan_lambdas = {Rational(0)};
    plan.ell_grid = log_grid(0.5, 2.0, 13);
    plan.ell_grid_relative = true;
    plan.iterations = 200000;
    plan.seed = 12;
    const auto sc = dimension_scan(plan);
    const auto& r = sc.rows.at(0);
    o.require(std::abs(r.optimum.accept_at_argmax - 0.234) <= 0.03 && !r.optimum.at_edge,
              "lambda=0 d=100: optimum " + f4(r.optimum.accept_at_argmax) + " (se " + f4(r.optimum.accept_se) + ")");
  }
  return o;
}

Outcome weak_limit() {
  Outcome o;
  {
    auto plan = product_plan("normal", 200);
    plan.ell = 2.38;
    plan.iterations = 1000000;
    plan.replicates = 2;
    plan.seed = 909;
    const auto row = diffusion_compare(plan).rows.at(0);
    o.require(row.max_dev_chain <= 0.05 && row.max_dev_em <= 0.05,
              "OU ACF max deviation: chain " + f4(row.max_dev_chain) + ", Euler-Maruyama " + f4(row.max_dev_em));
  }
  {
    // i* marginal from long chains at ell-hat: E[X^2] against the known variance
    struct Case {
      ExperimentPlan plan;
      double second_moment;
    };
    std::vector<Case> cases{{product_plan("normal", 20), 1.0},
                            {product_plan("logistic", 20), M_PI * M_PI / 3.0},
                            {intraclass_plan(20), 2.0}};
    for (auto& c : cases) {
      const auto resolved = resolve(c.plan);
      Rng rng(77);
      const auto cell = build_cell_target(c.plan, resolved, 20, rng);
      RecordOptions rec;
      rec.dt = 0.5;
      rec.trajectory_budget = 1000000;
      rec.roughness = false;
      const auto dg =
          run_chain(cell.target, cell.proposal(resolved.analysis.optimum->ell_hat), 2000000, cell.istar, rec, 31337);
      const auto& v = dg.trajectory_values;
      const std::size_t n_batches = 50;
      const std::size_t per = v.size() / n_batches;
      std::vector<double> batches;
      for (std::size_t b = 0; b < n_batches; ++b) {
        double s = 0.0;
        for (std::size_t k = b * per; k < (b + 1) * per; ++k) s += v[k] * v[k];
        batches.push_back(s / static_cast<double>(per));
      }
      const auto m = oracle::mean_se(batches);
      const double z = (m.mean - c.second_moment) / m.se;
      o.require(std::abs(z) <= 4.0, c.plan.target.name() + " E[X_i*^2] " + f4(m.mean) + " vs " +
                                        f4(c.second_moment) + " (" + format_fixed(z, 1) + " SE)");
    }
  }
  {
    Rng rng(20240611);
    int agree = 0;
    for (int k = 0; k < 200; ++k) agree += compare_with_oracle(random_scaling_vector(rng)).agree ? 1 : 0;
    o.require(agree == 200, "oracle agreement " + std::to_string(agree) + "/200");
  }
  {
    Rng rng(4242);
    int shift_ok = 0;
    int pruned = 0;
    int prune_ok = 0;
    for (int k = 0; k < 200; ++k) {
      const auto norm = normalize_component(random_scaling_vector(rng));
      const Rational alpha = compute_alpha(norm);
      const auto er = [](const ScalingVector& sv) { return compute_er(sv, 1.0, ProposalMode::Homogeneous); };
      const Rational c(k % 9 - 4, 1 + k % 4);
      const auto sh = norm.shifted(c);
      shift_ok += compute_alpha(sh) == alpha + c && check_condition5(sh).verdict == check_condition5(norm).verdict &&
                  dominating_groups(sh) == dominating_groups(norm) && er(sh) == er(norm);

      // drop finite terms and groups of lower order than alpha
      std::vector<OrderTerm> finite;
      std::size_t istar = 0;
      const auto star = std::get<FiniteTermRef>(norm.component_of_interest()).index;
      for (std::size_t j = 0; j < norm.n(); ++j) {
        if (j != star && norm.finite_terms()[j].exponent < alpha) continue;
        if (j == star) istar = finite.size();
        finite.push_back(norm.finite_terms()[j]);
      }
      std::vector<GroupSpec> groups;
      std::optional<std::size_t> origin;
      for (std::size_t g = 0; g < norm.m(); ++g) {
        if (norm.groups()[g].order() != alpha) continue;
        if (norm.istar_origin_group() == g) origin = groups.size();
        groups.push_back(norm.groups()[g]);
      }
      if (groups.empty() || finite.size() + groups.size() == norm.n() + norm.m()) continue;
      if (norm.istar_origin_group() && !origin) continue;
      ++pruned;
      const ScalingVector small(finite, groups, FiniteTermRef{istar}, origin);
      prune_ok += compute_alpha(small) == alpha &&
                  check_condition5(small).verdict == check_condition5(norm).verdict && er(small) == er(norm);
    }
    o.require(shift_ok == 200, "exponent shift invariance " + std::to_string(shift_ok) + "/200");
    o.require(pruned >= 20 && prune_ok == pruned,
              "dominance pruning invariance " + std::to_string(prune_ok) + "/" + std::to_string(pruned));
  }
  return o;
}

Outcome reproducibility() {
  Outcome o;
  const auto root = fs::temp_directory_path() / "optscale_acceptance_rerun";
  fs::remove_all(root);
  const auto config = nlohmann::json::parse(R"({
    "schema_version": 1,
    "target": {"family": "normal"},
    "scaling_vector": {"finite_terms": [{"K": 1, "lambda": "1/2"}],
                       "groups": [{"K": 1, "gamma": "0", "card_coeff": 1, "card_exponent": "1"}]},
    "component_of_interest": {"finite_term": 0},
    "experiment": {"studies": ["simulate", "sweep", "compare", "er_convergence"], "d": [40, 80],
                   "iterations": 20000, "replicates": 2, "threads": 2, "bootstrap": 50,
                   "ell_grid": {"min": 0.5, "max": 2.0, "points": 9, "relative": true},
                   "r_draws": 10, "r_seeds": 5},
    "seed": 1010
  })");
  const auto first = run_plan(plan_from_json(config), config, root / "first");
  o.require(!first.partial_failure, "first run status " + first.summary["status"].get<std::string>());
  const auto rep = rerun_manifest(root / "first" / "manifest.json", root / "second");
  int compared = 0;
  int identical = 0;
  for (const auto& e : fs::directory_iterator(root / "first")) {
    if (e.path().extension() != ".csv") continue;
    ++compared;
    identical += slurp(e.path()) == slurp(root / "second" / e.path().filename()) ? 1 : 0;
  }
  o.require(rep.identical(), "manifest hashes: " + std::to_string(rep.mismatched.size()) + " mismatches");
  o.require(compared >= 8 && identical == compared,
            std::to_string(identical) + "/" + std::to_string(compared) + " CSV files byte-identical");
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"analyzer exactness, intraclass", analyzer_intraclass},
      {"analyzer exactness, hierarchical", analyzer_hierarchical},
      {"optimal scaling constants", constants},
      {"i.i.d. normal acceptance at ell=2.38", iid_acceptance},
      {"speed-measure identity", speed_identity},
      {"sweep optima", sweep_optima},
      {"roughness sum vs E_R", roughness},
      {"slow convergence from above", slow_convergence},
      {"weak-limit property suite", weak_limit},
      {"reproducibility from manifest", reproducibility},
  };
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception& e) {
      out.require(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string detail;
    for (const auto& n : out.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << (out.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << criteria[k].first << " ["
              << format_fixed(secs, 1) << " s] " << detail << std::endl;
    failed += out.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
