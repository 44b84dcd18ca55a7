// optscale: command line front end for the analyzer, sampler and studies.

#include "optscale/config.hpp"
#include "optscale/experiments.hpp"
#include "optscale/format.hpp"
#include "optscale/io.hpp"
#include "optscale/normal.hpp"
#include "optscale/selftest.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace optscale;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitViolated = 2;
constexpr int kExitPartial = 3;
constexpr int kExitMismatch = 4;

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string format = "csv";
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_out) {
  cmd->add_option("--config", o.config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  if (needs_out) {
    cmd->add_option("--out", o.out, "output directory (default: config output_dir)");
    cmd->add_option("--seed", o.seed, "master seed, overrides the config");
    cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--quiet", o.quiet, "no progress messages");
  }
}

LoadedConfig load_with_overrides(const CommonOptions& o) {
  auto lc = load_config(o.config);
  if (o.seed) lc.document["seed"] = *o.seed;
  if (o.threads) lc.document["experiment"]["threads"] = *o.threads;
  if (o.seed || o.threads) {
    try {
      lc.plan = plan_from_json(lc.document);
    } catch (const SchemaError& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
  }
  return lc;
}

fs::path output_dir(const CommonOptions& o, const LoadedConfig& lc) {
  if (!o.out.empty()) return o.out;
  if (lc.output_dir) return *lc.output_dir;
  throw ConfigError("no output directory: pass --out or set output_dir in the config");
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void print_analysis(const ResolvedPlan& r, std::ostream& os) {
  const auto& a = r.analysis;
  os << "target vector:   " << r.raw.describe() << "\n";
  os << "normalized:      " << a.normalized.describe() << "\n";
  os << "alpha:           " << to_string(a.alpha) << "\n";
  os << "alpha per group:";
  for (const auto& g : a.alpha_per_group) os << ' ' << to_string(g);
  os << "\n";
  os << "condition:       " << to_string(a.condition5.verdict) << " (lambda_1 = "
     << (a.condition5.numerator_exponent ? to_string(*a.condition5.numerator_exponent) : std::string("none"))
     << ", max gamma+beta = " << to_string(a.condition5.denominator_exponent) << ")\n";
  os << "dominating:     ";
  for (auto g : a.dominating_groups) os << ' ' << g;
  os << "\n";
  os << "E_R:             homogeneous " << format_double(a.e_r_homogeneous) << ", inhomogeneous "
     << format_double(a.e_r_inhomogeneous) << " (mode " << to_string(a.mode) << ")\n";
  if (a.optimum) {
    os << "ell_hat:         " << format_fixed(a.optimum->ell_hat, 6) << "\n";
    os << "AOAR:            " << format_fixed(a.optimum->aoar, 6) << "\n";
  } else {
    os << "ell_hat/AOAR:    not available; the dominance condition fails, so the optimal acceptance may be below 0.234\n";
  }
  os << "mixing of i*:    " << order_string(a.mixing_order_exponent) << " iterations\n";
  os << analysis_headline(a) << "\n";
}

int cmd_analyze(const CommonOptions& o) {
  const auto lc = load_config(o.config);
  const auto r = resolve(lc.plan);
  if (o.format == "json") {
    std::cout << to_json(r.analysis).dump(2) << "\n";
  } else {
    print_analysis(r, std::cout);
  }
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "analysis.json", std::ios::binary) << to_json(r.analysis).dump(2) << "\n";
  }
  return r.analysis.condition5.verdict == Verdict::Holds ? kExitOk : kExitViolated;
}

int cmd_spectrum(const CommonOptions& o) {
  const auto lc = load_config(o.config);
  if (lc.plan.target.is_product()) throw ConfigError("spectrum needs a covariance target");
  const auto s = classify_spectrum([&](Index d) { return lc.plan.target.covariance(d); }, lc.plan.spectrum_grid);
  std::cerr << "inferred: " << s.scaling.describe() << "\n";
  for (const auto& c : s.clusters) {
    std::cerr << "cluster " << c.id << ": exponent " << to_string(c.exponent) << " ("
              << (c.growing ? "group" : "finite") << ", " << c.count_largest << " eigenvalues at the largest d)\n";
  }
  if (o.out.empty()) {
    write_spectrum_csv(std::cout, s);
  } else {
    fs::create_directories(o.out);
    std::ofstream f(fs::path(o.out) / "spectrum.csv", std::ios::binary);
    write_spectrum_csv(f, s);
  }
  return kExitOk;
}

/// Primary CSV of each study, echoed with --format csv.
const char* primary_file(const std::string& study) {
  if (study == "simulate") return "chains.csv";
  if (study == "sweep") return "sweep.csv";
  if (study == "scan") return "scan.csv";
  if (study == "violation") return "violation_sweep.csv";
  if (study == "compare") return "compare.csv";
  if (study == "er_convergence") return "er_convergence.csv";
  return "verdict.txt";
}

int cmd_study(const CommonOptions& o, const std::optional<std::string>& study) {
  auto lc = load_with_overrides(o);
  if (study) {
    lc.document["experiment"]["studies"] = nlohmann::json::array({*study});
    lc.plan.studies = {*study};
    if (*study == "compare" && (!lc.plan.target.is_product() || lc.plan.target.family != "normal")) {
      std::cerr << "compare: refused: the chain-versus-diffusion comparison needs a normal product target "
                   "(its only oracle is the OU autocorrelation)\n";
      return kExitError;
    }
  }
  const auto out = output_dir(o, lc);
  std::function<void(const std::string&)> log;
  if (!o.quiet) log = [](const std::string& m) { std::cerr << m << "\n"; };
  const auto outcome = run_plan(lc.plan, lc.document, out, log);

  if (o.format == "json") {
    std::cout << outcome.summary.dump(2) << "\n";
  } else if (study) {
    const auto p = out / primary_file(*study);
    if (fs::exists(p)) std::cout << read_file(p);
  }
  std::cerr << read_file(out / "verdict.txt");
  std::cerr << "outputs written to " << out.string() << "\n";
  return outcome.partial_failure ? kExitPartial : kExitOk;
}

int cmd_rerun(const std::string& manifest, const std::string& out, bool quiet) {
  std::function<void(const std::string&)> log;
  if (!quiet) log = [](const std::string& m) { std::cerr << m << "\n"; };
  const auto rep = rerun_manifest(manifest, out, log);
  if (rep.identical()) {
    std::cout << "rerun identical: every output matches the manifest hashes\n";
    return rep.outcome.partial_failure ? kExitPartial : kExitOk;
  }
  std::cout << "rerun differs:";
  for (const auto& m : rep.mismatched) std::cout << ' ' << m;
  std::cout << "\n";
  return kExitMismatch;
}

int cmd_selftest(std::optional<double> perturb) {
  std::function<double(double)> cdf;
  if (perturb) {
    const double eps = *perturb;
    cdf = [eps](double x) { return normal_cdf(x) + eps; };
  }
  const auto rep = run_selftest(cdf);
  for (const auto& c : rep.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  [" << c.detail << "]\n";
  }
  if (rep.ok()) {
    std::cout << "selftest: pass\n";
    return kExitOk;
  }
  std::cout << "selftest: FAIL\n";
  return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optscale: optimal random-walk Metropolis scaling for non-i.i.d. product targets"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(OPTSCALE_VERSION));

  CommonOptions opts;
  auto* analyze = app.add_subcommand("analyze", "symbolic analysis: alpha, dominance condition, E_R, ell-hat, AOAR");
  add_common(analyze, opts, false);
  analyze->add_option("--out", opts.out, "also write analysis.json here");
  analyze->add_option("--format", opts.format, "stdout format")->check(CLI::IsMember({"text", "json"}));

  auto* spectrum = app.add_subcommand("spectrum", "classify a covariance family's eigenvalue spectrum");
  add_common(spectrum, opts, false);
  spectrum->add_option("--out", opts.out, "write spectrum.csv here instead of stdout");

  const std::vector<std::pair<std::string, std::string>> studies{
      {"simulate", "run single chains and record diagnostics"},
      {"sweep", "acceptance and efficiency over an ell grid"},
      {"scan", "optimal acceptance across dimensions for (d^-lambda, 1, ..., 1)"},
      {"compare", "rescaled chain versus the Langevin limit"},
      {"violation", "empirical optimum when the dominance condition fails"},
      {"converge", "sum of R_i against E_R as d grows"}};
  std::vector<CLI::App*> study_cmds;
  for (const auto& [name, help] : studies) {
    auto* c = app.add_subcommand(name, help);
    add_common(c, opts, true);
    c->add_option("--format", opts.format, "stdout echo: primary csv or summary json")
        ->check(CLI::IsMember({"csv", "json"}));
    study_cmds.push_back(c);
  }
  auto* run = app.add_subcommand("run", "run every study listed in the config");
  add_common(run, opts, true);
  run->add_option("--format", opts.format, "stdout echo")->check(CLI::IsMember({"csv", "json"}));

  std::string manifest;
  std::string rerun_out;
  bool rerun_quiet = false;
  auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest and compare outputs byte for byte");
  rerun->add_option("--manifest", manifest, "manifest.json of a previous run")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "directory for the repeated run")->required();
  rerun->add_flag("--quiet", rerun_quiet, "no progress messages");

  std::optional<double> perturb;
  auto* selftest = app.add_subcommand("selftest", "fast acceptance checks");
  selftest->add_option("--perturb-cdf", perturb, "test hook: add this constant to Phi")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub->help() : app.help());
    return kExitError;
  }

  try {
    if (analyze->parsed()) {
      if (opts.format == "csv") opts.format = "text";
      return cmd_analyze(opts);
    }
    if (spectrum->parsed()) return cmd_spectrum(opts);
    for (std::size_t k = 0; k < study_cmds.size(); ++k) {
      if (study_cmds[k]->parsed()) {
        const std::string name = studies[k].first == "converge" ? "er_convergence" : studies[k].first;
        return cmd_study(opts, name);
      }
    }
    if (run->parsed()) return cmd_study(opts, std::nullopt);
    if (rerun->parsed()) return cmd_rerun(manifest, rerun_out, rerun_quiet);
    if (selftest->parsed()) return cmd_selftest(perturb);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
