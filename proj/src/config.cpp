#include "optscale/config.hpp"

#include "optscale/io.hpp"

#include <fstream>
#include <sstream>

namespace optscale {

namespace ju = json_util;

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path.string() + ": cannot open");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": JSON syntax error: " + e.what());
  }
}

namespace {

TargetSpec target_from_json(const nlohmann::json& j) {
  const std::string w = "target";
  ju::reject_unknown(j, {"family", "scale", "covariance", "diag", "offdiag"}, w);
  TargetSpec t;
  if (j.contains("family") == j.contains("covariance")) throw SchemaError(w + ": give exactly one of family, covariance");
  if (j.contains("family")) {
    if (j.contains("diag") || j.contains("offdiag")) throw SchemaError(w + ": diag/offdiag apply to covariance targets");
    t.kind = TargetSpec::Kind::Product;
    t.family = ju::text(j["family"], w + ".family");
    if (j.contains("scale")) t.scale = ju::positive(j["scale"], w + ".scale");
    try {
      (void)DensityFamily::from_name(t.family, t.scale);
    } catch (const std::invalid_argument& e) {
      throw SchemaError(w + ".family: " + e.what());
    }
    return t;
  }
  if (j.contains("scale")) throw SchemaError(w + ".scale: applies to family targets");
  const auto cov = ju::text(j["covariance"], w + ".covariance");
  if (cov == "intraclass") {
    t.kind = TargetSpec::Kind::Intraclass;
  } else if (cov == "hierarchical") {
    t.kind = TargetSpec::Kind::Hierarchical;
  } else if (cov == "identity") {
    t.kind = TargetSpec::Kind::Identity;
  } else {
    throw SchemaError(w + ".covariance: expected intraclass, hierarchical or identity");
  }
  if (t.kind != TargetSpec::Kind::Intraclass && (j.contains("diag") || j.contains("offdiag"))) {
    throw SchemaError(w + ": diag/offdiag apply to the intraclass covariance only");
  }
  if (j.contains("diag")) t.diag = ju::number(j["diag"], w + ".diag");
  if (j.contains("offdiag")) t.offdiag = ju::number(j["offdiag"], w + ".offdiag");
  if (!(t.diag > t.offdiag) || t.offdiag < 0.0) throw SchemaError(w + ": need diag > offdiag >= 0");
  return t;
}

std::vector<double> number_list(const nlohmann::json& j, const std::string& w) {
  if (!j.is_array() || j.empty()) throw SchemaError(w + ": expected a non-empty array of numbers");
  std::vector<double> out;
  for (std::size_t k = 0; k < j.size(); ++k) out.push_back(ju::number(j[k], w + "[" + std::to_string(k) + "]"));
  return out;
}

std::vector<Index> dim_list(const nlohmann::json& j, const std::string& w) {
  if (!j.is_array() || j.empty()) throw SchemaError(w + ": expected a non-empty array of integers");
  std::vector<Index> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto d = ju::integer(j[k], w + "[" + std::to_string(k) + "]");
    if (d < 2) throw SchemaError(w + "[" + std::to_string(k) + "]: dimensions must be >= 2");
    out.push_back(static_cast<Index>(d));
  }
  return out;
}

std::int64_t at_least(const nlohmann::json& j, const std::string& w, std::int64_t lo) {
  const auto v = ju::integer(j, w);
  if (v < lo) throw SchemaError(w + ": must be >= " + std::to_string(lo));
  return v;
}

void experiment_from_json(const nlohmann::json& j, ExperimentPlan& p) {
  const std::string w = "experiment";
  ju::reject_unknown(j,
                     {"studies", "ell_grid", "d", "iterations", "replicates", "bootstrap", "threads", "ell",
                      "trajectory_dt", "trajectory_budget", "acf_lags", "em_dt", "r_draws", "r_seeds", "scan_lambdas"},
                     w);
  if (j.contains("studies")) {
    const auto& s = j["studies"];
    if (!s.is_array() || s.empty()) throw SchemaError(w + ".studies: expected a non-empty array");
    p.studies.clear();
    static const std::vector<std::string> known{"simulate", "sweep", "scan", "violation", "compare", "er_convergence"};
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto name = ju::text(s[k], w + ".studies[" + std::to_string(k) + "]");
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        throw SchemaError(w + ".studies[" + std::to_string(k) + "]: unknown study '" + name +
                          "' (simulate, sweep, scan, violation, compare, er_convergence)");
      }
      p.studies.push_back(name);
    }
  }
  if (j.contains("ell_grid")) {
    const auto& g = j["ell_grid"];
    if (g.is_array()) {
      p.ell_grid = number_list(g, w + ".ell_grid");
      for (double e : p.ell_grid) {
        if (e < 0.0) throw SchemaError(w + ".ell_grid: values must be >= 0");
      }
    } else {
      const std::string gw = w + ".ell_grid";
      ju::reject_unknown(g, {"min", "max", "points", "relative"}, gw);
      const double lo = ju::positive(ju::require(g, "min", gw), gw + ".min");
      const double hi = ju::positive(ju::require(g, "max", gw), gw + ".max");
      const auto n = at_least(ju::require(g, "points", gw), gw + ".points", 1);
      if (hi < lo) throw SchemaError(gw + ": max < min");
      p.ell_grid = log_grid(lo, hi, static_cast<int>(n));
      if (g.contains("relative")) {
        if (!g["relative"].is_boolean()) throw SchemaError(gw + ".relative: expected true or false");
        p.ell_grid_relative = g["relative"].get<bool>();
      }
    }
  }
  if (j.contains("d")) p.dims = dim_list(j["d"], w + ".d");
  if (j.contains("iterations")) p.iterations = at_least(j["iterations"], w + ".iterations", 1);
  if (j.contains("replicates")) p.replicates = static_cast<int>(at_least(j["replicates"], w + ".replicates", 1));
  if (j.contains("bootstrap")) p.bootstrap = static_cast<int>(at_least(j["bootstrap"], w + ".bootstrap", 0));
  if (j.contains("threads")) p.threads = static_cast<int>(at_least(j["threads"], w + ".threads", 1));
  if (j.contains("ell")) {
    p.ell = ju::number(j["ell"], w + ".ell");
    if (*p.ell < 0.0) throw SchemaError(w + ".ell: must be >= 0");
  }
  if (j.contains("trajectory_dt")) p.trajectory_dt = ju::positive(j["trajectory_dt"], w + ".trajectory_dt");
  if (j.contains("trajectory_budget")) {
    p.trajectory_budget = static_cast<std::size_t>(at_least(j["trajectory_budget"], w + ".trajectory_budget", 2));
  }
  if (j.contains("acf_lags")) {
    p.acf_lags = number_list(j["acf_lags"], w + ".acf_lags");
    for (double t : p.acf_lags) {
      if (t < 0.0) throw SchemaError(w + ".acf_lags: lags must be >= 0");
    }
  }
  if (j.contains("em_dt")) p.em_dt = ju::positive(j["em_dt"], w + ".em_dt");
  if (j.contains("r_draws")) p.r_draws = static_cast<Index>(at_least(j["r_draws"], w + ".r_draws", 1));
  if (j.contains("r_seeds")) p.r_seeds = static_cast<int>(at_least(j["r_seeds"], w + ".r_seeds", 2));
  if (j.contains("scan_lambdas")) {
    const auto& l = j["scan_lambdas"];
    if (!l.is_array() || l.empty()) throw SchemaError(w + ".scan_lambdas: expected a non-empty array");
    p.scan_lambdas.clear();
    for (std::size_t k = 0; k < l.size(); ++k) {
      p.scan_lambdas.push_back(ju::exponent(l[k], w + ".scan_lambdas[" + std::to_string(k) + "]"));
    }
  }
}

}  // namespace

ExperimentPlan plan_from_json(const nlohmann::json& c) {
  const std::string w = "config";
  ju::reject_unknown(c,
                     {"schema_version", "target", "scaling_vector", "spectrum", "component_of_interest", "proposal",
                      "experiment", "seed", "output_dir"},
                     w);
  if (c.contains("schema_version")) {
    const auto v = ju::integer(c["schema_version"], w + ".schema_version");
    if (v != kSchemaVersion) throw SchemaError(w + ".schema_version: unsupported version " + std::to_string(v));
  }
  ExperimentPlan p;
  p.target = target_from_json(ju::require(c, "target", w));
  if (c.contains("scaling_vector") && c.contains("spectrum")) {
    throw SchemaError(w + ": give scaling_vector or spectrum, not both");
  }
  if (c.contains("scaling_vector")) p.scaling = scaling_vector_from_json(c["scaling_vector"], "scaling_vector");
  if (c.contains("spectrum")) {
    if (p.target.is_product()) throw SchemaError("spectrum: only covariance targets have a spectrum");
    ju::reject_unknown(c["spectrum"], {"d_grid"}, "spectrum");
    p.spectrum_grid = dim_list(ju::require(c["spectrum"], "d_grid", "spectrum"), "spectrum.d_grid");
    if (p.spectrum_grid.size() < 4) throw SchemaError("spectrum.d_grid: need at least 4 dimensions");
  }
  if (p.target.is_product() && !p.scaling) throw SchemaError(w + ".scaling_vector: required for family targets");
  if (c.contains("component_of_interest")) {
    const auto& j = c["component_of_interest"];
    ju::reject_unknown(j, {"finite_term", "group_member"}, "component_of_interest");
    if (j.size() != 1) throw SchemaError("component_of_interest: give exactly one of finite_term, group_member");
    if (j.contains("finite_term")) {
      p.component = FiniteTermRef{static_cast<std::size_t>(at_least(j["finite_term"], "component_of_interest.finite_term", 0))};
    } else {
      p.component =
          GroupMemberRef{static_cast<std::size_t>(at_least(j["group_member"], "component_of_interest.group_member", 0))};
    }
  }
  if (p.scaling) {
    try {
      auto sv = std::holds_alternative<std::monostate>(p.component) ? *p.scaling : p.scaling->with_component(p.component);
      if (std::holds_alternative<std::monostate>(sv.component_of_interest())) {
        throw SchemaError("component_of_interest: required (top level or inside scaling_vector)");
      }
    } catch (const ScalingVectorError& e) {
      throw SchemaError(std::string("component_of_interest: ") + e.what());
    }
  }
  if (c.contains("proposal")) {
    ju::reject_unknown(c["proposal"], {"mode"}, "proposal");
    if (c["proposal"].contains("mode")) {
      try {
        p.mode = parse_proposal_mode(ju::text(c["proposal"]["mode"], "proposal.mode"));
      } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("proposal.mode: ") + e.what());
      }
    }
  }
  if (c.contains("experiment")) experiment_from_json(c["experiment"], p);
  if (c.contains("seed")) {
    if (!c["seed"].is_number_unsigned() && !(c["seed"].is_number_integer() && c["seed"].get<std::int64_t>() >= 0)) {
      throw SchemaError(w + ".seed: expected a non-negative integer");
    }
    p.seed = c["seed"].get<std::uint64_t>();
  }
  if (c.contains("output_dir")) (void)ju::text(c["output_dir"], w + ".output_dir");
  return p;
}

LoadedConfig load_config(const std::filesystem::path& path) {
  LoadedConfig lc;
  lc.document = read_json_file(path);
  try {
    lc.plan = plan_from_json(lc.document);
  } catch (const SchemaError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (lc.document.contains("output_dir")) {
    std::filesystem::path out = lc.document["output_dir"].get<std::string>();
    lc.output_dir = out.is_relative() ? path.parent_path() / out : out;
  }
  return lc;
}

RerunReport rerun_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out,
                           std::function<void(const std::string&)> log) {
  const auto manifest = read_json_file(manifest_path);
  if (!manifest.contains("config") || !manifest.contains("outputs")) {
    throw ConfigError(manifest_path.string() + ": not a run manifest (needs config and outputs)");
  }
  const auto& config = manifest["config"];
  ExperimentPlan plan;
  try {
    plan = plan_from_json(config);
  } catch (const SchemaError& e) {
    throw ConfigError(manifest_path.string() + ": embedded config: " + e.what());
  }
  if (manifest.contains("threads")) plan.threads = manifest["threads"].get<int>();
  RerunReport rep;
  rep.outcome = run_plan(plan, config, out, std::move(log));
  for (const auto& [name, hash] : manifest["outputs"].items()) {
    std::ifstream f(out / name, std::ios::binary);
    if (!f) {
      rep.mismatched.push_back(name + " (missing)");
      continue;
    }
    std::ostringstream buf;
    buf << f.rdbuf();
    if (fnv1a_hex(buf.str()) != hash.get<std::string>()) rep.mismatched.push_back(name);
  }
  return rep;
}

}  // namespace optscale
