#include "optscale/io.hpp"

#include "optscale/format.hpp"

#include <algorithm>
#include <cmath>

namespace optscale {

ChainRow summarize(const ChainDiagnostics& diag, const Rational& alpha) {
  ChainRow r;
  r.ell = diag.ell;
  r.d = diag.dimension;
  r.alpha = alpha;
  r.iterations = diag.iterations;
  r.accept_rate = diag.acceptance_rate();
  r.accept_se = diag.iterations >= 100 ? acceptance_with_se(diag).se : std::nan("");
  r.esjd_istar = diag.esjd_istar();
  r.esjd_rescaled = diag.esjd_rescaled();
  r.sum_r = diag.mean_sum_r();
  r.seed = diag.seed;
  return r;
}

void write_chain_csv_header(std::ostream& os) {
  os << "ell,d,alpha,iterations,accept_rate,accept_se,esjd_istar,esjd_rescaled,sum_R,seed\n";
}

void write_chain_csv_row(std::ostream& os, const ChainRow& r) {
  os << format_double(r.ell) << ',' << r.d << ',' << to_string(r.alpha) << ',' << r.iterations << ','
     << format_double(r.accept_rate) << ',' << format_double(r.accept_se) << ',' << format_double(r.esjd_istar)
     << ',' << format_double(r.esjd_rescaled) << ',' << format_double(r.sum_r) << ',' << r.seed << '\n';
}

void write_spectrum_csv(std::ostream& os, const SpectrumClassification& s) {
  os << "d,eigen_index,eigenvalue,fitted_exponent,cluster_id\n";
  for (const auto& r : s.rows) {
    os << r.d << ',' << r.eigen_index << ',' << format_double(r.eigenvalue) << ','
       << format_double(r.fitted_exponent) << ',' << r.cluster_id << '\n';
  }
}

namespace json_util {

void reject_unknown(const nlohmann::json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw SchemaError(where + "." + key + ": unknown key");
    }
  }
}

const nlohmann::json& require(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(where + "." + key + ": required");
  return obj.at(key);
}

double number(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw SchemaError(where + ": expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) throw SchemaError(where + ": must be finite");
  return x;
}

double positive(const nlohmann::json& j, const std::string& where) {
  const double x = number(j, where);
  if (!(x > 0.0)) throw SchemaError(where + ": must be > 0");
  return x;
}

std::int64_t integer(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number_integer()) throw SchemaError(where + ": expected an integer");
  return j.get<std::int64_t>();
}

std::string text(const nlohmann::json& j, const std::string& where) {
  if (!j.is_string()) throw SchemaError(where + ": expected a string");
  return j.get<std::string>();
}

Rational exponent(const nlohmann::json& j, const std::string& where) {
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  if (!j.is_string()) throw SchemaError(where + ": exponents are exact fractions given as strings, e.g. \"3/4\"");
  try {
    return parse_rational(j.get<std::string>());
  } catch (const RationalParseError& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

}  // namespace json_util

namespace ju = json_util;

nlohmann::json to_json(const ScalingVector& sv) {
  nlohmann::json j;
  j["finite_terms"] = nlohmann::json::array();
  for (const auto& t : sv.finite_terms()) {
    j["finite_terms"].push_back({{"K", t.constant}, {"lambda", to_string(t.exponent)}});
  }
  j["groups"] = nlohmann::json::array();
  for (const auto& g : sv.groups()) {
    nlohmann::json gj;
    if (const auto* fk = std::get_if<FixedK>(&g.constant_model)) {
      gj["K"] = fk->K;
    } else {
      gj["b"] = std::get<RandomK>(g.constant_model).b;
    }
    gj["gamma"] = to_string(g.gamma);
    gj["card_coeff"] = g.card_coeff;
    gj["card_exponent"] = to_string(g.card_exponent);
    j["groups"].push_back(gj);
  }
  const auto& coi = sv.component_of_interest();
  if (const auto* f = std::get_if<FiniteTermRef>(&coi)) {
    j["component_of_interest"] = {{"finite_term", f->index}};
  } else if (const auto* g = std::get_if<GroupMemberRef>(&coi)) {
    j["component_of_interest"] = {{"group_member", g->index}};
  }
  if (sv.istar_origin_group()) j["istar_origin_group"] = *sv.istar_origin_group();
  return j;
}

namespace {

ComponentOfInterest coi_from_json(const nlohmann::json& j, const std::string& where) {
  ju::reject_unknown(j, {"finite_term", "group_member"}, where);
  if (j.size() != 1) throw SchemaError(where + ": give exactly one of finite_term, group_member");
  if (j.contains("finite_term")) {
    const auto k = ju::integer(j["finite_term"], where + ".finite_term");
    if (k < 0) throw SchemaError(where + ".finite_term: must be >= 0");
    return FiniteTermRef{static_cast<std::size_t>(k)};
  }
  const auto k = ju::integer(j["group_member"], where + ".group_member");
  if (k < 0) throw SchemaError(where + ".group_member: must be >= 0");
  return GroupMemberRef{static_cast<std::size_t>(k)};
}

}  // namespace

ScalingVector scaling_vector_from_json(const nlohmann::json& j, const std::string& where) {
  ju::reject_unknown(j, {"finite_terms", "groups", "component_of_interest", "istar_origin_group"}, where);
  std::vector<OrderTerm> finite;
  if (j.contains("finite_terms")) {
    const auto& arr = j["finite_terms"];
    if (!arr.is_array()) throw SchemaError(where + ".finite_terms: expected an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const std::string w = where + ".finite_terms[" + std::to_string(k) + "]";
      ju::reject_unknown(arr[k], {"K", "lambda"}, w);
      finite.push_back({ju::positive(ju::require(arr[k], "K", w), w + ".K"),
                        ju::exponent(ju::require(arr[k], "lambda", w), w + ".lambda")});
    }
  }
  std::vector<GroupSpec> groups;
  const auto& garr = ju::require(j, "groups", where);
  if (!garr.is_array()) throw SchemaError(where + ".groups: expected an array");
  for (std::size_t k = 0; k < garr.size(); ++k) {
    const std::string w = where + ".groups[" + std::to_string(k) + "]";
    const auto& g = garr[k];
    ju::reject_unknown(g, {"K", "b", "gamma", "card_coeff", "card_exponent"}, w);
    GroupSpec spec;
    if (g.contains("K") == g.contains("b")) throw SchemaError(w + ": give exactly one of K, b");
    if (g.contains("K")) {
      spec.constant_model = FixedK{ju::positive(g["K"], w + ".K")};
    } else {
      spec.constant_model = RandomK{ju::positive(g["b"], w + ".b")};
    }
    spec.gamma = ju::exponent(ju::require(g, "gamma", w), w + ".gamma");
    spec.card_coeff = g.contains("card_coeff") ? ju::positive(g["card_coeff"], w + ".card_coeff") : 1.0;
    spec.card_exponent =
        g.contains("card_exponent") ? ju::exponent(g["card_exponent"], w + ".card_exponent") : Rational(1);
    groups.push_back(spec);
  }
  ComponentOfInterest coi;
  if (j.contains("component_of_interest")) coi = coi_from_json(j["component_of_interest"], where + ".component_of_interest");
  std::optional<std::size_t> origin;
  if (j.contains("istar_origin_group")) {
    origin = static_cast<std::size_t>(ju::integer(j["istar_origin_group"], where + ".istar_origin_group"));
  }
  try {
    return ScalingVector(std::move(finite), std::move(groups), coi, origin);
  } catch (const ScalingVectorError& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

nlohmann::json to_json(const ScalingAnalysis& a) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["normalized"] = to_json(a.normalized);
  j["mode"] = to_string(a.mode);
  j["fisher"] = a.fisher;
  j["alpha"] = to_string(a.alpha);
  j["alpha_per_group"] = nlohmann::json::array();
  for (const auto& r : a.alpha_per_group) j["alpha_per_group"].push_back(to_string(r));
  nlohmann::json c5;
  c5["verdict"] = to_string(a.condition5.verdict);
  c5["numerator_exponent"] =
      a.condition5.numerator_exponent ? nlohmann::json(to_string(*a.condition5.numerator_exponent)) : nlohmann::json();
  c5["denominator_exponent"] = to_string(a.condition5.denominator_exponent);
  j["condition5"] = c5;
  j["dominating_groups"] = a.dominating_groups;
  j["e_r_homogeneous"] = a.e_r_homogeneous;
  j["e_r_inhomogeneous"] = a.e_r_inhomogeneous;
  if (a.optimum) {
    j["optimum"] = {{"ell_hat", a.optimum->ell_hat}, {"aoar", a.optimum->aoar}, {"u_hat", a.optimum->u_hat}};
  } else {
    j["optimum"] = nullptr;
  }
  j["mixing_order_exponent"] = to_string(a.mixing_order_exponent);
  return j;
}

namespace {

Verdict parse_verdict(const std::string& s, const std::string& where) {
  if (s == "holds") return Verdict::Holds;
  if (s == "violated") return Verdict::Violated;
  throw SchemaError(where + ": expected holds or violated");
}

}  // namespace

ScalingAnalysis analysis_from_json(const nlohmann::json& j) {
  const std::string w = "analysis";
  ju::reject_unknown(j, {"schema_version", "normalized", "mode", "fisher", "alpha", "alpha_per_group", "condition5",
                         "dominating_groups", "e_r_homogeneous", "e_r_inhomogeneous", "optimum",
                         "mixing_order_exponent"},
                     w);
  const auto version = ju::integer(ju::require(j, "schema_version", w), w + ".schema_version");
  if (version != kSchemaVersion) throw SchemaError(w + ".schema_version: unsupported version " + std::to_string(version));
  ScalingAnalysis a{.normalized = scaling_vector_from_json(ju::require(j, "normalized", w), w + ".normalized")};
  try {
    a.mode = parse_proposal_mode(ju::text(ju::require(j, "mode", w), w + ".mode"));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(w + ".mode: " + e.what());
  }
  a.fisher = ju::positive(ju::require(j, "fisher", w), w + ".fisher");
  a.alpha = ju::exponent(ju::require(j, "alpha", w), w + ".alpha");
  for (const auto& r : ju::require(j, "alpha_per_group", w)) a.alpha_per_group.push_back(ju::exponent(r, w + ".alpha_per_group"));
  const auto& c5 = ju::require(j, "condition5", w);
  ju::reject_unknown(c5, {"verdict", "numerator_exponent", "denominator_exponent"}, w + ".condition5");
  a.condition5.verdict = parse_verdict(ju::text(ju::require(c5, "verdict", w + ".condition5"), w + ".condition5.verdict"),
                                       w + ".condition5.verdict");
  if (c5.contains("numerator_exponent") && !c5["numerator_exponent"].is_null()) {
    a.condition5.numerator_exponent = ju::exponent(c5["numerator_exponent"], w + ".condition5.numerator_exponent");
  }
  a.condition5.denominator_exponent =
      ju::exponent(ju::require(c5, "denominator_exponent", w + ".condition5"), w + ".condition5.denominator_exponent");
  for (const auto& g : ju::require(j, "dominating_groups", w)) {
    a.dominating_groups.push_back(static_cast<std::size_t>(ju::integer(g, w + ".dominating_groups")));
  }
  a.e_r_homogeneous = ju::number(ju::require(j, "e_r_homogeneous", w), w + ".e_r_homogeneous");
  a.e_r_inhomogeneous = ju::number(ju::require(j, "e_r_inhomogeneous", w), w + ".e_r_inhomogeneous");
  const auto& opt = ju::require(j, "optimum", w);
  if (!opt.is_null()) {
    ju::reject_unknown(opt, {"ell_hat", "aoar", "u_hat"}, w + ".optimum");
    a.optimum = OptimalScaling{ju::number(ju::require(opt, "ell_hat", w + ".optimum"), w + ".optimum.ell_hat"),
                               ju::number(ju::require(opt, "aoar", w + ".optimum"), w + ".optimum.aoar"),
                               ju::number(ju::require(opt, "u_hat", w + ".optimum"), w + ".optimum.u_hat")};
  }
  a.mixing_order_exponent = ju::exponent(ju::require(j, "mixing_order_exponent", w), w + ".mixing_order_exponent");
  return a;
}

std::string order_string(const Rational& e) {
  if (e == Rational(0)) return "O(1)";
  if (e == Rational(1)) return "O(d)";
  if (e.denominator() == 1) return "O(d^" + to_string(e) + ")";
  return "O(d^(" + to_string(e) + "))";
}

std::string analysis_headline(const ScalingAnalysis& a) {
  std::string s = "alpha=" + to_string(a.alpha) + ", condition5=" + to_string(a.condition5.verdict) + ", AOAR=";
  s += a.optimum ? format_fixed(a.optimum->aoar, 3) : std::string("n/a");
  s += ", mixing " + order_string(a.mixing_order_exponent);
  return s;
}

}  // namespace optscale
