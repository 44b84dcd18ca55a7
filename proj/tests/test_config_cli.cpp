#include <doctest.h>

#include "optscale/config.hpp"
#include "optscale/io.hpp"
#include "optscale/normal.hpp"
#include "optscale/selftest.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace optscale;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json intraclass_config() {
  return json::parse(R"({
    "schema_version": 1,
    "target": {"covariance": "intraclass", "diag": 2, "offdiag": 1},
    "scaling_vector": {
      "finite_terms": [{"K": 1, "lambda": "-1"}],
      "groups": [{"K": 1, "gamma": "0", "card_coeff": 1, "card_exponent": "1"}]
    },
    "component_of_interest": {"group_member": 0},
    "experiment": {"studies": ["sweep"], "d": [20], "iterations": 2000, "bootstrap": 10,
                   "ell_grid": {"min": 1.0, "max": 4.0, "points": 5}},
    "seed": 7
  })");
}

std::string schema_error(const json& j) {
  try {
    plan_from_json(j);
  } catch (const SchemaError& e) {
    return e.what();
  }
  return "";
}

fs::path write_temp(const std::string& name, const std::string& text) {
  const auto dir = fs::temp_directory_path() / "optscale_cli_test";
  fs::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OPTSCALE_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("a valid config builds a plan") {
  const auto p = plan_from_json(intraclass_config());
  CHECK(p.target.kind == TargetSpec::Kind::Intraclass);
  REQUIRE(p.scaling);
  CHECK(p.scaling->finite_terms()[0].exponent == Rational(-1));
  CHECK(p.dims == std::vector<Index>{20});
  CHECK(p.ell_grid.size() == 5);
  CHECK(p.seed == 7);
  CHECK(std::holds_alternative<GroupMemberRef>(p.component));
}

TEST_CASE("config strictness") {
  SUBCASE("unknown keys name their field path") {
    auto j = intraclass_config();
    j["experiment"]["iteration"] = 5;
    CHECK(schema_error(j).find("experiment") != std::string::npos);
    CHECK(schema_error(j).find("iteration") != std::string::npos);
    auto k = intraclass_config();
    k["scaling_vector"]["groups"][0]["gama"] = "0";
    CHECK(schema_error(k).find("gama") != std::string::npos);
    auto top = intraclass_config();
    top["extra"] = true;
    CHECK_FALSE(schema_error(top).empty());
  }
  SUBCASE("float exponents are rejected") {
    auto j = intraclass_config();
    j["scaling_vector"]["groups"][0]["gamma"] = 0.5;
    CHECK(schema_error(j).find("gamma") != std::string::npos);
    auto k = intraclass_config();
    k["scaling_vector"]["finite_terms"][0]["lambda"] = "abc";
    CHECK_FALSE(schema_error(k).empty());
  }
  SUBCASE("integer exponents are tolerated, fractions parse exactly") {
    auto j = intraclass_config();
    j["scaling_vector"]["finite_terms"][0]["lambda"] = -1;
    j["scaling_vector"]["groups"][0]["card_exponent"] = "3/3";
    CHECK(schema_error(j).empty());
  }
  SUBCASE("invariant violations") {
    auto j = intraclass_config();
    j["scaling_vector"]["groups"][0]["card_exponent"] = "0";
    CHECK_FALSE(schema_error(j).empty());
    auto k = intraclass_config();
    k["target"]["diag"] = 0.5;
    CHECK_FALSE(schema_error(k).empty());
    auto m = intraclass_config();
    m["experiment"]["iterations"] = 0;
    CHECK_FALSE(schema_error(m).empty());
    auto s = intraclass_config();
    s["experiment"]["studies"] = {"plot"};
    CHECK(schema_error(s).find("plot") != std::string::npos);
    auto v = intraclass_config();
    v["schema_version"] = 2;
    CHECK_FALSE(schema_error(v).empty());
  }
  SUBCASE("family targets need a scaling vector") {
    CHECK_FALSE(schema_error(json{{"target", {{"family", "normal"}}}}).empty());
    CHECK_FALSE(schema_error(json{{"target", {{"family", "cauchy"}}}}).empty());
  }
  SUBCASE("syntax errors report a line") {
    const auto p = write_temp("broken.json", "{\n  \"target\": {\n    \"family\": normal\n  }\n}\n");
    try {
      read_json_file(p);
      FAIL("expected a syntax error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
  }
}

TEST_CASE("scaling vector JSON round trip") {
  const ScalingVector sv({OrderTerm{2.0, Rational(3, 4)}, OrderTerm{1.0, Rational(-1)}},
                         {GroupSpec{FixedK{1.5}, Rational(0), 2.0, Rational(1)},
                          GroupSpec{RandomK{0.5}, Rational(-1, 3), 1.0, Rational(1, 2)}},
                         FiniteTermRef{1});
  CHECK(scaling_vector_from_json(to_json(sv)) == sv);
}

TEST_CASE("analysis JSON is a parse-emit-parse fixpoint") {
  for (const auto& cfg : {intraclass_config(), json::parse(R"({"target": {"covariance": "hierarchical"},
                                                               "component_of_interest": {"group_member": 0},
                                                               "spectrum": {"d_grid": [16, 32, 64, 128]}})")}) {
    const auto a = resolve(plan_from_json(cfg)).analysis;
    const auto j1 = to_json(a);
    const auto back = analysis_from_json(j1);
    const auto j2 = to_json(back);
    CHECK(j1 == j2);
    CHECK(back.alpha == a.alpha);
    CHECK(back.condition5.verdict == a.condition5.verdict);
    CHECK(j1["schema_version"] == kSchemaVersion);
  }
  auto j = to_json(resolve(plan_from_json(intraclass_config())).analysis);
  j["surprise"] = 1;
  CHECK_THROWS_AS(analysis_from_json(j), SchemaError);
  j.erase("surprise");
  j["schema_version"] = 99;
  CHECK_THROWS_AS(analysis_from_json(j), SchemaError);
}

TEST_CASE("headline and order strings") {
  CHECK(order_string(Rational(0)) == "O(1)");
  CHECK(order_string(Rational(1)) == "O(d)");
  CHECK(order_string(Rational(2)) == "O(d^2)");
  CHECK(order_string(Rational(3, 4)) == "O(d^(3/4))");
  const auto a = resolve(plan_from_json(intraclass_config())).analysis;
  CHECK(analysis_headline(a) == "alpha=1, condition5=holds, AOAR=0.234, mixing O(d)");
  auto first = intraclass_config();
  first["component_of_interest"] = {{"finite_term", 0}};
  first["target"] = {{"family", "normal"}};
  const auto b = resolve(plan_from_json(first)).analysis;
  CHECK(analysis_headline(b) == "alpha=2, condition5=holds, AOAR=0.234, mixing O(d^2)");
}

TEST_CASE("chain CSV columns") {
  std::ostringstream os;
  write_chain_csv_header(os);
  CHECK(os.str() == "ell,d,alpha,iterations,accept_rate,accept_se,esjd_istar,esjd_rescaled,sum_R,seed\n");
}

TEST_CASE("selftest passes and catches a perturbed CDF") {
  const auto ok = run_selftest();
  for (const auto& c : ok.checks) CHECK_MESSAGE(c.pass, c.name << ": " << c.detail);
  CHECK(ok.ok());
  const auto bad = run_selftest([](double x) { return normal_cdf(x) + 0.01; });
  CHECK_FALSE(bad.ok());
  bool aoar_failed = false;
  for (const auto& c : bad.checks) {
    if (c.name.find("AOAR") != std::string::npos) aoar_failed = !c.pass;
  }
  CHECK(aoar_failed);
}

TEST_CASE("command line exit codes") {
  const auto ic = write_temp("intraclass.json", intraclass_config().dump());
  auto hier = json::parse(R"({"target": {"covariance": "hierarchical"}, "component_of_interest": {"group_member": 0},
                              "spectrum": {"d_grid": [16, 32, 64, 128]}})");
  const auto hc = write_temp("hier.json", hier.dump());
  auto logistic = intraclass_config();
  logistic["target"] = {{"family", "logistic"}};
  const auto lc = write_temp("logistic.json", logistic.dump());
  auto bad = intraclass_config();
  bad["bogus"] = 1;
  const auto bc = write_temp("bad.json", bad.dump());
  const auto out = fs::temp_directory_path() / "optscale_cli_test" / "out";
  fs::remove_all(out);

  CHECK(run_cli("analyze --config " + ic.string()) == 0);
  CHECK(run_cli("analyze --config " + hc.string()) == 2);
  CHECK(run_cli("analyze --config " + bc.string()) == 1);
  CHECK(run_cli("analyze --config /nonexistent/config.json") == 1);
  CHECK(run_cli("analyze") == 1);
  CHECK(run_cli("sweep") == 1);
  CHECK(run_cli("compare --config " + lc.string() + " --out " + (out / "cmp").string() + " --quiet") == 1);
  CHECK(run_cli("selftest") == 0);
  CHECK(run_cli("selftest --perturb-cdf 0.01") != 0);

  // simulate twice with the same seed gives identical files
  const auto a = out / "sim_a";
  const auto b = out / "sim_b";
  CHECK(run_cli("simulate --config " + lc.string() + " --out " + a.string() + " --quiet --seed 5") == 0);
  CHECK(run_cli("simulate --config " + lc.string() + " --out " + b.string() + " --quiet --seed 5") == 0);
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / e.path().filename()), e.path().filename().string());
  }
  CHECK(run_cli("rerun --manifest " + (a / "manifest.json").string() + " --out " + (out / "again").string() +
                " --quiet") == 0);

  // a tampered manifest hash is reported as a mismatch
  auto m = json::parse(slurp(a / "manifest.json"));
  m["outputs"]["chains.csv"] = "0000000000000000";
  std::ofstream(out / "tampered.json") << m.dump();
  CHECK(run_cli("rerun --manifest " + (out / "tampered.json").string() + " --out " + (out / "t").string() +
                " --quiet") == 4);

  // a study that fails leaves a partial-failure status
  auto partial = intraclass_config();
  partial["experiment"]["studies"] = {"sweep", "violation"};
  const auto pc = write_temp("partial.json", partial.dump());
  CHECK(run_cli("run --config " + pc.string() + " --out " + (out / "partial").string() + " --quiet") == 3);

  // sweep a_theory at ell = 2.38 reads 0.234
  auto iid = json::parse(R"({"target": {"family": "normal"},
    "scaling_vector": {"groups": [{"K": 1, "gamma": "0", "card_exponent": "1"}], "component_of_interest": {"group_member": 0}},
    "experiment": {"d": [10], "iterations": 500, "ell_grid": [1.0, 2.38, 4.0], "bootstrap": 0}})");
  const auto ip = write_temp("iid.json", iid.dump());
  CHECK(run_cli("sweep --config " + ip.string() + " --out " + (out / "sweep").string() + " --quiet") == 0);
  const auto csv = slurp(out / "sweep" / "sweep.csv");
  CHECK(csv.rfind("d,ell,replicates,iterations,alpha,accept_emp,accept_se,esjd_rescaled,esjd_rescaled_se,sum_R,a_theory,"
                  "v_theory,status\n",
                  0) == 0);
  const auto line_start = csv.find("\n10,2.38,");
  REQUIRE(line_start != std::string::npos);
  const auto line = csv.substr(line_start + 1, csv.find('\n', line_start + 1) - line_start - 1);
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 13);
  CHECK(std::stod(cells[10]) == doctest::Approx(0.2340).epsilon(5e-4));
  fs::remove_all(out);
}
