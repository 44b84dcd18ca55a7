#pragma once

// CSV and JSON encodings of analyzer, sampler and spectrum results.

#include "optscale/asymptotics.hpp"
#include "optscale/sampler.hpp"
#include "optscale/target.hpp"

#include <json.hpp>

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace optscale {

inline constexpr int kSchemaVersion = 1;

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One line of the sampler CSV.
struct ChainRow {
  double ell = 0.0;
  Index d = 0;
  Rational alpha{0};
  std::int64_t iterations = 0;
  double accept_rate = 0.0;
  double accept_se = 0.0;
  double esjd_istar = 0.0;
  double esjd_rescaled = 0.0;
  double sum_r = 0.0;
  std::uint64_t seed = 0;
};

ChainRow summarize(const ChainDiagnostics& diag, const Rational& alpha);

void write_chain_csv_header(std::ostream& os);
void write_chain_csv_row(std::ostream& os, const ChainRow& row);

/// Columns d, eigen_index, eigenvalue, fitted_exponent, cluster_id.
void write_spectrum_csv(std::ostream& os, const SpectrumClassification& spectrum);

nlohmann::json to_json(const ScalingVector& sv);
ScalingVector scaling_vector_from_json(const nlohmann::json& j, const std::string& where = "scaling_vector");

nlohmann::json to_json(const ScalingAnalysis& a);
/// Inverse of to_json; checks schema_version and rejects unknown keys.
ScalingAnalysis analysis_from_json(const nlohmann::json& j);

/// "O(1)", "O(d)", "O(d^2)", "O(d^(3/4))".
std::string order_string(const Rational& exponent);

/// "alpha=1, condition5=holds, AOAR=0.234, mixing O(d)".
std::string analysis_headline(const ScalingAnalysis& a);

// Small helpers for strict JSON decoding with field paths in messages.
namespace json_util {

void reject_unknown(const nlohmann::json& obj, const std::vector<std::string>& allowed, const std::string& where);
const nlohmann::json& require(const nlohmann::json& obj, const std::string& key, const std::string& where);
double number(const nlohmann::json& j, const std::string& where);
double positive(const nlohmann::json& j, const std::string& where);
std::int64_t integer(const nlohmann::json& j, const std::string& where);
std::string text(const nlohmann::json& j, const std::string& where);
/// Exponents are strings ("3/4"); bare integers are tolerated, floats are not.
Rational exponent(const nlohmann::json& j, const std::string& where);

}  // namespace json_util

}  // namespace optscale
