#pragma once

// Experiment configuration files: strict JSON with exact-fraction exponents.

#include "optscale/experiments.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace optscale {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads and parses a JSON file; syntax errors report line and column.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Validates the document against the schema (unknown keys are errors, with
/// the offending field path in the message) and builds the plan.
ExperimentPlan plan_from_json(const nlohmann::json& config);

struct LoadedConfig {
  nlohmann::json document;
  ExperimentPlan plan;
  std::optional<std::filesystem::path> output_dir;
};

LoadedConfig load_config(const std::filesystem::path& path);

struct RerunReport {
  RunOutcome outcome;
  /// Output files whose hash differs from the manifest (or that are missing).
  std::vector<std::string> mismatched;
  bool identical() const { return mismatched.empty(); }
};

/// Re-executes the configuration embedded in a manifest into `out` and
/// compares every output except the manifest itself.
RerunReport rerun_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out,
                           std::function<void(const std::string&)> log = {});

}  // namespace optscale
