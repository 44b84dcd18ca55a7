#pragma once

#include "optscale/asymptotics.hpp"
#include "optscale/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace optscale {

/// Random valid scaling vector: exponents p/q in [-3, 3] with q <= max_den,
/// beta in (0, 3], 0..3 finite terms, 1..3 groups, a random i*.
ScalingVector random_scaling_vector(Rng& rng, std::int64_t max_den = 6);

/// Symbolic analysis and the brute-force oracle agree on alpha's limit
/// classes and the dominance-condition verdict.
struct OracleComparison {
  bool agree = true;
  std::string detail;
};
OracleComparison compare_with_oracle(const ScalingVector& sv);

struct SelftestCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  bool ok() const;
};

/// Fast checks: analyzer examples and oracle agreement, u-hat/AOAR
/// constants, Fisher constants. `cdf` replaces the standard normal CDF in the
/// constant checks (a fault-injection hook); empty means the real one.
SelftestReport run_selftest(const std::function<double(double)>& cdf = {});

}  // namespace optscale
