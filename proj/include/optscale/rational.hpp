#pragma once

#include <boost/rational.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace optscale {

/// Exact exponent of d. Equality of exponents must be decidable, so these are
/// never stored as floating point.
using Rational = boost::rational<std::int64_t>;

class RationalParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses "p/q", an integer, or an exact decimal such as "-0.75".
Rational parse_rational(std::string_view text);

/// "3/4", "-1", "0".
std::string to_string(const Rational& r);

inline double to_double(const Rational& r) {
  return boost::rational_cast<double>(r);
}

}  // namespace optscale
