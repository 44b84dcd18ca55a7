#include "optscale/rational.hpp"

#include <cctype>
#include <charconv>
#include <limits>

namespace optscale {
namespace {

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  if (s.empty()) throw RationalParseError("empty integer in '" + std::string(whole) + "'");
  std::int64_t value = 0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw RationalParseError("not an exact fraction: '" + std::string(whole) + "'");
  }
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

Rational parse_rational(std::string_view text) {
  const std::string_view s = trim(text);
  if (s.empty()) throw RationalParseError("empty exponent");

  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    const auto num = parse_int(trim(s.substr(0, slash)), s);
    const auto den = parse_int(trim(s.substr(slash + 1)), s);
    if (den == 0) throw RationalParseError("zero denominator in '" + std::string(s) + "'");
    return Rational(num, den);
  }

  if (const auto dot = s.find('.'); dot != std::string_view::npos) {
    const std::string_view int_part = s.substr(0, dot);
    const std::string_view frac_part = s.substr(dot + 1);
    if (frac_part.empty() || frac_part.size() > 15) {
      throw RationalParseError("not an exact fraction: '" + std::string(s) + "'");
    }
    for (char c : frac_part) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        throw RationalParseError("not an exact fraction: '" + std::string(s) + "'");
      }
    }
    const bool negative = !int_part.empty() && int_part.front() == '-';
    std::int64_t whole = 0;
    if (!int_part.empty() && int_part != "-" && int_part != "+") whole = parse_int(int_part, s);
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac_part.size(); ++i) scale *= 10;
    const std::int64_t frac = parse_int(frac_part, s);
    const std::int64_t magnitude = (whole < 0 ? -whole : whole) * scale + frac;
    return Rational(negative ? -magnitude : magnitude, scale);
  }

  return Rational(parse_int(s, s));
}

std::string to_string(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

}  // namespace optscale
