#pragma once

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace optscale {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a master seed and a cell key, so a
/// cell's randomness does not depend on which worker runs it or in what order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t k : key) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Normal and uniform draws on top of an Rng. The ziggurat normal is several
/// times cheaper than std::normal_distribution, which matters at d = 1000.
class Gaussian {
 public:
  double operator()(Rng& rng) { return normal_(rng); }

 private:
  boost::random::normal_distribution<double> normal_;
};

inline double uniform01(Rng& rng) {
  return boost::random::uniform_01<double>()(rng);
}

}  // namespace optscale
