#ifndef SEVRATE_RNG_HPP
#define SEVRATE_RNG_HPP

// Seed derivation and small sampling helpers.  Experiment cells draw from
// independent substreams keyed by (seed, region, replicate, purpose) so that
// cell order never affects results and reruns are byte-identical.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sevrate/core.hpp"

namespace sevrate {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t t : tags) h = mix64(h ^ t);
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

inline std::int64_t binomial_draw(Rng& rng, std::int64_t n, double p) {
  if (n <= 0 || p <= 0) return 0;
  if (p >= 1) return n;
  std::binomial_distribution<std::int64_t> dist(n, p);
  return dist(rng);
}

// Multinomial(n; probs) by sequential conditional binomials.
inline std::vector<std::int64_t> multinomial_draw(Rng& rng, std::int64_t n,
                                                  const std::vector<double>& probs) {
  detail::require<ParameterError>(!probs.empty(), "multinomial needs categories");
  double rest = 0;
  for (double q : probs) {
    detail::require<ParameterError>(q >= 0, "multinomial probability < 0");
    rest += q;
  }
  std::vector<std::int64_t> out(probs.size(), 0);
  std::int64_t left = n;
  for (std::size_t i = 0; i + 1 < probs.size() && left > 0; ++i) {
    if (rest <= 0) break;
    const double q = std::min(probs[i] / rest, 1.0);
    out[i] = binomial_draw(rng, left, q);
    left -= out[i];
    rest -= probs[i];
  }
  out.back() += left;
  return out;
}

inline double beta_draw(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return (x + y > 0) ? x / (x + y) : 0.5;
}

}  // namespace sevrate

#endif  // SEVRATE_RNG_HPP
