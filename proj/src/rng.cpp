#include "pdx/rng.hpp"

#include <cmath>
#include <numeric>

#include "pdx/errors.hpp"

namespace pdx {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x5851f42d4c957f2dULL))) {}

SeededRng SeededRng::split(std::uint64_t child) const {
  return SeededRng(seed_, mix_seed(stream_ * 0x100000001b3ULL + child + 1));
}

// The distributions below are written out rather than using <random>'s
// distribution objects, whose output sequences differ across standard
// library implementations.
double SeededRng::uniform(double lo, double hi) {
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double SeededRng::normal(double mean, double stddev) {
  // Box-Muller; one variate per call keeps the stream stateless.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::int64_t SeededRng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ContractError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return lo + static_cast<std::int64_t>(x % span);
}

bool SeededRng::bernoulli(double p) { return uniform() < p; }

std::vector<std::size_t> SeededRng::permutation(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  shuffle(v);
  return v;
}

}  // namespace pdx
