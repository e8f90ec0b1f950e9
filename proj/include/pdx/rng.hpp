#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace pdx {

/// Deterministic random stream identified by (seed, stream). Streams with
/// different ids are statistically independent; identical pairs replay
/// bit-identical sequences.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Child stream derived from this stream's identity (not its position).
  SeededRng split(std::uint64_t child) const;

  std::uint64_t next_u64() { return engine_(); }
  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);

  /// Uniformly random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to derive well-mixed seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace pdx
