// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace mslb::num {

/// Counter-based generator: the n-th draw is splitmix64(seed + (n+1) * gamma).
/// The whole stream is a pure function of (seed, counter), so a generator can
/// be reconstructed from those two numbers alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream derived from this stream's seed and a tag.
  Rng fork(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mslb::num
