#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace vtr {

// Counter-based generator: output k is splitmix64(seed, k). The full state is
// (seed, counter), so it serializes trivially and replays identically on any
// platform with IEEE doubles.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_range(std::int64_t lo, std::int64_t hi);
  double normal();
  // Normal(0, std) resampled until it lies within +/- 2 std.
  double truncated_normal(double std);

  // Independent stream keyed by `stream`; does not advance this generator.
  SeededRng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  friend bool operator==(const SeededRng&, const SeededRng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace vtr
