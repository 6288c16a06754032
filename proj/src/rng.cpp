#include "vtr/rng.hpp"

#include <cmath>
#include <numbers>

#include "vtr/errors.hpp"

namespace vtr {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t k = counter_++;
  return mix64(mix64(seed_) + (k + 1) * 0x9e3779b97f4a7c15ULL);
}

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ContractError("uniform_int: empty range");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

std::int64_t SeededRng::uniform_range(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ContractError("uniform_range: hi < lo");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(uniform_int(span));
}

double SeededRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::truncated_normal(double std) {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= 2.0) return z * std;
  }
}

SeededRng SeededRng::fork(std::uint64_t stream) const {
  return SeededRng(mix64(seed_ ^ mix64(stream + 0x632be59bd9b4e019ULL)), 0);
}

}  // namespace vtr
