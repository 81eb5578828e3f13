#include "marionette/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace mnet {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : key_(splitmix64(seed ^ 0x6D6E6574ULL)) {}

std::uint64_t Rng::next_u64() {
  return splitmix64(key_ ^ splitmix64(counter_++));
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller; one pair per call keeps the stream position predictable.
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int n) {
  if (n <= 1) return 0;
  return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

Rng Rng::split(std::uint64_t tag) const {
  return Rng(splitmix64(key_ + 0x632BE59BD9B4E019ULL * (tag + 1)), 0);
}

}  // namespace mnet
