#pragma once

#include <cstdint>
#include <string_view>

namespace rflab {

// Deterministic splitmix64 generator. Independent streams are derived from a
// (seed, purpose tag) pair so dataset generation, parameter init and token
// sampling stay reproducible in isolation from each other.
struct Rng {
  static Rng stream(std::uint64_t seed, std::string_view tag);

  std::uint64_t next_u64();
  double uniform();                 // [0, 1), 53-bit resolution
  double normal();                  // standard normal, Box-Muller
  std::uint64_t below(std::uint64_t n);  // unbiased integer in [0, n)

 private:
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace rflab
