#pragma once

#include <cstdint>
#include <string_view>

namespace egnmt {

// Derives an independent stream seed for a named consumer ("init", "shuffle", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view consumer);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

/// xoshiro256** with explicit sampling routines so sequences do not depend
/// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t s_[4];
};

}  // namespace egnmt
