#pragma once

#include <cstdint>
#include <string_view>

namespace fadv {

/// SplitMix64 with Box-Muller normals. The algorithm is part of the file
/// formats (seeds recorded there must reproduce the same draws), so it is
/// versioned by name and must not change behaviour.
class Rng {
 public:
  static constexpr std::string_view kName = "splitmix64-v1";

  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fadv
