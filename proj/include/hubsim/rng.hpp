#pragma once

#include <cstdint>
#include <string_view>

namespace hubsim {

// Counter-based generator: draw i is a pure function of (key, i), so the
// sequence is identical on every platform and sub-streams derived with
// split() never depend on how many draws the parent has made.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal (Box-Muller, one value per two uniforms).
  double normal();
  // Uniform integer on [0, bound); rejects to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t bound);

  // Independent child stream keyed by a label and/or index.
  RngStream split(std::string_view label) const;
  RngStream split(std::uint64_t index) const;

 private:
  RngStream(std::uint64_t seed, std::uint64_t key);

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace hubsim
