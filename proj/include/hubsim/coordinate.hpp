#pragma once

#include <cstddef>
#include <cstdint>

namespace hubsim {

inline constexpr std::int32_t kHub = -1;

// Position of one token in the multi-agent sequence. Hub tokens carry only
// the frame and their slot; their h/w are unused.
struct TokenCoordinate {
  std::int32_t identity = 0;  // agent index, or kHub
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t hub_slot = 0;
  std::size_t block = 0;

  bool is_hub() const { return identity == kHub; }
  bool operator==(const TokenCoordinate&) const = default;
};

struct GridExtent {
  std::size_t P = 1;
  std::size_t T = 1;
  std::size_t H = 1;
  std::size_t W = 1;
};

}  // namespace hubsim
