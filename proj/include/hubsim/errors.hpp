#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hubsim {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A query row with no admissible key. Carries the row so callers can map it
// back to a token coordinate.
struct EmptyRowError : std::invalid_argument {
  EmptyRowError(std::size_t row, const std::string& what)
      : std::invalid_argument(what), query(row) {}
  std::size_t query;
};

}  // namespace hubsim
