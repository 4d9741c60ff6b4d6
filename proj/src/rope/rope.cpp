#include "hubsim/rope.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hubsim/errors.hpp"

namespace hubsim {

namespace {

void check_band(std::size_t size, const char* name) {
  if (size % 2 != 0) {
    throw std::invalid_argument(std::string("rotary band ") + name + " must be even, got " +
                                std::to_string(size));
  }
}

}  // namespace

std::vector<double> rope_frequencies(std::size_t band, double base) {
  std::vector<double> f(band / 2);
  for (std::size_t k = 0; k < f.size(); ++k) {
    f[k] = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(band));
  }
  return f;
}

RopeLayout RopeLayout::standard(RopeBands bands, double base) {
  check_band(bands.t, "t");
  check_band(bands.p, "p");
  check_band(bands.h, "h");
  check_band(bands.w, "w");
  if (!(base > 1.0)) throw std::invalid_argument("rotary frequency base must exceed 1");
  RopeLayout layout;
  layout.d_head = bands.total();
  layout.bands = bands;
  layout.base = base;
  layout.temporal_freqs = rope_frequencies(bands.t, base);
  layout.height_freqs = rope_frequencies(bands.h, base);
  layout.width_freqs = rope_frequencies(bands.w, base);
  return layout;
}

RopeLayout reallocate_temporal_band(const RopeLayout& layout_3d, std::size_t d_p) {
  check_band(d_p, "p");
  if (d_p == 0) return layout_3d;
  if (d_p >= layout_3d.bands.t) {
    throw std::invalid_argument("agent band of " + std::to_string(d_p) +
                                " dims cannot be carved from a temporal band of " +
                                std::to_string(layout_3d.bands.t));
  }
  RopeLayout out = layout_3d;
  out.bands.t -= d_p;
  out.bands.p += d_p;
  // Frequencies are stored high to low; the tail is the low-frequency end.
  out.temporal_freqs.resize(out.bands.t / 2);
  return out;
}

std::vector<double> rope_angles(const RopeLayout& layout, const SimplexPool& pool,
                                const VertexAssignment& assignment, const TokenCoordinate& coord,
                                const GridExtent& extent) {
  if (coord.t >= extent.T) {
    throw std::out_of_range("frame " + std::to_string(coord.t) + " outside T=" +
                            std::to_string(extent.T));
  }
  std::vector<double> angles(layout.pairs(), 0.0);
  for (std::size_t k = 0; k < layout.temporal_freqs.size(); ++k) {
    angles[k] = static_cast<double>(coord.t) * layout.temporal_freqs[k];
  }
  if (coord.is_hub()) return angles;

  if (coord.identity < 0 || static_cast<std::size_t>(coord.identity) >= extent.P ||
      static_cast<std::size_t>(coord.identity) >= assignment.agents()) {
    throw std::out_of_range("agent " + std::to_string(coord.identity) + " outside P=" +
                            std::to_string(extent.P));
  }
  if (coord.h >= extent.H || coord.w >= extent.W) {
    throw std::out_of_range("spatial index (" + std::to_string(coord.h) + ", " +
                            std::to_string(coord.w) + ") outside " + std::to_string(extent.H) +
                            "x" + std::to_string(extent.W));
  }
  const std::size_t agent_slots = layout.bands.p / 2;
  if (agent_slots > 0) {
    if (pool.d_half > agent_slots) {
      throw std::invalid_argument("simplex pool d_half=" + std::to_string(pool.d_half) +
                                  " exceeds agent band slots " + std::to_string(agent_slots));
    }
    auto s = pool.vertex(assignment.vertex.at(static_cast<std::size_t>(coord.identity)));
    for (std::size_t r = 0; r < pool.d_half; ++r) {
      angles[layout.agent_offset() + r] = pool.alpha * s[r];
    }
  }
  for (std::size_t k = 0; k < layout.height_freqs.size(); ++k) {
    angles[layout.height_offset() + k] = static_cast<double>(coord.h) * layout.height_freqs[k];
  }
  for (std::size_t k = 0; k < layout.width_freqs.size(); ++k) {
    angles[layout.width_offset() + k] = static_cast<double>(coord.w) * layout.width_freqs[k];
  }
  return angles;
}

Tensor64 rope_table(const RopeLayout& layout, const SimplexPool& pool,
                    const VertexAssignment& assignment, std::span<const TokenCoordinate> coords,
                    const GridExtent& extent) {
  Tensor64 table({coords.size(), layout.pairs()}, 0.0);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto a = rope_angles(layout, pool, assignment, coords[i], extent);
    std::copy(a.begin(), a.end(), table.row(i).begin());
  }
  return table;
}

template <typename T>
void apply_rotary_inplace(std::span<T> x, std::span<const double> angles, int sign) {
  const std::size_t pairs = std::min(angles.size(), x.size() / 2);
  for (std::size_t r = 0; r < pairs; ++r) {
    const double a = angles[r];
    if (a == 0.0) continue;
    const T c = static_cast<T>(std::cos(a));
    const T s = static_cast<T>(sign * std::sin(a));
    const T x0 = x[2 * r];
    const T x1 = x[2 * r + 1];
    x[2 * r] = c * x0 - s * x1;
    x[2 * r + 1] = s * x0 + c * x1;
  }
}

template <typename T>
BasicTensor<T> apply_rotary(const BasicTensor<T>& x, const Tensor64& angles) {
  if (x.rank() == 0) throw ShapeError("apply_rotary needs at least one axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  if (angles.rank() == 1) {
    if (angles.size() * 2 != d) {
      throw ShapeError("apply_rotary: " + std::to_string(angles.size()) +
                       " angles for trailing extent " + std::to_string(d));
    }
  } else if (angles.rank() == 2) {
    if (angles.extent(0) != rows || angles.extent(1) * 2 != d) {
      throw ShapeError("apply_rotary: angle table " + shape_to_string(angles.shape()) +
                       " for tensor " + shape_to_string(x.shape()));
    }
  } else {
    throw ShapeError("apply_rotary: angles must be rank 1 or 2");
  }
  BasicTensor<T> out = x;
  for (std::size_t i = 0; i < rows; ++i) {
    auto a = angles.rank() == 1 ? angles.data() : angles.row(i);
    apply_rotary_inplace<T>(out.data().subspan(i * d, d), a);
  }
  return out;
}

template void apply_rotary_inplace<float>(std::span<float>, std::span<const double>, int);
template void apply_rotary_inplace<double>(std::span<double>, std::span<const double>, int);
template BasicTensor<float> apply_rotary(const BasicTensor<float>&, const Tensor64&);
template BasicTensor<double> apply_rotary(const BasicTensor<double>&, const Tensor64&);

}  // namespace hubsim
