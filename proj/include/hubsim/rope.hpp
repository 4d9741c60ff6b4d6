#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hubsim/coordinate.hpp"
#include "hubsim/simplex.hpp"
#include "hubsim/tensor.hpp"

namespace hubsim {

struct RopeBands {
  std::size_t t = 0;
  std::size_t p = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t total() const { return t + p + h + w; }
  bool operator==(const RopeBands&) const = default;
};

// Rotary head layout over the (t, p, h, w) axes. The temporal, height and
// width bands carry explicit frequency lists so that a temporal band shrunk
// by reallocate_temporal_band keeps its original high frequencies. The agent
// band has no frequencies: its angles are simplex vertices scaled by alpha.
struct RopeLayout {
  std::size_t d_head = 0;
  RopeBands bands;
  double base = 10000.0;
  std::vector<double> temporal_freqs;  // d_t / 2
  std::vector<double> height_freqs;    // d_h / 2
  std::vector<double> width_freqs;     // d_w / 2

  // Standard geometric schedule base^(-2k/d) inside each band.
  static RopeLayout standard(RopeBands bands, double base = 10000.0);

  std::size_t pairs() const { return d_head / 2; }
  std::size_t agent_offset() const { return bands.t / 2; }
  std::size_t height_offset() const { return (bands.t + bands.p) / 2; }
  std::size_t width_offset() const { return (bands.t + bands.p + bands.h) / 2; }
};

std::vector<double> rope_frequencies(std::size_t band, double base);

// Moves the d_p lowest-frequency temporal dimensions into a new agent band.
RopeLayout reallocate_temporal_band(const RopeLayout& layout_3d, std::size_t d_p);

// Angles (length d_head/2) for one token. Hub tokens get the temporal angles
// of their frame and zeros everywhere else.
std::vector<double> rope_angles(const RopeLayout& layout, const SimplexPool& pool,
                                const VertexAssignment& assignment, const TokenCoordinate& coord,
                                const GridExtent& extent);

// Per-token angle table, one row per coordinate.
Tensor64 rope_table(const RopeLayout& layout, const SimplexPool& pool,
                    const VertexAssignment& assignment, std::span<const TokenCoordinate> coords,
                    const GridExtent& extent);

// Rotates consecutive pairs (x[2r], x[2r+1]) by angles[r]; pairs beyond the
// angle list are left alone. `sign` = -1 applies the inverse rotation.
template <typename T>
void apply_rotary_inplace(std::span<T> x, std::span<const double> angles, int sign = 1);

// x has trailing extent d_head; angles is either rank 1 (d_head/2, applied to
// every row) or rank 2 (rows x d_head/2).
template <typename T>
BasicTensor<T> apply_rotary(const BasicTensor<T>& x, const Tensor64& angles);

}  // namespace hubsim
