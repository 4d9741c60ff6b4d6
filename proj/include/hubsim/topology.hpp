#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hubsim/coordinate.hpp"
#include "hubsim/ops.hpp"

namespace hubsim {

// Everything the attention masks and cost figures derive from.
struct TopologySpec {
  std::size_t P = 1;  // agents
  std::size_t T = 1;  // latent frames
  std::size_t H = 1;
  std::size_t W = 1;
  std::size_t K = 0;  // hub tokens per frame
  std::size_t n = 1;  // frames per temporal block
  std::optional<std::size_t> window;  // local window in latent frames

  std::size_t L() const { return H * W; }
  std::size_t blocks() const { return T / n; }
  std::size_t agent_tokens() const { return P * T * L(); }
  std::size_t hub_tokens() const { return T * K; }
  std::size_t sequence_length() const { return agent_tokens() + hub_tokens(); }
  // Blocks a query can see, counting its own; every block when unwindowed.
  std::size_t window_blocks() const;
  GridExtent extent() const { return {P, T, H, W}; }

  void validate() const;
  std::string describe() const;
};

// Token layout: agent tokens ordered (agent, frame, h, w), then hub tokens
// ordered (frame, slot).
std::vector<TokenCoordinate> build_layout(const TopologySpec& spec);
std::size_t token_index(const TopologySpec& spec, const TokenCoordinate& coord);
TokenCoordinate token_coordinate(const TopologySpec& spec, std::size_t index);

// Square mask over the token sequence; (i, j) true means query i may attend
// key j.
using MaskMatrix = BoolMatrix;

MaskMatrix all_true_mask(const TopologySpec& spec);
// 1[rho(i) = rho(j) or rho(i) = hub or rho(j) = hub]
MaskMatrix hub_mask(const TopologySpec& spec);
// 1[b(j) <= b(i)] * hub_mask
MaskMatrix causal_hub_mask(const TopologySpec& spec);
// b(j) <= b(i) and b(i) - b(j) < window / n. Throws when window < n.
MaskMatrix local_window_mask(const TopologySpec& spec);
// Block-causal mask with no topology restriction, for the dense baseline.
MaskMatrix block_causal_mask(const TopologySpec& spec);

// Elementwise conjunction. Throws EmptyRowError naming the query coordinate
// when a row ends up with no admissible key.
MaskMatrix compose_masks(const std::vector<MaskMatrix>& masks,
                         const TopologySpec* spec_for_errors = nullptr);

// True entries of hub_mask: P (TL)^2 + 2 P TL TK + (TK)^2.
std::uint64_t hub_mask_true_count(const TopologySpec& spec);
// causal_hub_mask: B (B + 1) / 2 block pairs, each P (nL)^2 + 2 P nL nK + (nK)^2.
std::uint64_t causal_hub_mask_true_count(const TopologySpec& spec);

// 0/1 text grid, one row per line.
std::string mask_to_text(const MaskMatrix& mask);
ByteTensor mask_to_tensor(const MaskMatrix& mask);

std::string describe_coordinate(const TokenCoordinate& c);

}  // namespace hubsim
