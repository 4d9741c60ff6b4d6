#include "hubsim/topology.hpp"

#include <sstream>
#include <stdexcept>

#include "hubsim/errors.hpp"

namespace hubsim {

std::size_t TopologySpec::window_blocks() const {
  if (!window) return blocks();
  return *window / n;
}

void TopologySpec::validate() const {
  if (P < 1) throw std::invalid_argument("topology: P must be >= 1");
  if (T < 1 || n < 1) throw std::invalid_argument("topology: T and n must be >= 1");
  if (H * W < 1) throw std::invalid_argument("topology: L = H*W must be >= 1");
  if (T % n != 0) {
    throw std::invalid_argument("topology: T=" + std::to_string(T) +
                                " is not divisible by block size n=" + std::to_string(n));
  }
  if (window && *window < n) {
    throw std::invalid_argument("topology: window " + std::to_string(*window) +
                                " is smaller than the block size " + std::to_string(n) +
                                "; a block could not see itself");
  }
}

std::string TopologySpec::describe() const {
  std::ostringstream os;
  os << "P=" << P << " T=" << T << " H=" << H << " W=" << W << " K=" << K << " n=" << n;
  if (window) os << " window=" << *window;
  return os.str();
}

std::vector<TokenCoordinate> build_layout(const TopologySpec& spec) {
  spec.validate();
  std::vector<TokenCoordinate> out;
  out.reserve(spec.sequence_length());
  for (std::size_t p = 0; p < spec.P; ++p) {
    for (std::size_t t = 0; t < spec.T; ++t) {
      for (std::size_t h = 0; h < spec.H; ++h) {
        for (std::size_t w = 0; w < spec.W; ++w) {
          out.push_back({static_cast<std::int32_t>(p), t, h, w, 0, t / spec.n});
        }
      }
    }
  }
  for (std::size_t t = 0; t < spec.T; ++t) {
    for (std::size_t k = 0; k < spec.K; ++k) {
      out.push_back({kHub, t, 0, 0, k, t / spec.n});
    }
  }
  return out;
}

std::size_t token_index(const TopologySpec& spec, const TokenCoordinate& c) {
  if (c.t >= spec.T) throw std::out_of_range("frame outside topology");
  if (c.is_hub()) {
    if (c.hub_slot >= spec.K) throw std::out_of_range("hub slot outside topology");
    return spec.agent_tokens() + c.t * spec.K + c.hub_slot;
  }
  if (c.identity < 0 || static_cast<std::size_t>(c.identity) >= spec.P || c.h >= spec.H ||
      c.w >= spec.W) {
    throw std::out_of_range("agent coordinate outside topology");
  }
  const auto p = static_cast<std::size_t>(c.identity);
  return ((p * spec.T + c.t) * spec.H + c.h) * spec.W + c.w;
}

TokenCoordinate token_coordinate(const TopologySpec& spec, std::size_t index) {
  if (index >= spec.sequence_length()) throw std::out_of_range("token index outside sequence");
  TokenCoordinate c;
  if (index >= spec.agent_tokens()) {
    const std::size_t r = index - spec.agent_tokens();
    c.identity = kHub;
    c.t = r / spec.K;
    c.hub_slot = r % spec.K;
  } else {
    std::size_t r = index;
    c.w = r % spec.W;
    r /= spec.W;
    c.h = r % spec.H;
    r /= spec.H;
    c.t = r % spec.T;
    c.identity = static_cast<std::int32_t>(r / spec.T);
  }
  c.block = c.t / spec.n;
  return c;
}

namespace {

template <typename Pred>
MaskMatrix build_mask(const TopologySpec& spec, Pred pred) {
  const auto layout = build_layout(spec);
  const std::size_t s = layout.size();
  MaskMatrix m(s, s);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) m.set(i, j, pred(layout[i], layout[j]));
  }
  return m;
}

bool hub_rule(const TokenCoordinate& a, const TokenCoordinate& b) {
  return a.identity == b.identity || a.is_hub() || b.is_hub();
}

}  // namespace

MaskMatrix all_true_mask(const TopologySpec& spec) {
  spec.validate();
  return MaskMatrix(spec.sequence_length(), spec.sequence_length(), true);
}

MaskMatrix hub_mask(const TopologySpec& spec) { return build_mask(spec, hub_rule); }

MaskMatrix causal_hub_mask(const TopologySpec& spec) {
  return build_mask(spec, [](const TokenCoordinate& a, const TokenCoordinate& b) {
    return b.block <= a.block && hub_rule(a, b);
  });
}

MaskMatrix local_window_mask(const TopologySpec& spec) {
  if (!spec.window) {
    throw std::invalid_argument("local_window_mask: topology has no window");
  }
  spec.validate();
  const std::size_t wb = spec.window_blocks();
  return build_mask(spec, [wb](const TokenCoordinate& a, const TokenCoordinate& b) {
    return b.block <= a.block && a.block - b.block < wb;
  });
}

MaskMatrix block_causal_mask(const TopologySpec& spec) {
  return build_mask(spec, [](const TokenCoordinate& a, const TokenCoordinate& b) {
    return b.block <= a.block;
  });
}

MaskMatrix compose_masks(const std::vector<MaskMatrix>& masks, const TopologySpec* spec) {
  if (masks.empty()) throw std::invalid_argument("compose_masks: nothing to compose");
  MaskMatrix out = masks.front();
  for (std::size_t k = 1; k < masks.size(); ++k) {
    const auto& m = masks[k];
    if (m.rows() != out.rows() || m.cols() != out.cols()) {
      throw ShapeError("compose_masks: dimension mismatch " + std::to_string(out.rows()) + "x" +
                       std::to_string(out.cols()) + " vs " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()));
    }
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) out.set(i, j, out(i, j) && m(i, j));
    }
  }
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (out.row_count(i) == 0) {
      std::string where = "query " + std::to_string(i);
      if (spec) where += " " + describe_coordinate(token_coordinate(*spec, i));
      throw EmptyRowError(i, "compose_masks: " + where + " has no admissible key");
    }
  }
  return out;
}

std::string mask_to_text(const MaskMatrix& mask) {
  std::string s;
  s.reserve(mask.rows() * (mask.cols() + 1));
  for (std::size_t i = 0; i < mask.rows(); ++i) {
    for (std::size_t j = 0; j < mask.cols(); ++j) s.push_back(mask(i, j) ? '1' : '0');
    s.push_back('\n');
  }
  return s;
}

ByteTensor mask_to_tensor(const MaskMatrix& mask) {
  return ByteTensor({mask.rows(), mask.cols()}, mask.bits());
}

std::string describe_coordinate(const TokenCoordinate& c) {
  std::ostringstream os;
  if (c.is_hub()) {
    os << "(hub slot " << c.hub_slot << ", t=" << c.t << ", block " << c.block << ")";
  } else {
    os << "(agent " << c.identity << ", t=" << c.t << ", h=" << c.h << ", w=" << c.w << ", block "
       << c.block << ")";
  }
  return os.str();
}

std::uint64_t hub_mask_true_count(const TopologySpec& spec) {
  const std::uint64_t P = spec.P, a = spec.T * spec.L(), h = spec.T * spec.K;
  return P * a * a + 2 * P * a * h + h * h;
}

std::uint64_t causal_hub_mask_true_count(const TopologySpec& spec) {
  const std::uint64_t P = spec.P, B = spec.blocks();
  const std::uint64_t a = spec.n * spec.L(), h = spec.n * spec.K;
  return B * (B + 1) / 2 * (P * a * a + 2 * P * a * h + h * h);
}

}  // namespace hubsim
