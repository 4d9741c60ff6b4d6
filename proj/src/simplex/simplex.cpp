#include "hubsim/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hubsim {

Tensor64 build_isometry(std::size_t V, std::size_t rows) {
  if (V < 2) {
    throw std::invalid_argument("simplex pool needs V >= 2 (got " + std::to_string(V) +
                                "); 1/(V-1) is undefined for V = 1");
  }
  rows = std::max(rows, V - 1);
  Tensor64 q({rows, V}, 0.0);
  for (std::size_t k = 1; k < V; ++k) {
    const double norm = std::sqrt(static_cast<double>(k * (k + 1)));
    for (std::size_t j = 0; j < k; ++j) q.at({k - 1, j}) = 1.0 / norm;
    q.at({k - 1, k}) = -static_cast<double>(k) / norm;
  }
  return q;
}

SimplexPool build_simplex_pool(std::size_t V, std::size_t d_half, double alpha,
                               SimplexEmbedding embedding) {
  if (V < 2) {
    throw std::invalid_argument("simplex pool needs V >= 2 (got " + std::to_string(V) + ")");
  }
  if (V > d_half + 1) {
    throw std::invalid_argument("simplex pool V=" + std::to_string(V) +
                                " does not fit an agent band of d_half=" + std::to_string(d_half) +
                                " (need V <= d_half + 1)");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("simplex scale alpha must be finite and non-negative");
  }
  if (embedding == SimplexEmbedding::automatic) {
    embedding = d_half >= V ? SimplexEmbedding::centered_one_hot : SimplexEmbedding::helmert;
  }
  if (embedding == SimplexEmbedding::centered_one_hot && d_half < V) {
    throw std::invalid_argument("centered one-hot embedding needs d_half >= V");
  }

  SimplexPool pool;
  pool.V = V;
  pool.d_half = d_half;
  pool.alpha = alpha;
  pool.embedding = embedding;
  if (embedding == SimplexEmbedding::helmert) {
    pool.isometry = build_isometry(V, d_half);
  } else {
    pool.isometry = Tensor64({d_half, V}, 0.0);
    for (std::size_t v = 0; v < V; ++v) pool.isometry.at({v, v}) = 1.0;
  }

  const double scale = std::sqrt(static_cast<double>(V) / static_cast<double>(V - 1));
  const double inv_v = 1.0 / static_cast<double>(V);
  pool.vertices = Tensor64({V, d_half}, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t r = 0; r < d_half; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < V; ++j) {
        const double centered = (j == v ? 1.0 : 0.0) - inv_v;
        acc += pool.isometry.at({r, j}) * centered;
      }
      pool.vertices.at({v, r}) = scale * acc;
    }
  }
  return pool;
}

void validate_assignment(const VertexAssignment& a, std::size_t V) {
  std::vector<bool> used(V, false);
  for (std::size_t p = 0; p < a.vertex.size(); ++p) {
    const std::size_t v = a.vertex[p];
    if (v >= V) {
      throw std::invalid_argument("agent " + std::to_string(p) + " assigned to vertex " +
                                  std::to_string(v) + " outside pool of size " + std::to_string(V));
    }
    if (used[v]) {
      throw std::invalid_argument("vertex " + std::to_string(v) +
                                  " assigned to more than one agent");
    }
    used[v] = true;
  }
}

VertexAssignment sample_assignment(std::size_t P, std::size_t V, RngStream& rng) {
  if (P > V) {
    throw std::invalid_argument("cannot place " + std::to_string(P) + " agents on a pool of " +
                                std::to_string(V) + " vertices; enlarge the simplex pool");
  }
  std::vector<std::size_t> perm(V);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < P; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(V - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(P);
  return VertexAssignment{std::move(perm)};
}

VertexAssignment identity_assignment(std::size_t P) {
  VertexAssignment a;
  a.vertex.resize(P);
  std::iota(a.vertex.begin(), a.vertex.end(), std::size_t{0});
  return a;
}

Tensor64 agent_angles(const SimplexPool& pool, const VertexAssignment& assignment) {
  validate_assignment(assignment, pool.V);
  Tensor64 theta({assignment.agents(), pool.d_half}, 0.0);
  for (std::size_t p = 0; p < assignment.agents(); ++p) {
    auto s = pool.vertex(assignment.vertex[p]);
    for (std::size_t r = 0; r < pool.d_half; ++r) theta.at({p, r}) = pool.alpha * s[r];
  }
  return theta;
}

double complex_pair_distance(const SimplexPool& pool, const VertexAssignment& assignment,
                             std::size_t p, std::size_t q) {
  if (p == q) throw std::invalid_argument("complex_pair_distance needs two distinct agents");
  if (p >= assignment.agents() || q >= assignment.agents()) {
    throw std::out_of_range("agent index outside assignment");
  }
  const Tensor64 theta = agent_angles(pool, assignment);
  double d = 0.0;
  for (std::size_t r = 0; r < pool.d_half; ++r) {
    d += 2.0 * (1.0 - std::cos(theta.at({p, r}) - theta.at({q, r})));
  }
  return d;
}

}  // namespace hubsim
