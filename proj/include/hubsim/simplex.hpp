#pragma once

#include <cstddef>
#include <vector>

#include "hubsim/rng.hpp"
#include "hubsim/tensor.hpp"

namespace hubsim {

// How the centered one-hot vectors e_v - 1/V are carried into the
// d_half-dimensional agent-angle space.
enum class SimplexEmbedding {
  // Orthonormal Helmert rows, zero-padded up to d_half. Needs d_half >= V-1.
  helmert,
  // The centered one-hot coordinates themselves, zero-padded. Needs
  // d_half >= V. Every pairwise difference then has the same non-zero
  // pattern up to permutation, so complex rotary distances coincide exactly.
  centered_one_hot,
  // centered_one_hot when d_half >= V, helmert otherwise.
  automatic,
};

// Helmert basis of the zero-mean subspace of R^V, returned as a
// max(V-1, rows) x V matrix: row k-1 is (1,...,1,-k,0,...,0)/sqrt(k(k+1))
// for k = 1..V-1, followed by zero rows.
Tensor64 build_isometry(std::size_t V, std::size_t rows = 0);

struct SimplexPool {
  std::size_t V = 0;
  std::size_t d_half = 0;
  double alpha = 1.0;
  SimplexEmbedding embedding = SimplexEmbedding::helmert;
  Tensor64 vertices;  // V x d_half
  Tensor64 isometry;  // d_half x V; maps centered one-hots to vertices / sqrt(V/(V-1))

  std::span<const double> vertex(std::size_t v) const { return vertices.row(v); }
};

SimplexPool build_simplex_pool(std::size_t V, std::size_t d_half, double alpha,
                               SimplexEmbedding embedding = SimplexEmbedding::automatic);

// Injective map agent -> vertex; vertex[p] is the pool row used by agent p.
struct VertexAssignment {
  std::vector<std::size_t> vertex;

  std::size_t agents() const { return vertex.size(); }
  bool operator==(const VertexAssignment&) const = default;
};

// Uniform over injective maps (partial Fisher-Yates).
VertexAssignment sample_assignment(std::size_t P, std::size_t V, RngStream& rng);
// Agents 0..P-1 on vertices 0..P-1.
VertexAssignment identity_assignment(std::size_t P);
void validate_assignment(const VertexAssignment& a, std::size_t V);

// theta_p = alpha * s_{pi(p)}; P rows of length d_half.
Tensor64 agent_angles(const SimplexPool& pool, const VertexAssignment& assignment);

// sum_r 2 (1 - cos(theta_p^r - theta_q^r)), the squared distance between
// exp(i theta_p) and exp(i theta_q).
double complex_pair_distance(const SimplexPool& pool, const VertexAssignment& assignment,
                             std::size_t p, std::size_t q);

}  // namespace hubsim
