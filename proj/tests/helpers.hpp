#pragma once

#include <random>
#include <vector>

#include "vrgcn/graph.hpp"
#include "vrgcn/random.hpp"

namespace vrgcn::testing {

inline Matrix uniform_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                             double lo = -1.0, double hi = 1.0) {
  Rng rng = make_rng(seed, 99);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(rng);
  return m;
}

inline SparseMatrix path_adjacency(std::size_t n) {
  std::vector<Edge> edges;
  for (NodeId i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  return adjacency_from_edges(n, edges);
}

inline SparseMatrix ring_adjacency(std::size_t n) {
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i) edges.push_back({i, static_cast<NodeId>((i + 1) % n)});
  return adjacency_from_edges(n, edges);
}

}  // namespace vrgcn::testing
