#include "vrgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace vrgcn {

void Graph::validate() const {
  require(adjacency.rows() == num_nodes && adjacency.cols() == num_nodes,
          "Graph: adjacency must be num_nodes x num_nodes");
  require(features.rows() == num_nodes, "Graph: features must have one row per node");
  for (std::size_t u = 0; u < num_nodes; ++u) {
    auto cols = adjacency.row_cols(u);
    auto vals = adjacency.row_values(u);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      require(cols[k] != u, "Graph: adjacency must not store diagonal entries");
      require(vals[k] >= 0.0, "Graph: negative edge weight");
      require(adjacency.at(cols[k], u) == vals[k], "Graph: adjacency is not symmetric");
    }
  }
  if (labels.multilabel) {
    require(labels.multi_hot.rows() == num_nodes, "Graph: multi-hot labels need one row per node");
  } else {
    require(labels.classes.size() == num_nodes, "Graph: labels need one entry per node");
    for (int c : labels.classes)
      require(c < static_cast<int>(labels.num_classes), "Graph: class id out of range");
  }
  std::vector<int> owner(num_nodes, -1);
  auto mark = [&](const std::vector<NodeId>& split, int id) {
    for (NodeId v : split) {
      require(v < num_nodes, "Graph: split node id out of range");
      require(owner[v] == -1 || owner[v] == id, "Graph: splits must be disjoint");
      owner[v] = id;
    }
  };
  mark(splits.train, 0);
  mark(splits.validation, 1);
  mark(splits.test, 2);
}

SparseMatrix adjacency_from_edges(std::size_t num_nodes, std::span<const Edge> edges) {
  std::map<std::pair<NodeId, NodeId>, double> weights;
  for (const Edge& e : edges) {
    require(e.u < num_nodes && e.v < num_nodes, "edge list: node id out of range");
    require(e.weight >= 0.0 && std::isfinite(e.weight), "edge list: negative or non-finite weight");
    if (e.u == e.v) continue;
    weights[{e.u, e.v}] = e.weight;
    weights[{e.v, e.u}] = e.weight;
  }
  std::vector<Triplet> t;
  t.reserve(weights.size());
  for (const auto& [key, w] : weights) t.push_back({key.first, key.second, w});
  return SparseMatrix::from_triplets(num_nodes, num_nodes, std::move(t));
}

PropagationMatrix::PropagationMatrix(SparseMatrix matrix, std::vector<std::size_t> degrees)
    : matrix_(std::move(matrix)), degrees_(std::move(degrees)) {
  require(matrix_.rows() == matrix_.cols(), "PropagationMatrix: must be square");
  require(degrees_.size() == matrix_.rows(), "PropagationMatrix: one degree per node");
}

PropagationMatrix build_propagation(const SparseMatrix& adjacency) {
  const std::size_t n = adjacency.rows();
  require(adjacency.cols() == n, "build_propagation: adjacency must be square");
  std::vector<Triplet> t;
  t.reserve(adjacency.nnz() + n);
  std::vector<double> row_sum(n, 1.0);
  for (std::size_t u = 0; u < n; ++u) {
    t.push_back({static_cast<NodeId>(u), static_cast<NodeId>(u), 1.0});
    auto cols = adjacency.row_cols(u);
    auto vals = adjacency.row_values(u);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      require(vals[k] >= 0.0, "build_propagation: negative edge weight");
      t.push_back({static_cast<NodeId>(u), cols[k], vals[k]});
      row_sum[u] += vals[k];
    }
  }
  // from_triplets merges a stored diagonal with the added self-loop.
  SparseMatrix a_tilde = SparseMatrix::from_triplets(n, n, std::move(t));
  std::vector<double> inv_sqrt(n);
  for (std::size_t u = 0; u < n; ++u) inv_sqrt[u] = 1.0 / std::sqrt(row_sum[u]);
  SparseMatrix p = a_tilde.map_values(
      [&](std::size_t r, NodeId c, double v) { return v * inv_sqrt[r] * inv_sqrt[c]; });
  std::vector<std::size_t> degrees(n);
  for (std::size_t u = 0; u < n; ++u) degrees[u] = p.row_nnz(u);
  return PropagationMatrix(std::move(p), std::move(degrees));
}

std::vector<double> row_sum_check(const PropagationMatrix& p) {
  const SparseMatrix& m = p.matrix();
  std::vector<double> sums(m.rows(), 0.0);
  for (std::size_t u = 0; u < m.rows(); ++u)
    for (double v : m.row_values(u)) sums[u] += v;
  return sums;
}

}  // namespace vrgcn
