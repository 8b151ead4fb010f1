#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vrgcn/dense.hpp"
#include "vrgcn/sparse.hpp"
#include "vrgcn/types.hpp"

namespace vrgcn {

/// Node labels: one class per node, or a multi-hot row per node.
struct Labels {
  std::size_t num_classes = 0;
  bool multilabel = false;
  std::vector<int> classes;  // single-label; -1 marks an unlabeled node
  Matrix multi_hot;          // multi-label; [num_nodes x num_classes]
};

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> validation;
  std::vector<NodeId> test;
};

/// Undirected graph with node features, labels and train/validation/test splits.
struct Graph {
  std::size_t num_nodes = 0;
  SparseMatrix adjacency;  // symmetric, non-negative, no diagonal
  Matrix features;         // [num_nodes x K]
  Labels labels;
  Splits splits;

  /// Throws InputError when any structural invariant is violated.
  void validate() const;
};

struct Edge {
  NodeId u;
  NodeId v;
  double weight = 1.0;
};

/// Symmetric adjacency from an undirected edge list. Self-loops are dropped;
/// repeated edges keep the last weight given. Negative weights are rejected.
SparseMatrix adjacency_from_edges(std::size_t num_nodes, std::span<const Edge> edges);

/// P = D^-1/2 (A + I) D^-1/2 together with n(u), the number of stored entries in
/// row u of P (the node itself included).
class PropagationMatrix {
 public:
  PropagationMatrix(SparseMatrix matrix, std::vector<std::size_t> degrees);

  const SparseMatrix& matrix() const noexcept { return matrix_; }
  std::size_t num_nodes() const noexcept { return matrix_.rows(); }
  std::size_t degree(NodeId u) const { return degrees_.at(u); }
  std::span<const std::size_t> degrees() const noexcept { return degrees_; }

 private:
  SparseMatrix matrix_;
  std::vector<std::size_t> degrees_;
};

PropagationMatrix build_propagation(const SparseMatrix& adjacency);
inline PropagationMatrix build_propagation(const Graph& graph) {
  return build_propagation(graph.adjacency);
}

/// Row sums of P. Diagnostic only: rows of P do not sum to one in general.
std::vector<double> row_sum_check(const PropagationMatrix& p);

}  // namespace vrgcn
