#pragma once

#include <cstddef>
#include <cstdint>

#include "vrgcn/graph.hpp"

namespace vrgcn {

/// Stochastic block model with noisy community-centroid features.
struct SbmConfig {
  std::size_t nodes = 32;
  std::size_t communities = 2;
  double p_in = 0.3;
  double p_out = 0.02;
  std::size_t feature_dim = 8;
  double feature_noise = 1.5;  // std of the per-entry Gaussian noise
  double train_fraction = 0.5;
  double validation_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Nodes are assigned to communities round-robin; the label is the community.
/// Splits come from one random permutation: train, validation, then test.
Graph generate_sbm(const SbmConfig& cfg);

/// Erdős–Rényi graph with Gaussian features and uniform random labels, every
/// node in the training split.
Graph random_graph(std::size_t nodes, double edge_prob, std::size_t feature_dim,
                   std::size_t classes, std::uint64_t seed);

}  // namespace vrgcn
