#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vrgcn/graph.hpp"
#include "vrgcn/random.hpp"

namespace vrgcn {

enum class SamplerMode {
  kFull,        // no sampling: each row of P̂ is the row of P
  kNeighbor,    // per-node neighbour sampling
  kImportance,  // layer-wise i.i.d. node sampling from q(v) ∝ Σ_u P_uv²
};

/// How the always-selected self entry of a sampled row is weighted.
enum class SelfLoopWeighting {
  /// Self entry P_uu·n(u)/D and each sampled neighbour P_uv·n(u)/D. The self
  /// entry is deterministic, so E[P̂] != P unless D = n(u).
  kScaled,
  /// Self entry P_uu and each of the D-1 sampled neighbours
  /// P_uv·(n(u)-1)/(D-1). Unbiased whenever D >= 2.
  kExact,
};

struct SamplerConfig {
  /// D^(l) for l = 0..L-1 (sample count S per layer in importance mode).
  std::vector<std::size_t> samples_per_layer;
  std::uint64_t seed = 0;
  SamplerMode mode = SamplerMode::kNeighbor;
  SelfLoopWeighting self_weighting = SelfLoopWeighting::kScaled;

  void validate() const;
};

/// One propagation step r^(l) -> r^(l+1) of a minibatch, in local indices:
/// row i of p_hat is nodes_out[i], column j is nodes_in[j].
struct PlanLayer {
  std::vector<NodeId> nodes_out;
  std::vector<NodeId> nodes_in;
  SparseMatrix p_hat;
};

/// Receptive fields and stochastic propagation matrices for one minibatch.
/// layers[l].nodes_out == layers[l+1].nodes_in and layers.back().nodes_out == minibatch.
struct ReceptiveFieldPlan {
  std::vector<PlanLayer> layers;
  std::vector<NodeId> minibatch;

  std::size_t depth() const noexcept { return layers.size(); }
  const std::vector<NodeId>& input_nodes() const { return layers.front().nodes_in; }
};

/// Builds r^(L) = minibatch down to r^(0) as in the receptive-field construction:
/// each output node keeps itself plus up to D^(l)-1 neighbours drawn uniformly
/// without replacement from its non-self neighbourhood. In nodes_in the
/// nodes_out come first, in order, followed by newly reached neighbours.
ReceptiveFieldPlan build_receptive_fields(const PropagationMatrix& p,
                                          std::span<const NodeId> minibatch,
                                          const SamplerConfig& cfg, Rng& rng);

/// Analytic E[row u of P̂] (length V) for layer `layer` of `cfg`.
std::vector<double> expectation_of_p_hat(const PropagationMatrix& p, NodeId u,
                                         const SamplerConfig& cfg, std::size_t layer = 0);

enum class CvdScaling {
  kDivSqrtDegree,    // P̄_uv = P̂_uv / sqrt(n(v))
  kSqrtSampleRatio,  // P̄_uv = sqrt(R_uv)·P_uv where P̂_uv = R_uv·P_uv
};

/// Per-layer P̄ with the same sparsity pattern as P̂.
std::vector<SparseMatrix> scale_for_cvd(const ReceptiveFieldPlan& plan, const PropagationMatrix& p,
                                        CvdScaling scaling = CvdScaling::kDivSqrtDegree);

/// q(v) ∝ Σ_u P_uv², normalised.
std::vector<double> importance_distribution(const PropagationMatrix& p);

/// Draws S nodes i.i.d. from q and returns the layer whose nodes_in are the
/// distinct draws (ascending). Entry (u, v) sums P_uv / (S·q(v)) over the draws of v.
/// Rows whose node has no sampled neighbour are empty.
PlanLayer sample_importance_layer(const PropagationMatrix& p, std::span<const NodeId> nodes_out,
                                  std::size_t samples, Rng& rng);
PlanLayer sample_importance_layer(const PropagationMatrix& p, std::span<const double> q,
                                  std::span<const NodeId> nodes_out, std::size_t samples,
                                  Rng& rng);

}  // namespace vrgcn
