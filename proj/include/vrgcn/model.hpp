#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vrgcn/autodiff.hpp"
#include "vrgcn/graph.hpp"
#include "vrgcn/history.hpp"
#include "vrgcn/sampling.hpp"

namespace vrgcn {

/// Weights W^(0..L-1), W^(l) of shape [dims(l) x dims(l+1)]. ReLU follows every
/// layer except the last, whose output is the logits.
struct ModelParams {
  std::vector<Matrix> weights;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::vector<std::size_t> layer_dims() const;
  void validate() const;

  /// Glorot-uniform initialisation for the given layer widths (dims.size() >= 2).
  static ModelParams glorot(const std::vector<std::size_t>& dims, Rng& rng);
};

enum class Estimator { kExact, kNS, kIS, kCV, kCVD };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

struct EstimatorKind {
  Estimator kind = Estimator::kExact;
  /// Replace the first aggregation by the precomputed U0 = P·X.
  bool preprocess_first_layer = false;
  double dropout_rate = 0.0;
  CvdScaling cvd_scaling = CvdScaling::kDivSqrtDegree;

  double keep_prob() const noexcept { return 1.0 - dropout_rate; }
};

/// Rows and work touched by one forward pass.
struct AccessLog {
  std::vector<NodeId> feature_rows;
  std::vector<std::vector<NodeId>> history_rows;  // per model layer
  std::size_t spmm_nnz = 0;    // sparse entries multiplied (times row width)
  std::size_t gemm_macs = 0;   // dense multiply-adds
  void reset() { *this = AccessLog{}; }
};

struct ForwardOptions {
  /// Features hold U0 = P·X; layer 0 is a plain dense layer.
  bool preprocessed = false;
  double keep_prob = 1.0;
  Rng* dropout_rng = nullptr;  // required when keep_prob < 1
  CvdScaling cvd_scaling = CvdScaling::kDivSqrtDegree;
  AccessLog* log = nullptr;
};

/// Rows to write back to a history store after the optimizer step.
struct HistoryUpdate {
  std::size_t layer = 0;
  std::vector<NodeId> nodes;
  Matrix values;
};

struct ForwardPass {
  Tape tape;
  Var logits;
  std::vector<Var> weights;     // one leaf per W^(l), requires_grad
  std::vector<NodeId> output_nodes;
  std::vector<HistoryUpdate> history_updates;
  std::vector<SparseMatrix> cvd_matrices;  // P̄ per plan layer; the tape points into it
};

/// U0 = P·X.
Matrix preprocess_input(const PropagationMatrix& p, const Matrix& x);

/// Exact activations H^(0..L) (the last entry is Z^(L)) without dropout.
/// With `preprocessed`, `x` must already be U0.
std::vector<Matrix> exact_activations(const PropagationMatrix& p, const Matrix& x,
                                      const ModelParams& params, bool preprocessed);

/// Writes exact no-dropout activations H^(l) of every node into `history`.
void seed_exact_history(HistoryStore& history, const PropagationMatrix& p, const Matrix& x,
                        const ModelParams& params, bool preprocessed);

/// History store shaped for `params`: layer l holds dims(l) columns.
HistoryStore make_history(std::size_t num_nodes, const ModelParams& params);

/// Number of sampled propagation layers for a model of `layers` layers.
inline std::size_t graph_layers(std::size_t layers, bool preprocessed) {
  return preprocessed ? layers - 1 : layers;
}

/// Full-graph forward with dropout after aggregation: Z = Dropout(P·H)·W.
ForwardPass forward_exact(const PropagationMatrix& p, const Matrix& x, const ModelParams& params,
                          const ForwardOptions& opts = {});

/// Z^(l+1) = Dropout(P̂^(l) H^(l)) W^(l) over the plan's receptive fields.
/// Also runs importance-sampling plans.
ForwardPass forward_ns(const ReceptiveFieldPlan& plan, const Matrix& x, const ModelParams& params,
                       const ForwardOptions& opts = {});
inline ForwardPass forward_is(const ReceptiveFieldPlan& plan, const Matrix& x,
                              const ModelParams& params, const ForwardOptions& opts = {}) {
  return forward_ns(plan, x, params, opts);
}

/// U = P̂(H - H̄) + P·H̄, where P·H̄ reads the history of full neighbourhoods.
ForwardPass forward_cv(const PropagationMatrix& p, const ReceptiveFieldPlan& plan,
                       const Matrix& x, const ModelParams& params, const HistoryStore& history,
                       const ForwardOptions& opts = {});

/// Dual-track forward: U = P̄(H - μ) + P̂(μ - μ̄) + P·μ̄,
/// H' = σ(Dropout(U)·W), μ' = σ(U·W). Logits come from the dropout track and
/// the history updates carry μ.
ForwardPass forward_cvd(const PropagationMatrix& p, const ReceptiveFieldPlan& plan,
                        const Matrix& x, const ModelParams& params,
                        const HistoryStore& history_mu, const ForwardOptions& opts = {});

}  // namespace vrgcn
