#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrgcn/graph.hpp"
#include "vrgcn/model.hpp"
#include "vrgcn/optimizer.hpp"
#include "vrgcn/sampling.hpp"

namespace vrgcn {

enum class EpochScan {
  kLabeledOnly,  // minibatches partition the training nodes
  kAllNodes,     // minibatches partition every node; unlabeled rows add no loss
};

/// Exact trains on full (unsampled) plans, IS on importance plans, the rest on
/// neighbour-sampled plans.
SamplerMode sampler_mode_for(Estimator estimator);

struct TrainConfig {
  EstimatorKind estimator;
  /// D^(l) per sampled layer (graph layers only: L, or L-1 with preprocessing).
  std::vector<std::size_t> samples_per_layer{2, 2};
  SelfLoopWeighting self_weighting = SelfLoopWeighting::kScaled;
  std::vector<std::size_t> hidden_dims{32};
  std::size_t minibatch_size = 32;
  std::size_t epochs = 200;
  OptimizerConfig optimizer;
  double weight_decay = 0.0;  // adds λ·Σ‖W‖² to the objective
  std::uint64_t seed = 0;
  EpochScan epoch_scan = EpochScan::kLabeledOnly;
  /// Forward-only history passes over all nodes before the first step
  /// (CV/CVD only). Defaults to the number of graph layers.
  std::optional<std::size_t> warmup_epochs;
  bool evaluate_each_epoch = true;
  /// Called after every training iteration, once history has been written.
  std::function<void(const ForwardPass&, const HistoryStore&)> after_iteration;

  void validate() const;
  SamplerConfig sampler_config() const;
  std::size_t num_layers() const noexcept { return hidden_dims.size() + 1; }
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t iterations = 0;
  double train_loss = 0.0;       // exact loss over all training nodes, no dropout
  double minibatch_loss = 0.0;   // mean of the stochastic minibatch losses
  double validation_metric = 0.0;
  double wall_seconds = 0.0;
  std::size_t spmm_nnz = 0;
  std::size_t gemm_macs = 0;
  std::size_t feature_rows = 0;
  std::size_t history_rows = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  bool aborted = false;
  std::string message;
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
};

struct TrainResult {
  ModelParams params;       // final weights (last good ones if aborted)
  ModelParams best_params;  // weights of the best validation epoch
  TrainReport report;
};

/// Epoch-driven stochastic training: per iteration build a plan, run the
/// estimator's forward pass, average the loss over the labelled minibatch
/// nodes, take one optimizer step, then write history rows for every node of
/// every receptive field.
TrainResult train(const Graph& graph, const TrainConfig& cfg);
TrainResult train(const Graph& graph, const PropagationMatrix& p, const TrainConfig& cfg,
                  ModelParams initial);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<Matrix> gradients;
};

/// Mean loss over `nodes` and its gradient, exact full-graph
/// propagation, no dropout.
LossAndGradient exact_loss_and_gradient(const PropagationMatrix& p, const Matrix& x,
                                        const Labels& labels, const ModelParams& params,
                                        std::span<const NodeId> nodes);

/// Adds the averaged loss over the output rows that belong to `loss_nodes`.
/// Returns the 1x1 loss variable and the number of contributing rows.
std::pair<Var, std::size_t> attach_loss(ForwardPass& pass, const Labels& labels,
                                        const std::vector<bool>& is_loss_node);

struct ExactTestConfig {
  std::vector<std::size_t> samples_per_layer{2, 2};
  SelfLoopWeighting self_weighting = SelfLoopWeighting::kScaled;
  std::size_t minibatch_size = 8;
  bool preprocessed = false;
  /// History passes before the assembling epoch; defaults to L - 1, so L epochs
  /// run in total. Input-layer history is seeded with the features up front.
  std::optional<std::size_t> warmup_epochs;
  /// Nodes scanned each epoch; empty means all nodes.
  std::vector<NodeId> scan_nodes;
  std::uint64_t seed = 0;
};

/// Forward-only CV epochs with fixed weights and no dropout, updating
/// history, followed by one more epoch whose logits are assembled per node.
/// Rows of nodes that are never scanned stay zero.
Matrix exact_test_forward(const PropagationMatrix& p, const Matrix& x, const ModelParams& params,
                          const ExactTestConfig& cfg);

/// Accuracy (argmax, ties to the lowest class) or micro-F1 at threshold 0.5 for
/// multi-label data, using exact propagation on `split`.
double evaluate(const Graph& graph, const PropagationMatrix& p, const ModelParams& params,
                std::span<const NodeId> split);
double metric_from_logits(const Matrix& logits, const Labels& labels,
                          std::span<const NodeId> nodes);

}  // namespace vrgcn
