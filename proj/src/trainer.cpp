#include "vrgcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "vrgcn/kernels.hpp"

namespace vrgcn {

void TrainConfig::validate() const {
  require(minibatch_size >= 1, "TrainConfig: minibatch_size must be >= 1");
  require(estimator.dropout_rate >= 0.0 && estimator.dropout_rate < 1.0,
          "TrainConfig: dropout_rate must lie in [0, 1)");
  require(weight_decay >= 0.0, "TrainConfig: weight_decay must be non-negative");
  optimizer.validate();
  const std::size_t expected = graph_layers(num_layers(), estimator.preprocess_first_layer);
  require(samples_per_layer.size() == expected,
          "TrainConfig: samples_per_layer needs one entry per graph layer");
  for (std::size_t d : samples_per_layer) require(d >= 1, "TrainConfig: D^(l) must be >= 1");
}

SamplerMode sampler_mode_for(Estimator estimator) {
  switch (estimator) {
    case Estimator::kExact: return SamplerMode::kFull;
    case Estimator::kIS: return SamplerMode::kImportance;
    default: return SamplerMode::kNeighbor;
  }
}

SamplerConfig TrainConfig::sampler_config() const {
  SamplerConfig s;
  s.samples_per_layer = samples_per_layer;
  s.seed = seed;
  s.self_weighting = self_weighting;
  s.mode = sampler_mode_for(estimator.kind);
  return s;
}

std::pair<Var, std::size_t> attach_loss(ForwardPass& pass, const Labels& labels,
                                        const std::vector<bool>& is_loss_node) {
  const auto& nodes = pass.output_nodes;
  std::size_t count = 0;
  for (NodeId v : nodes) count += is_loss_node[v] ? 1 : 0;
  std::vector<double> weights(nodes.size(), 0.0);
  if (count > 0)
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (is_loss_node[nodes[i]]) weights[i] = 1.0 / static_cast<double>(count);
  if (labels.multilabel) {
    Matrix targets = gather_rows(labels.multi_hot, nodes);
    return {pass.tape.sigmoid_cross_entropy(pass.logits, targets, weights), count};
  }
  std::vector<int> y(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    y[i] = labels.classes[nodes[i]];
    if (weights[i] != 0.0) require(y[i] >= 0, "loss: labelled node has no class");
  }
  return {pass.tape.softmax_cross_entropy(pass.logits, y, weights), count};
}

LossAndGradient exact_loss_and_gradient(const PropagationMatrix& p, const Matrix& x,
                                        const Labels& labels, const ModelParams& params,
                                        std::span<const NodeId> nodes) {
  ForwardPass pass = forward_exact(p, x, params);
  std::vector<bool> mask(p.num_nodes(), false);
  for (NodeId v : nodes) mask[v] = true;
  auto [loss, count] = attach_loss(pass, labels, mask);
  require(count > 0, "exact_loss_and_gradient: no loss nodes");
  pass.tape.backward(loss);
  LossAndGradient out;
  out.loss = pass.tape.value(loss)(0, 0);
  for (Var w : pass.weights) out.gradients.push_back(pass.tape.grad(w));
  return out;
}

namespace {

std::vector<std::vector<NodeId>> partition(std::vector<NodeId> nodes, std::size_t batch,
                                           Rng& rng) {
  std::shuffle(nodes.begin(), nodes.end(), rng);
  std::vector<std::vector<NodeId>> out;
  for (std::size_t i = 0; i < nodes.size(); i += batch)
    out.emplace_back(nodes.begin() + static_cast<std::ptrdiff_t>(i),
                     nodes.begin() + static_cast<std::ptrdiff_t>(std::min(nodes.size(), i + batch)));
  return out;
}

std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

ForwardPass run_forward(const Estimator kind, const PropagationMatrix& p,
                        const ReceptiveFieldPlan& plan, const Matrix& x,
                        const ModelParams& params, const HistoryStore& history,
                        const ForwardOptions& opts) {
  switch (kind) {
    case Estimator::kCV: return forward_cv(p, plan, x, params, history, opts);
    case Estimator::kCVD: return forward_cvd(p, plan, x, params, history, opts);
    default: return forward_ns(plan, x, params, opts);
  }
}

bool uses_history(Estimator kind) { return kind == Estimator::kCV || kind == Estimator::kCVD; }

// The input rows never change, so their history is exact from the start.
void seed_input_history(HistoryStore& history, const Matrix& x) {
  history.write_rows(0, all_nodes(x.rows()), x);
}

void apply_history(HistoryStore& history, const ForwardPass& pass) {
  for (const HistoryUpdate& u : pass.history_updates) history.write_rows(u.layer, u.nodes, u.values);
}

}  // namespace

double metric_from_logits(const Matrix& logits, const Labels& labels,
                          std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  if (labels.multilabel) {
    double tp = 0, fp = 0, fn = 0;
    for (NodeId v : nodes) {
      for (std::size_t c = 0; c < logits.cols(); ++c) {
        const bool pred = logits(v, c) > 0.0;  // sigmoid > 0.5
        const bool truth = labels.multi_hot(v, c) > 0.5;
        tp += pred && truth;
        fp += pred && !truth;
        fn += !pred && truth;
      }
    }
    const double denom = 2 * tp + fp + fn;
    return denom > 0 ? 2 * tp / denom : 1.0;
  }
  std::size_t correct = 0;
  for (NodeId v : nodes) {
    auto row = logits.row(v);
    const auto best = static_cast<int>(std::ranges::max_element(row) - row.begin());
    correct += best == labels.classes[v] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

double evaluate(const Graph& graph, const PropagationMatrix& p, const ModelParams& params,
                std::span<const NodeId> split) {
  const std::vector<Matrix> h = exact_activations(p, graph.features, params, false);
  return metric_from_logits(h.back(), graph.labels, split);
}

TrainResult train(const Graph& graph, const TrainConfig& cfg) {
  const PropagationMatrix p = build_propagation(graph);
  std::vector<std::size_t> dims{graph.features.cols()};
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(graph.labels.num_classes);
  Rng init_rng = make_rng(cfg.seed, 1);
  return train(graph, p, cfg, ModelParams::glorot(dims, init_rng));
}

TrainResult train(const Graph& graph, const PropagationMatrix& p, const TrainConfig& cfg,
                  ModelParams initial) {
  cfg.validate();
  initial.validate();
  require(initial.num_layers() == cfg.num_layers(), "train: initial params have wrong depth");
  require(!graph.splits.train.empty(), "train: empty training split");

  const EstimatorKind& est = cfg.estimator;
  const bool pp = est.preprocess_first_layer;
  const Matrix x = pp ? preprocess_input(p, graph.features) : graph.features;
  const SamplerConfig sampler = cfg.sampler_config();

  Rng batch_rng = make_rng(cfg.seed, 2);
  Rng plan_rng = make_rng(cfg.seed, 3);
  Rng dropout_rng = make_rng(cfg.seed, 4);

  std::vector<bool> is_train(graph.num_nodes, false);
  for (NodeId v : graph.splits.train) is_train[v] = true;
  const std::vector<NodeId> scan =
      cfg.epoch_scan == EpochScan::kAllNodes ? all_nodes(graph.num_nodes) : graph.splits.train;

  TrainResult result;
  result.params = std::move(initial);
  result.best_params = result.params;
  HistoryStore history = make_history(graph.num_nodes, result.params);
  Optimizer optimizer(cfg.optimizer);

  ForwardOptions opts;
  opts.preprocessed = pp;
  opts.keep_prob = est.keep_prob();
  opts.dropout_rng = &dropout_rng;
  opts.cvd_scaling = est.cvd_scaling;

  if (uses_history(est.kind) && !pp) seed_input_history(history, x);
  if (uses_history(est.kind)) {
    const std::size_t warmup =
        cfg.warmup_epochs.value_or(graph_layers(cfg.num_layers(), pp));
    ForwardOptions warm = opts;
    warm.keep_prob = 1.0;
    for (std::size_t e = 0; e < warmup; ++e) {
      for (const auto& batch : partition(all_nodes(graph.num_nodes), cfg.minibatch_size, batch_rng)) {
        const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, sampler, plan_rng);
        apply_history(history, run_forward(est.kind, p, plan, x, result.params, history, warm));
      }
      history.advance_epoch();
    }
  }

  ModelParams last_good = result.params;
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochStats stats;
    stats.epoch = epoch + 1;
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (const auto& batch : partition(scan, cfg.minibatch_size, batch_rng)) {
      const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, sampler, plan_rng);
      AccessLog log;
      opts.log = &log;
      ForwardPass pass = run_forward(est.kind, p, plan, x, result.params, history, opts);
      opts.log = nullptr;
      auto [loss, count] = attach_loss(pass, graph.labels, is_train);
      if (count > 0) {
        const double value = pass.tape.value(loss)(0, 0);
        if (!std::isfinite(value)) {
          result.report.aborted = true;
          result.report.message = "non-finite loss at epoch " + std::to_string(epoch + 1);
          result.params = last_good;
          return result;
        }
        loss_sum += value;
        ++loss_batches;
        pass.tape.backward(loss);
        std::vector<Matrix> grads;
        for (std::size_t l = 0; l < pass.weights.size(); ++l) {
          Matrix g = pass.tape.grad(pass.weights[l]);
          if (cfg.weight_decay > 0.0) g += result.params.weights[l] * (2.0 * cfg.weight_decay);
          grads.push_back(std::move(g));
        }
        optimizer.step(result.params.weights, grads);
      }
      if (uses_history(est.kind)) apply_history(history, pass);
      if (cfg.after_iteration) cfg.after_iteration(pass, history);
      ++stats.iterations;
      stats.spmm_nnz += log.spmm_nnz;
      stats.gemm_macs += log.gemm_macs;
      stats.feature_rows += log.feature_rows.size();
      for (const auto& rows : log.history_rows) stats.history_rows += rows.size();
    }
    history.advance_epoch();
    stats.minibatch_loss = loss_batches > 0 ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    ForwardPass full = forward_exact(p, graph.features, result.params);
    stats.train_loss = full.tape.value(attach_loss(full, graph.labels, is_train).first)(0, 0);
    if (!std::isfinite(stats.train_loss)) {
      result.report.aborted = true;
      result.report.message = "non-finite training loss at epoch " + std::to_string(epoch + 1);
      result.params = last_good;
      return result;
    }
    if (cfg.evaluate_each_epoch && !graph.splits.validation.empty()) {
      stats.validation_metric =
          metric_from_logits(full.tape.value(full.logits), graph.labels, graph.splits.validation);
      if (!have_best || stats.validation_metric > result.report.best_validation) {
        have_best = true;
        result.report.best_validation = stats.validation_metric;
        result.report.best_epoch = stats.epoch;
        result.best_params = result.params;
      }
    }
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.report.epochs.push_back(stats);
    last_good = result.params;
  }
  if (!have_best) result.best_params = result.params;
  return result;
}

Matrix exact_test_forward(const PropagationMatrix& p, const Matrix& x, const ModelParams& params,
                          const ExactTestConfig& cfg) {
  params.validate();
  SamplerConfig sampler;
  sampler.samples_per_layer = cfg.samples_per_layer;
  sampler.self_weighting = cfg.self_weighting;
  sampler.seed = cfg.seed;
  sampler.mode = SamplerMode::kNeighbor;
  require(cfg.samples_per_layer.size() == graph_layers(params.num_layers(), cfg.preprocessed),
          "exact_test_forward: samples_per_layer needs one entry per graph layer");
  require(cfg.minibatch_size >= 1, "exact_test_forward: minibatch_size must be >= 1");

  const Matrix input = cfg.preprocessed ? preprocess_input(p, x) : x;
  const std::vector<NodeId> scan = cfg.scan_nodes.empty() ? all_nodes(p.num_nodes()) : cfg.scan_nodes;
  Rng batch_rng = make_rng(cfg.seed, 2);
  Rng plan_rng = make_rng(cfg.seed, 3);
  HistoryStore history = make_history(p.num_nodes(), params);
  ForwardOptions opts;
  opts.preprocessed = cfg.preprocessed;

  if (!cfg.preprocessed) seed_input_history(history, input);
  const std::size_t warmup = cfg.warmup_epochs.value_or(params.num_layers() - 1);
  Matrix logits(p.num_nodes(), params.weights.back().cols());
  for (std::size_t epoch = 0; epoch <= warmup; ++epoch) {
    for (const auto& batch : partition(scan, cfg.minibatch_size, batch_rng)) {
      const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, sampler, plan_rng);
      ForwardPass pass = forward_cv(p, plan, input, params, history, opts);
      apply_history(history, pass);
      if (epoch == warmup) {
        const Matrix& z = pass.tape.value(pass.logits);
        for (std::size_t i = 0; i < batch.size(); ++i)
          std::ranges::copy(z.row(i), logits.row(batch[i]).begin());
      }
    }
    history.advance_epoch();
  }
  return logits;
}

}  // namespace vrgcn
