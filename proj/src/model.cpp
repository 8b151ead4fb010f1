#include "vrgcn/model.hpp"

#include <cmath>

#include "vrgcn/kernels.hpp"

namespace vrgcn {

std::vector<std::size_t> ModelParams::layer_dims() const {
  std::vector<std::size_t> dims;
  if (weights.empty()) return dims;
  dims.push_back(weights.front().rows());
  for (const Matrix& w : weights) dims.push_back(w.cols());
  return dims;
}

void ModelParams::validate() const {
  require(!weights.empty(), "ModelParams: at least one layer required");
  for (std::size_t l = 1; l < weights.size(); ++l)
    require(weights[l].rows() == weights[l - 1].cols(), "ModelParams: layer widths do not chain");
}

ModelParams ModelParams::glorot(const std::vector<std::size_t>& dims, Rng& rng) {
  require(dims.size() >= 2, "ModelParams::glorot: need input and output widths");
  ModelParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(dims[l], dims[l + 1]);
    for (double& v : w.values()) v = u(rng);
    params.weights.push_back(std::move(w));
  }
  return params;
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::kExact: return "exact";
    case Estimator::kNS: return "ns";
    case Estimator::kIS: return "is";
    case Estimator::kCV: return "cv";
    case Estimator::kCVD: return "cvd";
  }
  return "?";
}

Estimator estimator_from_string(const std::string& s) {
  if (s == "exact") return Estimator::kExact;
  if (s == "ns") return Estimator::kNS;
  if (s == "is") return Estimator::kIS;
  if (s == "cv") return Estimator::kCV;
  if (s == "cvd") return Estimator::kCVD;
  throw InputError("unknown estimator '" + s + "' (expected exact|ns|is|cv|cvd)");
}

Matrix preprocess_input(const PropagationMatrix& p, const Matrix& x) {
  return kernels::spmm(p.matrix(), x);
}

std::vector<Matrix> exact_activations(const PropagationMatrix& p, const Matrix& x,
                                      const ModelParams& params, bool preprocessed) {
  params.validate();
  require(x.cols() == params.weights.front().rows(), "exact_activations: feature width mismatch");
  std::vector<Matrix> h{x};
  const std::size_t layers = params.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix u = (preprocessed && l == 0) ? h.back() : kernels::spmm(p.matrix(), h.back());
    Matrix z = kernels::gemm(u, params.weights[l]);
    if (l + 1 < layers)
      for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
    h.push_back(std::move(z));
  }
  return h;
}

HistoryStore make_history(std::size_t num_nodes, const ModelParams& params) {
  std::vector<std::size_t> dims = params.layer_dims();
  dims.pop_back();
  return HistoryStore(num_nodes, std::move(dims));
}

void seed_exact_history(HistoryStore& history, const PropagationMatrix& p, const Matrix& x,
                        const ModelParams& params, bool preprocessed) {
  require(history.num_layers() == params.num_layers(), "seed_exact_history: layer count mismatch");
  const std::vector<Matrix> h = exact_activations(p, x, params, preprocessed);
  std::vector<NodeId> all(p.num_nodes());
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = static_cast<NodeId>(v);
  for (std::size_t l = 0; l < params.num_layers(); ++l) history.write_rows(l, all, h[l]);
}

namespace {

Var dropout_if(ForwardPass& pass, Var u, const ForwardOptions& opts) {
  if (opts.keep_prob >= 1.0) return u;
  require(opts.dropout_rng != nullptr, "forward: dropout requires an RNG");
  const Matrix& v = pass.tape.value(u);
  return pass.tape.dropout(u, DropoutMask::sample(v.rows(), v.cols(), opts.keep_prob,
                                                  *opts.dropout_rng));
}

Var dense_layer(ForwardPass& pass, Var u, std::size_t l, std::size_t layers, bool dropout,
                const ForwardOptions& opts) {
  Var in = dropout ? dropout_if(pass, u, opts) : u;
  if (opts.log) {
    const Matrix& v = pass.tape.value(in);
    opts.log->gemm_macs += v.rows() * v.cols() * pass.tape.value(pass.weights[l]).cols();
  }
  Var z = pass.tape.matmul(in, pass.weights[l]);
  return l + 1 < layers ? pass.tape.relu(z) : z;
}

void add_weight_leaves(ForwardPass& pass, const ModelParams& params) {
  for (const Matrix& w : params.weights) pass.weights.push_back(pass.tape.leaf(w, true));
}

void log_spmm(const ForwardOptions& opts, const SparseMatrix& s, std::size_t width) {
  if (opts.log) opts.log->spmm_nnz += s.nnz() * width;
}

void log_history(const ForwardOptions& opts, std::size_t layer, std::span<const NodeId> rows) {
  if (!opts.log) return;
  auto& per_layer = opts.log->history_rows;
  if (per_layer.size() <= layer) per_layer.resize(layer + 1);
  per_layer[layer].insert(per_layer[layer].end(), rows.begin(), rows.end());
}

// Every history row a CV-style aggregation of `nodes_out` reads: the sampled
// inputs plus the full neighbourhood of each output node.
void log_history_reads(const ForwardOptions& opts, const PropagationMatrix& p, std::size_t layer,
                       const PlanLayer& pl) {
  if (!opts.log) return;
  log_history(opts, layer, pl.nodes_in);
  for (NodeId u : pl.nodes_out) log_history(opts, layer, p.matrix().row_cols(u));
}

void check_plan(const ReceptiveFieldPlan& plan, const ModelParams& params,
                const ForwardOptions& opts) {
  params.validate();
  require(plan.depth() == graph_layers(params.num_layers(), opts.preprocessed),
          "forward: plan depth does not match the model's graph layers");
  for (std::size_t k = 0; k + 1 < plan.depth(); ++k)
    require(plan.layers[k].nodes_out == plan.layers[k + 1].nodes_in,
            "forward: plan layers do not chain");
}

const std::vector<NodeId>& plan_inputs(const ReceptiveFieldPlan& plan) {
  return plan.depth() > 0 ? plan.input_nodes() : plan.minibatch;
}

Var input_leaf(ForwardPass& pass, const Matrix& x, std::span<const NodeId> rows,
               const ForwardOptions& opts) {
  if (opts.log) opts.log->feature_rows.assign(rows.begin(), rows.end());
  return pass.tape.constant(gather_rows(x, rows));
}

}  // namespace

ForwardPass forward_exact(const PropagationMatrix& p, const Matrix& x, const ModelParams& params,
                          const ForwardOptions& opts) {
  params.validate();
  require(x.rows() == p.num_nodes(), "forward_exact: one feature row per node");
  ForwardPass pass;
  add_weight_leaves(pass, params);
  const std::size_t layers = params.num_layers();
  std::vector<NodeId> all(p.num_nodes());
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = static_cast<NodeId>(v);
  Var h = input_leaf(pass, x, all, opts);
  for (std::size_t l = 0; l < layers; ++l) {
    Var u = h;
    if (!(opts.preprocessed && l == 0)) {
      log_spmm(opts, p.matrix(), pass.tape.value(h).cols());
      u = pass.tape.spmm(p.matrix(), h);
    }
    h = dense_layer(pass, u, l, layers, true, opts);
  }
  pass.logits = h;
  pass.output_nodes = std::move(all);
  return pass;
}

ForwardPass forward_ns(const ReceptiveFieldPlan& plan, const Matrix& x, const ModelParams& params,
                       const ForwardOptions& opts) {
  check_plan(plan, params, opts);
  ForwardPass pass;
  add_weight_leaves(pass, params);
  const std::size_t layers = params.num_layers();
  const std::size_t offset = opts.preprocessed ? 1 : 0;
  Var h = input_leaf(pass, x, plan_inputs(plan), opts);
  if (opts.preprocessed) h = dense_layer(pass, h, 0, layers, true, opts);
  for (std::size_t k = 0; k < plan.depth(); ++k) {
    const PlanLayer& pl = plan.layers[k];
    log_spmm(opts, pl.p_hat, pass.tape.value(h).cols());
    Var u = pass.tape.spmm(pl.p_hat, h);
    h = dense_layer(pass, u, k + offset, layers, true, opts);
  }
  pass.logits = h;
  pass.output_nodes = plan.minibatch;
  return pass;
}

ForwardPass forward_cv(const PropagationMatrix& p, const ReceptiveFieldPlan& plan,
                       const Matrix& x, const ModelParams& params, const HistoryStore& history,
                       const ForwardOptions& opts) {
  check_plan(plan, params, opts);
  require(history.num_layers() == params.num_layers(), "forward_cv: history layer count mismatch");
  ForwardPass pass;
  add_weight_leaves(pass, params);
  const std::size_t layers = params.num_layers();
  const std::size_t offset = opts.preprocessed ? 1 : 0;
  Var h = input_leaf(pass, x, plan_inputs(plan), opts);
  if (opts.preprocessed) h = dense_layer(pass, h, 0, layers, true, opts);
  for (std::size_t k = 0; k < plan.depth(); ++k) {
    const PlanLayer& pl = plan.layers[k];
    const std::size_t l = k + offset;
    pass.history_updates.push_back({l, pl.nodes_in, pass.tape.value(h)});
    log_history_reads(opts, p, l, pl);
    Var hbar = pass.tape.constant(history.read_rows(l, pl.nodes_in));
    Var exact_part = pass.tape.constant(history.aggregate(l, p, pl.nodes_out));
    log_spmm(opts, pl.p_hat, pass.tape.value(h).cols());
    Var u = pass.tape.add(pass.tape.spmm(pl.p_hat, pass.tape.sub(h, hbar)), exact_part);
    h = dense_layer(pass, u, l, layers, true, opts);
  }
  pass.logits = h;
  pass.output_nodes = plan.minibatch;
  return pass;
}

ForwardPass forward_cvd(const PropagationMatrix& p, const ReceptiveFieldPlan& plan,
                        const Matrix& x, const ModelParams& params,
                        const HistoryStore& history_mu, const ForwardOptions& opts) {
  check_plan(plan, params, opts);
  require(history_mu.num_layers() == params.num_layers(),
          "forward_cvd: history layer count mismatch");
  ForwardPass pass;
  add_weight_leaves(pass, params);
  pass.cvd_matrices = scale_for_cvd(plan, p, opts.cvd_scaling);
  const std::size_t layers = params.num_layers();
  const std::size_t offset = opts.preprocessed ? 1 : 0;
  Var h = input_leaf(pass, x, plan_inputs(plan), opts);
  Var mu = h;
  if (opts.preprocessed) {
    Var u = h;
    h = dense_layer(pass, u, 0, layers, true, opts);
    mu = dense_layer(pass, u, 0, layers, false, opts);
  }
  for (std::size_t k = 0; k < plan.depth(); ++k) {
    const PlanLayer& pl = plan.layers[k];
    const std::size_t l = k + offset;
    pass.history_updates.push_back({l, pl.nodes_in, pass.tape.value(mu)});
    log_history_reads(opts, p, l, pl);
    Var mubar = pass.tape.constant(history_mu.read_rows(l, pl.nodes_in));
    Var exact_part = pass.tape.constant(history_mu.aggregate(l, p, pl.nodes_out));
    const std::size_t width = pass.tape.value(h).cols();
    log_spmm(opts, pl.p_hat, 2 * width);
    Var zero_mean = pass.tape.spmm(pass.cvd_matrices[k], pass.tape.sub(h, mu));
    Var mean_delta = pass.tape.spmm(pl.p_hat, pass.tape.sub(mu, mubar));
    Var u = pass.tape.add(pass.tape.add(zero_mean, mean_delta), exact_part);
    h = dense_layer(pass, u, l, layers, true, opts);
    mu = dense_layer(pass, u, l, layers, false, opts);
  }
  pass.logits = h;
  pass.output_nodes = plan.minibatch;
  return pass;
}

}  // namespace vrgcn
