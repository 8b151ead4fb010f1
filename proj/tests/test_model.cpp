#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "vrgcn/kernels.hpp"
#include "vrgcn/model.hpp"
#include "vrgcn/synth.hpp"

using namespace vrgcn;
using vrgcn::testing::uniform_matrix;

namespace {

ModelParams params_for(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  return ModelParams::glorot(dims, rng);
}

// Dense-only reference: H <- relu(P H W) with the last layer linear.
Matrix dense_reference(const Matrix& p, const Matrix& x, const ModelParams& params) {
  Matrix h = x;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    h = kernels::serial::gemm(kernels::serial::gemm(p, h), params.weights[l]);
    if (l + 1 < params.num_layers())
      for (double& v : h.values()) v = std::max(v, 0.0);
  }
  return h;
}

std::vector<NodeId> iota(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

SamplerConfig sampler(std::vector<std::size_t> d, SamplerMode mode = SamplerMode::kNeighbor,
                      SelfLoopWeighting w = SelfLoopWeighting::kScaled) {
  SamplerConfig c;
  c.samples_per_layer = std::move(d);
  c.mode = mode;
  c.self_weighting = w;
  return c;
}

Matrix logits(ForwardPass& pass) { return pass.tape.value(pass.logits); }

}  // namespace

TEST_CASE("one layer with identity weights is P.X") {
  const Graph g = random_graph(6, 0.4, 3, 3, 1);
  const PropagationMatrix p = build_propagation(g);
  ModelParams params;
  params.weights = {Matrix::identity(3)};
  ForwardPass pass = forward_exact(p, g.features, params);
  CHECK(max_abs_diff(logits(pass), kernels::spmm(p.matrix(), g.features)) < 1e-15);
}

TEST_CASE("single node graph is an MLP") {
  Graph g = random_graph(1, 0.0, 4, 2, 2);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({4, 5, 2}, 3);
  ForwardPass pass = forward_exact(p, g.features, params);
  Matrix h = kernels::gemm(g.features, params.weights[0]);
  for (double& v : h.values()) v = std::max(v, 0.0);
  CHECK(max_abs_diff(logits(pass), kernels::gemm(h, params.weights[1])) < 1e-15);

  Rng rng = make_rng(4);
  const std::vector<NodeId> batch{0};
  // The scaled self weight is P_uu/D here, so only the exact weighting is exact for D > 1.
  for (std::size_t d : {1, 2, 5}) {
    const auto plan = build_receptive_fields(
        p, batch, sampler({d, d}, SamplerMode::kNeighbor, d == 1 ? SelfLoopWeighting::kScaled : SelfLoopWeighting::kExact), rng);
    ForwardPass ns = forward_ns(plan, g.features, params);
    CHECK(max_abs_diff(logits(ns), logits(pass)) < 1e-15);
    const auto is_plan = build_receptive_fields(p, batch, sampler({d, d}, SamplerMode::kImportance), rng);
    ForwardPass is = forward_is(is_plan, g.features, params);
    CHECK(max_abs_diff(logits(is), logits(pass)) < 1e-15);
  }
}

TEST_CASE("exact forward matches a dense-only reference") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = random_graph(5, 0.5, 3, 2, seed);
    const PropagationMatrix p = build_propagation(g);
    const ModelParams params = params_for({3, 4, 2}, seed);
    ForwardPass pass = forward_exact(p, g.features, params);
    CHECK(max_abs_diff(logits(pass), dense_reference(p.matrix().to_dense(), g.features, params)) < 1e-13);
    const auto acts = exact_activations(p, g.features, params, false);
    CHECK(max_abs_diff(acts.back(), logits(pass)) < 1e-15);
  }
}

TEST_CASE("preprocessing") {
  const Matrix x = uniform_matrix(4, 3, 5);
  const PropagationMatrix identity = build_propagation(SparseMatrix(4, 4, {0, 0, 0, 0, 0}, {}, {}));
  CHECK(preprocess_input(identity, x) == x);
  const PropagationMatrix path = build_propagation(vrgcn::testing::path_adjacency(3));
  const Matrix x3 = uniform_matrix(3, 2, 6);
  CHECK(max_abs_diff(preprocess_input(path, x3), kernels::serial::gemm(path.matrix().to_dense(), x3)) < 1e-15);

  const Graph g = random_graph(8, 0.4, 3, 2, 7);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({3, 4, 2}, 8);
  const Matrix u0 = preprocess_input(p, g.features);
  ForwardOptions opts;
  opts.preprocessed = true;
  ForwardPass pp = forward_exact(p, u0, params, opts);
  ForwardPass plain = forward_exact(p, g.features, params);
  CHECK(max_abs_diff(logits(pp), logits(plain)) < 1e-14);
}

TEST_CASE("full sampling reproduces the exact minibatch logits") {
  const Graph g = random_graph(16, 0.25, 3, 2, 9);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({3, 6, 2}, 10);
  ForwardPass exact = forward_exact(p, g.features, params);
  Rng rng = make_rng(11);
  const std::vector<NodeId> batch{2, 7, 11};
  const auto plan = build_receptive_fields(p, batch, sampler({2, 2}, SamplerMode::kFull), rng);
  ForwardPass ns = forward_ns(plan, g.features, params);
  CHECK(max_abs_diff(logits(ns), gather_rows(logits(exact), batch)) < 1e-14);
}

TEST_CASE("sampled first-layer pre-activation is unbiased") {
  const Graph g = random_graph(5, 0.6, 3, 2, 12);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({3, 2}, 13);
  const Matrix exact = kernels::spmm(p.matrix(), kernels::gemm(g.features, params.weights[0]));
  const auto batch = iota(5);
  const std::size_t draws = 100000;
  Matrix s(5, 2), s2(5, 2);
  Rng rng = make_rng(14);
  for (std::size_t k = 0; k < draws; ++k) {
    const auto plan = build_receptive_fields(p, batch, sampler({2}, SamplerMode::kNeighbor, SelfLoopWeighting::kExact), rng);
    ForwardPass ns = forward_ns(plan, g.features, params);
    const Matrix z = logits(ns);
    for (std::size_t i = 0; i < z.size(); ++i) {
      s.values()[i] += z.values()[i];
      s2.values()[i] += z.values()[i] * z.values()[i];
    }
  }
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double mean = s.values()[i] / draws;
    const double se = std::sqrt(std::max(s2.values()[i] / draws - mean * mean, 0.0) / draws);
    CHECK(std::abs(mean - exact.values()[i]) <= 4 * se + 1e-12);
  }
}

TEST_CASE("importance sampling with no sampled neighbour aggregates to zero") {
  std::vector<Edge> e{{0, 1}};
  const PropagationMatrix p = build_propagation(adjacency_from_edges(3, e));
  const std::vector<double> q{0.0, 0.0, 1.0};
  Rng rng = make_rng(15);
  const std::vector<NodeId> out{0};
  const PlanLayer layer = sample_importance_layer(p, q, out, 3, rng);
  CHECK(layer.p_hat.row_nnz(0) == 0);
  const Matrix h = uniform_matrix(layer.nodes_in.size(), 2, 16);
  CHECK(kernels::spmm(layer.p_hat, h) == Matrix(1, 2));
}

TEST_CASE("collapse lattice") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = random_graph(12, 0.3, 3, 2, 20 + seed);
    const PropagationMatrix p = build_propagation(g);
    const ModelParams params = params_for({3, 5, 2}, seed);
    const std::vector<NodeId> batch{0, 3, 8};
    Rng rng = make_rng(seed, 2);
    const auto plan = build_receptive_fields(p, batch, sampler({2, 2}), rng);

    ForwardOptions drop;
    drop.keep_prob = 0.7;
    Rng r1 = make_rng(seed, 3), r2 = make_rng(seed, 3);
    drop.dropout_rng = &r1;
    const HistoryStore cold = make_history(12, params);
    ForwardPass cv = forward_cv(p, plan, g.features, params, cold, drop);
    drop.dropout_rng = &r2;
    ForwardPass ns = forward_ns(plan, g.features, params, drop);
    CHECK(max_abs_diff(logits(cv), logits(ns)) < 1e-12);

    HistoryStore random_history = make_history(12, params);
    for (std::size_t l = 0; l < params.num_layers(); ++l)
      random_history.write_rows(l, iota(12), uniform_matrix(12, random_history.dims(l), seed + l));
    ForwardPass cv2 = forward_cv(p, plan, g.features, params, random_history);
    ForwardPass cvd = forward_cvd(p, plan, g.features, params, random_history);
    CHECK(max_abs_diff(logits(cv2), logits(cvd)) < 1e-12);

    HistoryStore exact_history = make_history(12, params);
    seed_exact_history(exact_history, p, g.features, params, false);
    const auto full = build_receptive_fields(p, batch, sampler({2, 2}, SamplerMode::kFull), rng);
    ForwardPass exact = forward_exact(p, g.features, params);
    const Matrix expect = gather_rows(logits(exact), batch);
    ForwardPass a = forward_ns(full, g.features, params);
    ForwardPass b = forward_cv(p, full, g.features, params, exact_history);
    ForwardPass c = forward_cvd(p, full, g.features, params, exact_history);
    CHECK(max_abs_diff(logits(a), expect) < 1e-12);
    CHECK(max_abs_diff(logits(b), expect) < 1e-12);
    CHECK(max_abs_diff(logits(c), expect) < 1e-12);
  }
}

TEST_CASE("CV with exact history is exact for any plan") {
  const Graph g = random_graph(20, 0.2, 3, 2, 30);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({3, 6, 2}, 31);
  HistoryStore history = make_history(20, params);
  seed_exact_history(history, p, g.features, params, false);
  ForwardPass exact = forward_exact(p, g.features, params);
  Rng rng = make_rng(32);
  for (int k = 0; k < 10; ++k) {
    const std::vector<NodeId> batch{static_cast<NodeId>(k), static_cast<NodeId>(k + 7)};
    const auto plan = build_receptive_fields(p, batch, sampler({2, 2}), rng);
    ForwardPass cv = forward_cv(p, plan, g.features, params, history);
    CHECK(max_abs_diff(logits(cv), gather_rows(logits(exact), batch)) < 1e-13);
  }
}

TEST_CASE("CV error shrinks with the weight perturbation") {
  const Graph g = random_graph(20, 0.2, 3, 2, 33);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({3, 6, 2}, 34);
  HistoryStore history = make_history(20, params);
  seed_exact_history(history, p, g.features, params, false);
  Rng rng = make_rng(35);
  const std::vector<NodeId> batch{1, 4, 9, 15};
  const auto plan = build_receptive_fields(p, batch, sampler({2, 2}), rng);
  const Matrix direction = uniform_matrix(3, 6, 36);
  double previous = INFINITY;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    ModelParams moved = params;
    moved.weights[0] += direction * eps;
    ForwardPass exact = forward_exact(p, g.features, moved);
    ForwardPass cv = forward_cv(p, plan, g.features, moved, history);
    const double err = max_abs_diff(logits(cv), gather_rows(logits(exact), batch));
    CHECK(err < previous);
    previous = err;
  }
  CHECK(previous < 1e-2);
}

TEST_CASE("CVD with matching first-layer history is exact without dropout") {
  const Graph g = random_graph(10, 0.3, 3, 2, 40);
  const PropagationMatrix p = build_propagation(g);
  ModelParams params;
  params.weights = {Matrix::identity(3)};
  HistoryStore hx = make_history(10, params);
  hx.write_rows(0, iota(10), g.features);
  Rng rng = make_rng(42);
  const std::vector<NodeId> batch{0, 5};
  const auto plan = build_receptive_fields(p, batch, sampler({2}), rng);
  ForwardPass cvd = forward_cvd(p, plan, g.features, params, hx);
  CHECK(max_abs_diff(logits(cvd), gather_rows(kernels::spmm(p.matrix(), g.features), batch)) < 1e-14);
}

TEST_CASE("forward passes touch only plan rows") {
  const Graph g = random_graph(40, 0.1, 3, 2, 50);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = params_for({3, 4, 2}, 51);
  const HistoryStore history = make_history(40, params);
  Rng rng = make_rng(52);
  const std::vector<NodeId> batch{5, 6};
  const auto plan = build_receptive_fields(p, batch, sampler({2, 2}), rng);
  for (int which = 0; which < 3; ++which) {
    AccessLog log;
    ForwardOptions opts;
    opts.log = &log;
    if (which == 0) forward_ns(plan, g.features, params, opts);
    if (which == 1) forward_cv(p, plan, g.features, params, history, opts);
    if (which == 2) forward_cvd(p, plan, g.features, params, history, opts);
    CHECK(log.feature_rows == plan.input_nodes());
    for (std::size_t l = 0; l < log.history_rows.size(); ++l) {
      std::set<NodeId> allowed(plan.layers[l].nodes_in.begin(), plan.layers[l].nodes_in.end());
      for (NodeId u : plan.layers[l].nodes_out)
        for (NodeId v : p.matrix().row_cols(u)) allowed.insert(v);
      for (NodeId v : log.history_rows[l]) CHECK(allowed.count(v) == 1);
    }
    CHECK(log.spmm_nnz > 0);
    CHECK(log.gemm_macs > 0);
  }
}

TEST_CASE("estimator names round-trip") {
  for (Estimator e : {Estimator::kExact, Estimator::kNS, Estimator::kIS, Estimator::kCV, Estimator::kCVD})
    CHECK(estimator_from_string(to_string(e)) == e);
  CHECK_THROWS_AS(estimator_from_string("sage"), InputError);
}
