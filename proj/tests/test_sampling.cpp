#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "vrgcn/kernels.hpp"
#include "vrgcn/sampling.hpp"
#include "vrgcn/synth.hpp"

using namespace vrgcn;

namespace {

SamplerConfig config(std::vector<std::size_t> d, SelfLoopWeighting w = SelfLoopWeighting::kScaled) {
  SamplerConfig c;
  c.samples_per_layer = std::move(d);
  c.self_weighting = w;
  return c;
}

}  // namespace

TEST_CASE("full neighbourhood sampling reproduces P") {
  const Graph g = random_graph(12, 0.3, 2, 2, 4);
  const PropagationMatrix p = build_propagation(g);
  std::size_t max_degree = 0;
  for (std::size_t d : p.degrees()) max_degree = std::max(max_degree, d);
  SamplerConfig full = config({max_degree, max_degree});
  full.mode = SamplerMode::kFull;
  Rng rng = make_rng(1);
  const std::vector<NodeId> batch{0, 5, 7};
  const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, full, rng);
  for (const PlanLayer& layer : plan.layers)
    for (std::size_t i = 0; i < layer.nodes_out.size(); ++i)
      for (std::size_t j = 0; j < layer.nodes_in.size(); ++j)
        CHECK(layer.p_hat.at(i, j) == p.matrix().at(layer.nodes_out[i], layer.nodes_in[j]));

  const PropagationMatrix ring = build_propagation(vrgcn::testing::ring_adjacency(6));
  const std::vector<NodeId> ring_batch{0, 3, 5};
  const ReceptiveFieldPlan r = build_receptive_fields(ring, ring_batch, config({3}), rng);
  for (std::size_t i = 0; i < r.layers[0].nodes_out.size(); ++i)
    for (std::size_t j = 0; j < r.layers[0].nodes_in.size(); ++j)
      CHECK(r.layers[0].p_hat.at(i, j) ==
            doctest::Approx(ring.matrix().at(r.layers[0].nodes_out[i], r.layers[0].nodes_in[j])).epsilon(1e-15));
}

TEST_CASE("isolated node keeps only its scaled self entry") {
  const PropagationMatrix p = build_propagation(SparseMatrix(2, 2, {0, 0, 0}, {}, {}));
  Rng rng = make_rng(2);
  const std::vector<NodeId> batch{1};
  for (std::size_t d : {1, 2, 3}) {
    const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, config({d}), rng);
    REQUIRE(plan.layers[0].p_hat.nnz() == 1);
    CHECK(plan.layers[0].p_hat.values()[0] == doctest::Approx(1.0 / static_cast<double>(d)));
  }
}

TEST_CASE("two-node graph with D = 1 keeps the self column at weight 1") {
  const std::vector<Edge> e{{0, 1}};
  const PropagationMatrix p = build_propagation(adjacency_from_edges(2, e));
  Rng rng = make_rng(3);
  const std::vector<NodeId> batch{0};
  const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, config({1}), rng);
  CHECK(plan.layers[0].nodes_in == std::vector<NodeId>{0});
  REQUIRE(plan.layers[0].p_hat.nnz() == 1);
  CHECK(plan.layers[0].p_hat.values()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("analytic expectation of a sampled row") {
  const PropagationMatrix p = build_propagation(vrgcn::testing::path_adjacency(3));
  const auto full = expectation_of_p_hat(p, 1, config({3}));
  for (NodeId v = 0; v < 3; ++v) CHECK(full[v] == doctest::Approx(p.matrix().at(1, v)).epsilon(1e-15));
  const auto one = expectation_of_p_hat(p, 1, config({1}));
  CHECK(one[1] == doctest::Approx(3.0 * p.matrix().at(1, 1)));
  CHECK(one[0] == 0.0);
  const auto two = expectation_of_p_hat(p, 1, config({2}));
  CHECK(two[1] == doctest::Approx(1.5 * p.matrix().at(1, 1)));
  CHECK(two[0] == doctest::Approx(0.75 * p.matrix().at(1, 0)));
  const auto exact = expectation_of_p_hat(p, 1, config({2}, SelfLoopWeighting::kExact));
  for (NodeId v = 0; v < 3; ++v) CHECK(exact[v] == doctest::Approx(p.matrix().at(1, v)).epsilon(1e-14));
}

TEST_CASE("plan structure invariants") {
  const Graph g = random_graph(30, 0.2, 2, 2, 5);
  const PropagationMatrix p = build_propagation(g);
  Rng rng = make_rng(6);
  const std::vector<NodeId> batch{3, 9, 14, 22};
  const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, config({3, 2}), rng);
  CHECK(plan.layers.back().nodes_out == batch);
  for (std::size_t l = 0; l + 1 < plan.depth(); ++l)
    CHECK(plan.layers[l].nodes_out == plan.layers[l + 1].nodes_in);
  const std::size_t d[] = {3, 2};
  for (std::size_t l = 0; l < plan.depth(); ++l) {
    const PlanLayer& layer = plan.layers[l];
    for (std::size_t i = 0; i < layer.nodes_out.size(); ++i) {
      CHECK(layer.nodes_in[i] == layer.nodes_out[i]);
      CHECK(layer.p_hat.at(i, i) > 0.0);
      CHECK(layer.p_hat.row_nnz(i) >= 1);
      CHECK(layer.p_hat.row_nnz(i) <= d[l]);
      const auto cols = layer.p_hat.row_cols(i);
      CHECK(std::adjacent_find(cols.begin(), cols.end(), std::greater_equal<>()) == cols.end());
      std::set<NodeId> globals;
      for (NodeId c : cols) globals.insert(layer.nodes_in[c]);
      CHECK(globals.size() == cols.size());
    }
  }
}

TEST_CASE("plans are deterministic under a seed") {
  const Graph g = random_graph(30, 0.2, 2, 2, 5);
  const PropagationMatrix p = build_propagation(g);
  const std::vector<NodeId> batch{1, 2, 3};
  Rng a = make_rng(11), b = make_rng(11);
  const auto pa = build_receptive_fields(p, batch, config({2, 2}), a);
  const auto pb = build_receptive_fields(p, batch, config({2, 2}), b);
  for (std::size_t l = 0; l < pa.depth(); ++l) {
    CHECK(pa.layers[l].nodes_in == pb.layers[l].nodes_in);
    CHECK(pa.layers[l].p_hat == pb.layers[l].p_hat);
  }
}

TEST_CASE("empirical mean of sampled rows matches the analytic expectation") {
  const Graph g = random_graph(10, 0.4, 2, 2, 7);
  const PropagationMatrix p = build_propagation(g);
  for (SelfLoopWeighting w : {SelfLoopWeighting::kScaled, SelfLoopWeighting::kExact}) {
    const SamplerConfig cfg = config({3}, w);
    const NodeId u = 0;
    const std::size_t draws = 100000;
    std::vector<double> s(10, 0.0), s2(10, 0.0);
    Rng rng = make_rng(8);
    const std::vector<NodeId> batch{u};
    for (std::size_t k = 0; k < draws; ++k) {
      const auto plan = build_receptive_fields(p, batch, cfg, rng);
      const PlanLayer& l = plan.layers[0];
      for (std::size_t j = 0; j < l.p_hat.row_nnz(0); ++j) {
        const double v = l.p_hat.row_values(0)[j];
        const NodeId col = l.nodes_in[l.p_hat.row_cols(0)[j]];
        s[col] += v;
        s2[col] += v * v;
      }
    }
    const auto expected = expectation_of_p_hat(p, u, cfg);
    for (std::size_t v = 0; v < 10; ++v) {
      const double mean = s[v] / draws;
      const double se = std::sqrt(std::max(s2[v] / draws - mean * mean, 0.0) / draws);
      CHECK(std::abs(mean - expected[v]) <= 4 * se + 1e-12);
    }
  }
}

TEST_CASE("CVD scaling divides by the square root of the degree") {
  const std::vector<Edge> e{{0, 1}};
  const PropagationMatrix p = build_propagation(adjacency_from_edges(2, e));
  Rng rng = make_rng(9);
  const std::vector<NodeId> batch{0, 1};
  const auto plan = build_receptive_fields(p, batch, config({2}), rng);
  const auto bar = scale_for_cvd(plan, p);
  for (std::size_t k = 0; k < bar[0].nnz(); ++k)
    CHECK(bar[0].values()[k] == doctest::Approx(plan.layers[0].p_hat.values()[k] / std::sqrt(2.0)));

  std::vector<Edge> star;
  for (NodeId v = 1; v < 4; ++v) star.push_back({0, v});
  const PropagationMatrix ps = build_propagation(adjacency_from_edges(4, star));
  const std::vector<NodeId> hub{1};
  const auto splan = build_receptive_fields(ps, hub, config({2}), rng);
  const auto sbar = scale_for_cvd(splan, ps);
  for (std::size_t k = 0; k < sbar[0].nnz(); ++k) {
    const NodeId v = splan.layers[0].nodes_in[sbar[0].col_idx()[k]];
    const double expect = splan.layers[0].p_hat.values()[k] / (v == 0 ? 2.0 : std::sqrt(2.0));
    CHECK(sbar[0].values()[k] == doctest::Approx(expect));
  }
}

TEST_CASE("importance distribution and single-node draws") {
  const std::vector<Edge> e{{0, 1}};
  const PropagationMatrix p = build_propagation(adjacency_from_edges(2, e));
  const auto q = importance_distribution(p);
  CHECK(q[0] == doctest::Approx(0.5));
  CHECK(q[1] == doctest::Approx(0.5));

  const PropagationMatrix one = build_propagation(SparseMatrix(1, 1, {0, 0}, {}, {}));
  Rng rng = make_rng(10);
  const std::vector<NodeId> out{0};
  const PlanLayer l = sample_importance_layer(one, out, 1, rng);
  CHECK(l.p_hat.to_dense() == Matrix(1, 1, 1.0));
}

TEST_CASE("importance sampling is unbiased for P.H") {
  const Graph g = random_graph(12, 0.3, 1, 2, 12);
  const PropagationMatrix p = build_propagation(g);
  const Matrix h = vrgcn::testing::uniform_matrix(12, 2, 13);
  std::vector<NodeId> out(12);
  std::iota(out.begin(), out.end(), NodeId{0});
  const auto q = importance_distribution(p);
  const std::size_t draws = 100000;
  Matrix s(12, 2), s2(12, 2);
  Rng rng = make_rng(14);
  for (std::size_t k = 0; k < draws; ++k) {
    const PlanLayer l = sample_importance_layer(p, q, out, 4, rng);
    const Matrix est = kernels::spmm(l.p_hat, gather_rows(h, l.nodes_in));
    for (std::size_t i = 0; i < est.size(); ++i) {
      s.values()[i] += est.values()[i];
      s2.values()[i] += est.values()[i] * est.values()[i];
    }
  }
  const Matrix exact = kernels::spmm(p.matrix(), h);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double mean = s.values()[i] / draws;
    const double se = std::sqrt(std::max(s2.values()[i] / draws - mean * mean, 0.0) / draws);
    CHECK(std::abs(mean - exact.values()[i]) <= 4 * se + 1e-12);
  }
}

TEST_CASE("sampler config validation") {
  CHECK_THROWS_AS(config({0}).validate(), InputError);
}
