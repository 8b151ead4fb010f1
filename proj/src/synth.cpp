#include "vrgcn/synth.hpp"

#include <algorithm>
#include <numeric>

#include "vrgcn/random.hpp"

namespace vrgcn {

void SbmConfig::validate() const {
  require(nodes >= 2, "SbmConfig: need at least two nodes");
  require(communities >= 2 && communities <= nodes, "SbmConfig: need 2 <= communities <= nodes");
  require(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0,
          "SbmConfig: edge probabilities must lie in [0, 1]");
  require(p_in > p_out, "SbmConfig: p_in must exceed p_out");
  require(feature_dim >= 1, "SbmConfig: feature_dim must be >= 1");
  require(feature_noise >= 0.0, "SbmConfig: feature_noise must be non-negative");
  require(train_fraction > 0.0 && validation_fraction >= 0.0 &&
              train_fraction + validation_fraction <= 1.0,
          "SbmConfig: bad split fractions");
}

Graph generate_sbm(const SbmConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, 0);
  std::bernoulli_distribution in_edge(cfg.p_in), out_edge(cfg.p_out);
  std::normal_distribution<double> normal;

  Graph g;
  g.num_nodes = cfg.nodes;
  std::vector<int> community(cfg.nodes);
  for (std::size_t v = 0; v < cfg.nodes; ++v) community[v] = static_cast<int>(v % cfg.communities);

  std::vector<Edge> edges;
  for (NodeId u = 0; u < cfg.nodes; ++u)
    for (NodeId v = u + 1; v < cfg.nodes; ++v)
      if (community[u] == community[v] ? in_edge(rng) : out_edge(rng)) edges.push_back({u, v, 1.0});
  g.adjacency = adjacency_from_edges(cfg.nodes, edges);

  Matrix centroids(cfg.communities, cfg.feature_dim);
  for (double& c : centroids.values()) c = normal(rng);
  g.features = Matrix(cfg.nodes, cfg.feature_dim);
  for (std::size_t v = 0; v < cfg.nodes; ++v)
    for (std::size_t d = 0; d < cfg.feature_dim; ++d)
      g.features(v, d) = centroids(community[v], d) + cfg.feature_noise * normal(rng);

  g.labels.num_classes = cfg.communities;
  g.labels.classes = community;

  std::vector<NodeId> order(cfg.nodes);
  std::iota(order.begin(), order.end(), NodeId{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.train_fraction * cfg.nodes));
  const auto n_val = std::min(cfg.nodes - n_train,
                              static_cast<std::size_t>(cfg.validation_fraction * cfg.nodes));
  g.splits.train.assign(order.begin(), order.begin() + n_train);
  g.splits.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  g.splits.test.assign(order.begin() + n_train + n_val, order.end());
  for (auto* split : {&g.splits.train, &g.splits.validation, &g.splits.test})
    std::sort(split->begin(), split->end());
  g.validate();
  return g;
}

Graph random_graph(std::size_t nodes, double edge_prob, std::size_t feature_dim,
                   std::size_t classes, std::uint64_t seed) {
  require(nodes >= 1 && feature_dim >= 1 && classes >= 1, "random_graph: empty dimensions");
  Rng rng = make_rng(seed, 0);
  std::bernoulli_distribution edge(edge_prob);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  Graph g;
  g.num_nodes = nodes;
  std::vector<Edge> edges;
  for (NodeId u = 0; u < nodes; ++u)
    for (NodeId v = u + 1; v < nodes; ++v)
      if (edge(rng)) edges.push_back({u, v, 1.0});
  g.adjacency = adjacency_from_edges(nodes, edges);
  g.features = Matrix(nodes, feature_dim);
  for (double& x : g.features.values()) x = normal(rng);
  g.labels.num_classes = classes;
  g.labels.classes.resize(nodes);
  for (int& c : g.labels.classes) c = label(rng);
  g.splits.train.resize(nodes);
  std::iota(g.splits.train.begin(), g.splits.train.end(), NodeId{0});
  g.validate();
  return g;
}

}  // namespace vrgcn
