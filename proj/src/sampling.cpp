#include "vrgcn/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace vrgcn {
namespace {

// Maps global node ids to local column positions for one layer.
class LocalIndex {
 public:
  explicit LocalIndex(std::size_t num_nodes) : pos_(num_nodes, kAbsent) {}

  NodeId insert(NodeId v, std::vector<NodeId>& nodes) {
    if (pos_[v] == kAbsent) {
      pos_[v] = static_cast<NodeId>(nodes.size());
      nodes.push_back(v);
      touched_.push_back(v);
    }
    return pos_[v];
  }

  void reset() {
    for (NodeId v : touched_) pos_[v] = kAbsent;
    touched_.clear();
  }

 private:
  static constexpr NodeId kAbsent = static_cast<NodeId>(-1);
  std::vector<NodeId> pos_;
  std::vector<NodeId> touched_;
};

void check_minibatch(const PropagationMatrix& p, std::span<const NodeId> minibatch) {
  require(!minibatch.empty(), "minibatch must be non-empty");
  std::vector<bool> seen(p.num_nodes(), false);
  for (NodeId v : minibatch) {
    require(v < p.num_nodes(), "minibatch node id out of range");
    require(!seen[v], "minibatch node ids must be distinct");
    seen[v] = true;
  }
}

double self_weight(const PropagationMatrix& p, NodeId u) { return p.matrix().at(u, u); }

PlanLayer sample_neighbor_layer(const PropagationMatrix& p, const std::vector<NodeId>& nodes_out,
                                std::size_t samples, SamplerMode mode,
                                SelfLoopWeighting weighting, LocalIndex& index, Rng& rng) {
  PlanLayer layer;
  layer.nodes_out = nodes_out;
  layer.nodes_in.reserve(nodes_out.size() * std::max<std::size_t>(samples, 1));
  for (NodeId u : nodes_out) index.insert(u, layer.nodes_in);

  std::vector<Triplet> triplets;
  std::vector<NodeId> candidates;
  std::vector<double> candidate_weights;
  const SparseMatrix& pm = p.matrix();
  for (std::size_t i = 0; i < nodes_out.size(); ++i) {
    const NodeId u = nodes_out[i];
    const auto row = static_cast<NodeId>(i);
    auto cols = pm.row_cols(u);
    auto vals = pm.row_values(u);
    if (mode == SamplerMode::kFull) {
      for (std::size_t k = 0; k < cols.size(); ++k)
        triplets.push_back({row, index.insert(cols[k], layer.nodes_in), vals[k]});
      continue;
    }
    const double n = static_cast<double>(p.degree(u));
    const double d = static_cast<double>(samples);
    candidates.clear();
    candidate_weights.clear();
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] == u) continue;
      candidates.push_back(cols[k]);
      candidate_weights.push_back(vals[k]);
    }
    const std::size_t available = candidates.size();
    const std::size_t picks = std::min(samples - 1, available);

    double self_scale = n / d;
    double neighbor_scale = n / d;
    if (weighting == SelfLoopWeighting::kExact) {
      self_scale = 1.0;
      neighbor_scale = picks > 0 ? static_cast<double>(available) / static_cast<double>(picks) : 0.0;
    }
    triplets.push_back({row, index.insert(u, layer.nodes_in), self_weight(p, u) * self_scale});

    // Partial Fisher-Yates: the first `picks` slots become a uniform subset.
    for (std::size_t j = 0; j < picks; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, available - 1);
      const std::size_t s = pick(rng);
      std::swap(candidates[j], candidates[s]);
      std::swap(candidate_weights[j], candidate_weights[s]);
      triplets.push_back(
          {row, index.insert(candidates[j], layer.nodes_in), candidate_weights[j] * neighbor_scale});
    }
  }
  index.reset();
  layer.p_hat = SparseMatrix::from_triplets(layer.nodes_out.size(), layer.nodes_in.size(),
                                            std::move(triplets));
  return layer;
}

}  // namespace

void SamplerConfig::validate() const {
  for (std::size_t d : samples_per_layer) require(d >= 1, "SamplerConfig: D^(l) must be >= 1");
}

ReceptiveFieldPlan build_receptive_fields(const PropagationMatrix& p,
                                          std::span<const NodeId> minibatch,
                                          const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  check_minibatch(p, minibatch);
  ReceptiveFieldPlan plan;
  plan.minibatch.assign(minibatch.begin(), minibatch.end());
  const std::size_t depth = cfg.samples_per_layer.size();
  plan.layers.resize(depth);

  std::vector<NodeId> current = plan.minibatch;
  if (cfg.mode == SamplerMode::kImportance) {
    const std::vector<double> q = importance_distribution(p);
    for (std::size_t l = depth; l-- > 0;) {
      plan.layers[l] = sample_importance_layer(p, q, current, cfg.samples_per_layer[l], rng);
      current = plan.layers[l].nodes_in;
    }
    return plan;
  }
  LocalIndex index(p.num_nodes());
  for (std::size_t l = depth; l-- > 0;) {
    plan.layers[l] = sample_neighbor_layer(p, current, cfg.samples_per_layer[l], cfg.mode,
                                           cfg.self_weighting, index, rng);
    current = plan.layers[l].nodes_in;
  }
  return plan;
}

std::vector<double> expectation_of_p_hat(const PropagationMatrix& p, NodeId u,
                                         const SamplerConfig& cfg, std::size_t layer) {
  require(u < p.num_nodes(), "expectation_of_p_hat: node id out of range");
  require(layer < cfg.samples_per_layer.size(), "expectation_of_p_hat: layer out of range");
  cfg.validate();
  std::vector<double> row(p.num_nodes(), 0.0);
  const SparseMatrix& pm = p.matrix();
  auto cols = pm.row_cols(u);
  auto vals = pm.row_values(u);
  if (cfg.mode != SamplerMode::kNeighbor) {
    for (std::size_t k = 0; k < cols.size(); ++k) row[cols[k]] = vals[k];
    return row;
  }
  const double n = static_cast<double>(p.degree(u));
  const double d = static_cast<double>(cfg.samples_per_layer[layer]);
  const std::size_t available = p.degree(u) - 1;
  const std::size_t picks = std::min(cfg.samples_per_layer[layer] - 1, available);
  const double inclusion =
      available > 0 ? static_cast<double>(picks) / static_cast<double>(available) : 0.0;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] == u) {
      row[u] = cfg.self_weighting == SelfLoopWeighting::kScaled ? vals[k] * n / d : vals[k];
    } else if (cfg.self_weighting == SelfLoopWeighting::kScaled) {
      row[cols[k]] = vals[k] * (n / d) * inclusion;
    } else {
      row[cols[k]] = picks > 0 ? vals[k] : 0.0;
    }
  }
  return row;
}

std::vector<SparseMatrix> scale_for_cvd(const ReceptiveFieldPlan& plan, const PropagationMatrix& p,
                                        CvdScaling scaling) {
  std::vector<SparseMatrix> out;
  out.reserve(plan.depth());
  for (const PlanLayer& layer : plan.layers) {
    if (scaling == CvdScaling::kDivSqrtDegree) {
      out.push_back(layer.p_hat.map_values([&](std::size_t, NodeId c, double v) {
        return v / std::sqrt(static_cast<double>(p.degree(layer.nodes_in[c])));
      }));
    } else {
      out.push_back(layer.p_hat.map_values([&](std::size_t r, NodeId c, double v) {
        const double exact = p.matrix().at(layer.nodes_out[r], layer.nodes_in[c]);
        return exact > 0.0 && v > 0.0 ? std::sqrt(v * exact) : 0.0;
      }));
    }
  }
  return out;
}

std::vector<double> importance_distribution(const PropagationMatrix& p) {
  const SparseMatrix& pm = p.matrix();
  std::vector<double> q(p.num_nodes(), 0.0);
  for (std::size_t u = 0; u < pm.rows(); ++u) {
    auto cols = pm.row_cols(u);
    auto vals = pm.row_values(u);
    for (std::size_t k = 0; k < cols.size(); ++k) q[cols[k]] += vals[k] * vals[k];
  }
  double total = 0.0;
  for (double v : q) total += v;
  for (double& v : q) v /= total;
  return q;
}

PlanLayer sample_importance_layer(const PropagationMatrix& p, std::span<const NodeId> nodes_out,
                                  std::size_t samples, Rng& rng) {
  const std::vector<double> q = importance_distribution(p);
  return sample_importance_layer(p, q, nodes_out, samples, rng);
}

PlanLayer sample_importance_layer(const PropagationMatrix& p, std::span<const double> q,
                                  std::span<const NodeId> nodes_out, std::size_t samples,
                                  Rng& rng) {
  require(samples >= 1, "sample_importance_layer: S must be >= 1");
  require(q.size() == p.num_nodes(), "sample_importance_layer: q has wrong length");
  std::discrete_distribution<NodeId> draw(q.begin(), q.end());
  std::vector<std::size_t> counts(p.num_nodes(), 0);
  for (std::size_t s = 0; s < samples; ++s) ++counts[draw(rng)];

  PlanLayer layer;
  layer.nodes_out.assign(nodes_out.begin(), nodes_out.end());
  std::vector<NodeId> local(p.num_nodes(), 0);
  for (std::size_t v = 0; v < counts.size(); ++v) {
    if (counts[v] == 0) continue;
    local[v] = static_cast<NodeId>(layer.nodes_in.size());
    layer.nodes_in.push_back(static_cast<NodeId>(v));
  }
  std::vector<Triplet> triplets;
  const SparseMatrix& pm = p.matrix();
  const double s_total = static_cast<double>(samples);
  for (std::size_t i = 0; i < layer.nodes_out.size(); ++i) {
    const NodeId u = layer.nodes_out[i];
    require(u < p.num_nodes(), "sample_importance_layer: node id out of range");
    auto cols = pm.row_cols(u);
    auto vals = pm.row_values(u);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const std::size_t c = counts[cols[k]];
      if (c == 0) continue;
      triplets.push_back({static_cast<NodeId>(i), local[cols[k]],
                          static_cast<double>(c) * vals[k] / (s_total * q[cols[k]])});
    }
  }
  layer.p_hat = SparseMatrix::from_triplets(layer.nodes_out.size(), layer.nodes_in.size(),
                                            std::move(triplets));
  return layer;
}

}  // namespace vrgcn
