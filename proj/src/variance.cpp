#include "vrgcn/variance.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "parallel.hpp"
#include "vrgcn/kernels.hpp"
#include "vrgcn/trainer.hpp"

namespace vrgcn {

namespace {

constexpr std::size_t kChunk = 4096;

// Each chunk of draws owns its own stream, so results do not depend on the thread count.
template <class F>
std::vector<double> draw_values(std::size_t draws, std::uint64_t seed, F&& f) {
  std::vector<double> out(draws);
  const std::size_t chunks = (draws + kChunk - 1) / kChunk;
  detail::parallel_for(chunks, [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    const std::size_t end = std::min(draws, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) out[i] = f(rng);
  });
  return out;
}

// First d entries of `idx` become a uniform d-subset of its contents.
void partial_shuffle(std::vector<std::size_t>& idx, std::size_t d, Rng& rng) {
  for (std::size_t j = 0; j < d; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, idx.size() - 1);
    std::swap(idx[j], idx[pick(rng)]);
  }
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace

double analytic_sampling_variance(std::span<const double> x, std::size_t d) {
  const std::size_t n = x.size();
  require(n >= 1, "analytic_sampling_variance: empty neighbourhood");
  require(d >= 1 && d <= n, "analytic_sampling_variance: need 1 <= D <= n");
  if (n == 1) return 0.0;
  const double c = 1.0 - static_cast<double>(d - 1) / static_cast<double>(n - 1);
  double pairs = 0.0;
  for (double a : x)
    for (double b : x) pairs += (a - b) * (a - b);
  return c / (2.0 * static_cast<double>(d)) * pairs;
}

double analytic_sampling_variance(std::span<const double> x, std::span<const double> weights,
                                  std::size_t d) {
  require(x.size() == weights.size(), "analytic_sampling_variance: weights size mismatch");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = weights[i] * x[i];
  return analytic_sampling_variance(y, d);
}

double enumerate_subset_variance(std::span<const double> x, std::span<const double> weights,
                                 std::size_t d) {
  const std::size_t n = x.size();
  require(weights.size() == n, "enumerate_subset_variance: weights size mismatch");
  require(n >= 1 && d >= 1 && d <= n, "enumerate_subset_variance: need 1 <= D <= n");
  require(binomial(n, d) <= 1e6, "enumerate_subset_variance: more than 1e6 subsets");
  const double scale = static_cast<double>(n) / static_cast<double>(d);
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(d), true);
  std::vector<double> values;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (pick[i]) s += weights[i] * x[i];
    values.push_back(scale * s);
  } while (std::prev_permutation(pick.begin(), pick.end()));
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return var / static_cast<double>(values.size());
}

void NeighborhoodMoments::validate() const {
  require(!p.empty(), "NeighborhoodMoments: empty neighbourhood");
  require(mu.size() == p.size() && s.size() == p.size() && delta_mu.size() == p.size(),
          "NeighborhoodMoments: all vectors need n(u) entries");
  require(d >= 1 && d <= p.size(), "NeighborhoodMoments: need 1 <= D <= n");
  for (double v : s) require(v >= 0.0, "NeighborhoodMoments: dropout variances must be non-negative");
}

double NeighborhoodMoments::dropout_sum() const {
  double total = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) total += p[v] * p[v] * s[v];
  return total;
}

VarianceBreakdown table2_breakdown(Estimator estimator, const NeighborhoodMoments& in) {
  in.validate();
  const double su = in.dropout_sum();
  const double ratio = static_cast<double>(in.n()) / static_cast<double>(in.d);
  VarianceBreakdown b;
  b.estimator = estimator;
  switch (estimator) {
    case Estimator::kExact:
      b.vd = su;
      break;
    case Estimator::kNS:
      b.vns = analytic_sampling_variance(in.mu, in.p, in.d);
      b.vd = ratio * su;
      break;
    case Estimator::kCV:
      b.vns = analytic_sampling_variance(in.delta_mu, in.p, in.d);
      b.vd = (3.0 + ratio) * su;
      break;
    case Estimator::kCVD:
      b.vns = analytic_sampling_variance(in.delta_mu, in.p, in.d);
      b.vd = su;
      break;
    case Estimator::kIS:
      throw InputError("table2_breakdown: no closed form for IS");
  }
  b.total = b.vns + b.vd;
  return b;
}

double cv_dropout_variance_iid_history(const NeighborhoodMoments& in) {
  in.validate();
  const double ratio = static_cast<double>(in.n()) / static_cast<double>(in.d);
  return (2.0 * ratio - 1.0) * in.dropout_sum();
}

McVariance summarize(std::span<const double> values) {
  McVariance r;
  r.draws = values.size();
  require(r.draws >= 2, "summarize: need at least two values");
  const double n = static_cast<double>(r.draws);
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d2 = (v - r.mean) * (v - r.mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  r.variance = m2 / (n - 1.0);
  m2 /= n;
  m4 /= n;
  r.stderr_variance = std::sqrt(std::max(0.0, m4 - m2 * m2) / n);
  return r;
}

McVariance estimator_variance_monte_carlo(Estimator estimator, const NeighborhoodMoments& in, std::size_t draws,
                              std::uint64_t seed) {
  in.validate();
  require(estimator != Estimator::kIS, "estimator_variance_monte_carlo: IS has no table row");
  const std::size_t n = in.n();
  const double ratio = static_cast<double>(n) / static_cast<double>(in.d);
  const double root_ratio = std::sqrt(ratio);
  std::vector<double> sd(n), mu_bar(n);
  for (std::size_t v = 0; v < n; ++v) {
    sd[v] = std::sqrt(in.s[v]);
    mu_bar[v] = in.mu[v] - in.delta_mu[v];
  }
  auto one = [&](Rng& rng) {
    std::normal_distribution<double> normal;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<double> h(n), h_bar(n);
    for (std::size_t v = 0; v < n; ++v) h[v] = in.mu[v] + sd[v] * normal(rng);
    for (std::size_t v = 0; v < n; ++v) h_bar[v] = mu_bar[v] + sd[v] * normal(rng);
    partial_shuffle(idx, in.d, rng);
    double sampled = 0.0, recovery = 0.0;
    switch (estimator) {
      case Estimator::kExact:
        for (std::size_t v = 0; v < n; ++v) recovery += in.p[v] * h[v];
        return recovery;
      case Estimator::kNS:
        for (std::size_t j = 0; j < in.d; ++j) sampled += in.p[idx[j]] * h[idx[j]];
        return ratio * sampled;
      case Estimator::kCV:
        for (std::size_t j = 0; j < in.d; ++j) sampled += in.p[idx[j]] * (h[idx[j]] - h_bar[idx[j]]);
        for (std::size_t v = 0; v < n; ++v) recovery += in.p[v] * h_bar[v];
        return ratio * sampled + recovery;
      default: {
        double noise = 0.0;
        for (std::size_t j = 0; j < in.d; ++j) {
          const std::size_t v = idx[j];
          noise += in.p[v] * (h[v] - in.mu[v]);
          sampled += in.p[v] * in.delta_mu[v];
        }
        for (std::size_t v = 0; v < n; ++v) recovery += in.p[v] * mu_bar[v];
        return root_ratio * noise + ratio * sampled + recovery;
      }
    }
  };
  return summarize(draw_values(draws, seed, one));
}

McCheck subset_sum_variance_check(std::span<const double> var, std::size_t d,
                                  std::size_t draws, std::uint64_t seed) {
  const std::size_t n = var.size();
  require(n >= 1 && d >= 1 && d <= n, "subset_sum_variance_check: need 1 <= D <= n");
  const double ratio = static_cast<double>(n) / static_cast<double>(d);
  auto one = [&](Rng& rng) {
    std::normal_distribution<double> normal;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<double> x(n);
    for (std::size_t v = 0; v < n; ++v) x[v] = std::sqrt(var[v]) * normal(rng);
    partial_shuffle(idx, d, rng);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[idx[j]];
    return ratio * s;
  };
  const McVariance mc = summarize(draw_values(draws, seed, one));
  McCheck check;
  check.estimate = mc.variance;
  check.expected = ratio * std::accumulate(var.begin(), var.end(), 0.0);
  check.se = mc.stderr_variance;
  return check;
}

McCheck variance_split_check(const NeighborhoodMoments& in, std::size_t draws, std::uint64_t seed) {
  in.validate();
  const std::size_t n = in.n();
  const double ratio = static_cast<double>(n) / static_cast<double>(in.d);
  std::vector<double> f(draws), g(draws);
  const std::size_t chunks = (draws + kChunk - 1) / kChunk;
  detail::parallel_for(chunks, [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    std::normal_distribution<double> normal;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = c * kChunk; i < std::min(draws, (c + 1) * kChunk); ++i) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::vector<double> eps(n);
      for (double& e : eps) e = normal(rng);
      partial_shuffle(idx, in.d, rng);
      double fi = 0.0, gi = 0.0;
      for (std::size_t j = 0; j < in.d; ++j) {
        const std::size_t v = idx[j];
        fi += in.p[v] * std::sqrt(in.s[v]) * eps[v];
        gi += in.p[v] * in.delta_mu[v];
      }
      f[i] = std::sqrt(ratio) * fi;
      g[i] = ratio * gi;
    }
  });
  std::vector<double> fg(draws);
  for (std::size_t i = 0; i < draws; ++i) fg[i] = f[i] + g[i];
  const McVariance vf = summarize(f), vg = summarize(g), vfg = summarize(fg);
  McCheck check;
  check.estimate = vfg.variance;
  check.expected = vf.variance + vg.variance;
  check.se = std::sqrt(vf.stderr_variance * vf.stderr_variance +
                       vg.stderr_variance * vg.stderr_variance +
                       vfg.stderr_variance * vfg.stderr_variance);
  return check;
}

GradientMoments sample_gradients(const Graph& graph, const PropagationMatrix& p,
                                 const ModelParams& params, const GradientStudyConfig& cfg) {
  params.validate();
  const EstimatorKind& est = cfg.estimator;
  const bool pp = est.preprocess_first_layer;
  require(cfg.draws >= 2, "sample_gradients: need at least two draws");
  require(cfg.minibatch_size >= 1, "sample_gradients: minibatch_size must be >= 1");
  require(!graph.splits.train.empty(), "sample_gradients: empty training split");
  require(cfg.samples_per_layer.size() == graph_layers(params.num_layers(), pp),
          "sample_gradients: samples_per_layer needs one entry per graph layer");
  require(est.dropout_rate >= 0.0 && est.dropout_rate < 1.0,
          "sample_gradients: dropout_rate must lie in [0, 1)");

  SamplerConfig sampler;
  sampler.samples_per_layer = cfg.samples_per_layer;
  sampler.seed = cfg.seed;
  sampler.mode = sampler_mode_for(est.kind);
  sampler.self_weighting = cfg.self_weighting;
  sampler.validate();

  const Matrix x = pp ? preprocess_input(p, graph.features) : graph.features;
  HistoryStore history = make_history(graph.num_nodes, params);
  if (est.kind == Estimator::kCV || est.kind == Estimator::kCVD)
    seed_exact_history(history, p, x, params, pp);
  std::vector<bool> is_train(graph.num_nodes, false);
  for (NodeId v : graph.splits.train) is_train[v] = true;
  const std::size_t batch = std::min(cfg.minibatch_size, graph.splits.train.size());
  const std::size_t layers = params.num_layers();

  auto collect = [](ForwardPass& pass, Var loss) {
    pass.tape.backward(loss);
    std::vector<Matrix> g;
    for (Var w : pass.weights) g.push_back(pass.tape.grad(w));
    return g;
  };

  std::vector<std::vector<Matrix>> samples(cfg.draws);
  detail::parallel_for(cfg.draws, [&](std::size_t d) {
    const std::uint64_t draw_seed = derive_seed(cfg.seed, d);
    Rng batch_rng = make_rng(draw_seed, 0);
    Rng plan_rng = make_rng(draw_seed, 1);
    Rng dropout_rng = make_rng(draw_seed, 2);
    std::vector<NodeId> nodes = graph.splits.train;
    for (std::size_t j = 0; j < batch; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, nodes.size() - 1);
      std::swap(nodes[j], nodes[pick(batch_rng)]);
    }
    nodes.resize(batch);
    const ReceptiveFieldPlan plan = build_receptive_fields(p, nodes, sampler, plan_rng);
    ForwardOptions opts;
    opts.preprocessed = pp;
    opts.keep_prob = est.keep_prob();
    opts.dropout_rng = &dropout_rng;
    opts.cvd_scaling = est.cvd_scaling;
    ForwardPass pass = est.kind == Estimator::kCV    ? forward_cv(p, plan, x, params, history, opts)
                       : est.kind == Estimator::kCVD ? forward_cvd(p, plan, x, params, history, opts)
                                                     : forward_ns(plan, x, params, opts);
    auto [loss, count] = attach_loss(pass, graph.labels, is_train);
    samples[d] = collect(pass, loss);
  });

  GradientMoments out;
  out.draws = cfg.draws;
  if (est.keep_prob() == 1.0) {
    out.reference = exact_loss_and_gradient(p, graph.features, graph.labels, params,
                                            graph.splits.train)
                        .gradients;
  } else {
    std::vector<std::vector<Matrix>> full(cfg.draws);
    detail::parallel_for(cfg.draws, [&](std::size_t d) {
      Rng dropout_rng = make_rng(derive_seed(cfg.seed, d), 3);
      ForwardOptions opts;
      opts.keep_prob = est.keep_prob();
      opts.dropout_rng = &dropout_rng;
      ForwardPass pass = forward_exact(p, graph.features, params, opts);
      auto [loss, count] = attach_loss(pass, graph.labels, is_train);
      full[d] = collect(pass, loss);
    });
    for (std::size_t l = 0; l < layers; ++l) {
      Matrix acc(params.weights[l].rows(), params.weights[l].cols());
      for (const auto& g : full) acc += g[l];
      out.reference.push_back(acc * (1.0 / static_cast<double>(cfg.draws)));
    }
  }

  const double n = static_cast<double>(cfg.draws);
  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix& w = params.weights[l];
    Matrix mean(w.rows(), w.cols()), m2(w.rows(), w.cols());
    for (const auto& g : samples) mean += g[l];
    mean *= 1.0 / n;
    for (const auto& g : samples) {
      const Matrix diff = g[l] - mean;
      m2 += hadamard(diff, diff);
    }
    Matrix sd(w.rows(), w.cols()), se(w.rows(), w.cols());
    for (std::size_t i = 0; i < sd.size(); ++i) {
      sd.values()[i] = std::sqrt(m2.values()[i] / (n - 1.0));
      se.values()[i] = sd.values()[i] / std::sqrt(n);
    }
    out.mean.push_back(std::move(mean));
    out.stddev.push_back(std::move(sd));
    out.stderr_mean.push_back(std::move(se));
  }
  return out;
}

GradientBiasStd gradient_bias_std(const GradientMoments& moments, const ModelParams& params) {
  GradientBiasStd out;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const Matrix& w = params.weights[l];
    double w_abs = 0.0;
    for (double v : w.values()) w_abs += std::abs(v);
    w_abs /= static_cast<double>(w.size());
    require(w_abs > 0.0, "gradient_bias_std: all-zero weight matrix");
    double bias = 0.0, sd = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      bias += std::abs(moments.mean[l].values()[i] - moments.reference[l].values()[i]);
      sd += moments.stddev[l].values()[i];
    }
    const double entries = static_cast<double>(w.size());
    out.bias.push_back(bias / entries / w_abs);
    out.std.push_back(sd / entries / w_abs);
  }
  return out;
}

GradientBiasStd gradient_bias_std(const Graph& graph, const PropagationMatrix& p,
                                  const ModelParams& params, const GradientStudyConfig& cfg) {
  return gradient_bias_std(sample_gradients(graph, p, params, cfg), params);
}

namespace {

bool degenerate(double var, double mean) { return var <= 1e-20 * (1.0 + mean * mean); }

}  // namespace

std::vector<LayerCorrelation> correlation_diagnostics(const PropagationMatrix& p,
                                                      const Matrix& x, const ModelParams& params,
                                                      const CorrelationConfig& cfg) {
  params.validate();
  require(cfg.dropout_rate > 0.0 && cfg.dropout_rate < 1.0,
          "correlation_diagnostics: needs a dropout rate in (0, 1)");
  require(cfg.samples >= 2, "correlation_diagnostics: need at least two samples");
  const std::size_t layers = params.num_layers();
  require(layers >= 2, "correlation_diagnostics: model has no hidden layer");
  require(cfg.samples_per_layer.size() == graph_layers(layers, cfg.preprocessed),
          "correlation_diagnostics: samples_per_layer needs one entry per graph layer");
  const std::size_t v_count = p.num_nodes();
  const double keep = 1.0 - cfg.dropout_rate;
  const Matrix input = cfg.preprocessed ? preprocess_input(p, x) : x;

  SamplerConfig sampler;
  sampler.samples_per_layer = cfg.samples_per_layer;
  sampler.seed = cfg.seed;
  std::vector<NodeId> all(v_count);
  std::iota(all.begin(), all.end(), NodeId{0});
  Rng plan_rng = make_rng(cfg.seed, 0);
  const ReceptiveFieldPlan plan = build_receptive_fields(p, all, sampler, plan_rng);

  // acts[l - 1][s] = H^(l) of sample s.
  std::vector<std::vector<Matrix>> acts(layers - 1, std::vector<Matrix>(cfg.samples));
  detail::parallel_for(cfg.samples, [&](std::size_t s) {
    Rng rng = make_rng(derive_seed(cfg.seed, s), 1);
    Matrix h = input;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      Matrix u = (l == 0 && cfg.preprocessed) ? h : kernels::spmm(p.matrix(), h);
      u = DropoutMask::sample(u.rows(), u.cols(), keep, rng).apply(u);
      h = kernels::gemm(u, params.weights[l]);
      for (double& v : h.values()) v = std::max(v, 0.0);
      acts[l][s] = h;
    }
  });

  const double n = static_cast<double>(cfg.samples);
  std::vector<LayerCorrelation> out;
  for (std::size_t l = 1; l < layers; ++l) {
    const auto& samples = acts[l - 1];
    const std::size_t dims = samples.front().cols();
    Matrix mean(v_count, dims), var(v_count, dims);
    for (const Matrix& h : samples) mean += h;
    mean *= 1.0 / n;
    std::vector<Matrix> centered;
    centered.reserve(samples.size());
    for (const Matrix& h : samples) {
      centered.push_back(h - mean);
      var += hadamard(centered.back(), centered.back());
    }
    var *= 1.0 / (n - 1.0);
    auto corr = [&](NodeId a, std::size_t i, NodeId b, std::size_t j) {
      double c = 0.0;
      for (const Matrix& h : centered) c += h(a, i) * h(b, j);
      return c / (n - 1.0) / std::sqrt(var(a, i) * var(b, j));
    };
    auto usable = [&](NodeId a, std::size_t i) { return !degenerate(var(a, i), mean(a, i)); };

    LayerCorrelation lc;
    lc.layer = l;
    double feature_total = 0.0;
    for (NodeId v = 0; v < v_count; ++v)
      for (std::size_t i = 0; i < dims; ++i)
        for (std::size_t j = i + 1; j < dims; ++j) {
          if (!usable(v, i) || !usable(v, j)) {
            ++lc.excluded_pairs;
            continue;
          }
          feature_total += corr(v, i, v, j);
          ++lc.feature_terms;
        }
    lc.feature_correlation = lc.feature_terms ? feature_total / static_cast<double>(lc.feature_terms) : 0.0;

    const PlanLayer& layer = plan.layers[cfg.preprocessed ? l - 1 : l];
    double neighbor_total = 0.0;
    for (std::size_t r = 0; r < layer.nodes_out.size(); ++r) {
      const auto cols = layer.p_hat.row_cols(r);
      if (cols.size() < 2) continue;
      for (std::size_t d = 0; d < dims; ++d) {
        double avg = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < cols.size(); ++a)
          for (std::size_t b = a + 1; b < cols.size(); ++b) {
            const NodeId va = layer.nodes_in[cols[a]], vb = layer.nodes_in[cols[b]];
            if (!usable(va, d) || !usable(vb, d)) {
              ++lc.excluded_pairs;
              continue;
            }
            avg += corr(va, d, vb, d);
            ++pairs;
          }
        if (pairs == 0) continue;
        neighbor_total += avg / static_cast<double>(pairs);
        ++lc.neighbor_terms;
      }
    }
    lc.neighbor_correlation =
        lc.neighbor_terms ? neighbor_total / static_cast<double>(lc.neighbor_terms) : 0.0;
    out.push_back(lc);
  }
  return out;
}

void write_variance_csv(std::ostream& out, std::span<const VarianceRow> rows) {
  const auto old_precision = out.precision(17);
  out << "case,estimator,layer,bias,std,vns,vd\n";
  auto cell = [&](double v) {
    out << ',';
    if (!std::isnan(v)) out << v;
  };
  for (const VarianceRow& r : rows) {
    out << r.case_id << ',' << r.estimator << ',' << r.layer;
    for (double v : {r.bias, r.stddev, r.vns, r.vd}) cell(v);
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace vrgcn
