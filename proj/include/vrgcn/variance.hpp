#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vrgcn/graph.hpp"
#include "vrgcn/model.hpp"
#include "vrgcn/sampling.hpp"

namespace vrgcn {

/// Variance of (n/D)·Σ_{v∈S} x_v over uniform D-subsets S of the n values, in
/// closed form: C/(2D)·Σ_{v1,v2}(x_v1 - x_v2)² with C = 1 - (D-1)/(n-1).
/// A single value (n = 1) has variance 0.
double analytic_sampling_variance(std::span<const double> x, std::size_t d);
/// Same with x_v replaced by weights_v·x_v.
double analytic_sampling_variance(std::span<const double> x, std::span<const double> weights,
                                  std::size_t d);

/// Brute force over all C(n, D) subsets (at most 1e6 of them).
double enumerate_subset_variance(std::span<const double> x, std::span<const double> weights,
                                 std::size_t d);

/// Inputs of one aggregated output node u: P_uv, mean μ_v, dropout variance s_v and
/// mean drift Δμ_v = μ_v - μ̄_v for each v in n(u), plus the sample count D.
struct NeighborhoodMoments {
  std::vector<double> p;
  std::vector<double> mu;
  std::vector<double> s;
  std::vector<double> delta_mu;
  std::size_t d = 1;

  std::size_t n() const noexcept { return p.size(); }
  void validate() const;
  /// S_u = Σ_v P_uv² s_v.
  double dropout_sum() const;
};

struct VarianceBreakdown {
  Estimator estimator = Estimator::kExact;
  double vns = 0.0;
  double vd = 0.0;
  double total = 0.0;
};

/// Closed-form VNS/VD for Exact, NS, CV and CVD. The CV dropout term is the
/// published (3 + n/D)·S_u.
VarianceBreakdown table2_breakdown(Estimator estimator, const NeighborhoodMoments& in);

/// CV dropout variance derived directly for a history that is an i.i.d. copy:
/// (2n/D - 1)·S_u.
double cv_dropout_variance_iid_history(const NeighborhoodMoments& in);

/// A Monte-Carlo variance estimate with the standard error of that estimate.
struct McVariance {
  double mean = 0.0;
  double variance = 0.0;
  double stderr_variance = 0.0;
  std::size_t draws = 0;
};

/// |estimate - expected| <= k·se.
inline bool within_se(double estimate, double expected, double se, double k = 4.0) {
  return std::abs(estimate - expected) <= k * se;
}

/// Sample moments of `values` (mean, unbiased variance, SE of the variance
/// from the fourth central moment).
McVariance summarize(std::span<const double> values);

/// Simulates one estimator row: h_v ~ N(μ_v, s_v), an independent history copy
/// h̄_v ~ N(μ_v - Δμ_v, s_v), and a uniform D-subset of n(u). The CVD zero-mean
/// term uses the √(n/D)·P_uv coefficient.
McVariance estimator_variance_monte_carlo(Estimator estimator, const NeighborhoodMoments& in, std::size_t draws,
                              std::uint64_t seed);

/// Zero-mean uncorrelated x_v with variances `var`: the subset estimator has
/// variance (n/D)·Σ var_v.
struct McCheck {
  double estimate = 0.0;
  double expected = 0.0;
  double se = 0.0;
  bool within(double k = 4.0) const { return within_se(estimate, expected, se, k); }
};
McCheck subset_sum_variance_check(std::span<const double> var, std::size_t d,
                                  std::size_t draws, std::uint64_t seed);

/// Var[f + g] against Var[f] + Var[g] for the CVD split f = zero-mean dropout
/// term, g = mean-drift sampling term.
McCheck variance_split_check(const NeighborhoodMoments& in, std::size_t draws, std::uint64_t seed);

struct GradientStudyConfig {
  EstimatorKind estimator;
  std::vector<std::size_t> samples_per_layer{2, 2};
  SelfLoopWeighting self_weighting = SelfLoopWeighting::kExact;
  std::size_t minibatch_size = 4;
  std::size_t draws = 1000;
  std::uint64_t seed = 0;
};

/// Per-layer gradient statistics over independent (plan, mask, minibatch) draws.
/// `reference` is the full-batch exact gradient over the training nodes, averaged
/// over dropout masks when the dropout rate is positive. History for CV/CVD is
/// seeded with exact no-dropout activations.
struct GradientMoments {
  std::vector<Matrix> reference;
  std::vector<Matrix> mean;
  std::vector<Matrix> stderr_mean;
  std::vector<Matrix> stddev;
  std::size_t draws = 0;
};

GradientMoments sample_gradients(const Graph& graph, const PropagationMatrix& p,
                                 const ModelParams& params, const GradientStudyConfig& cfg);

struct GradientBiasStd {
  std::vector<double> bias;  // mean |E ĝ - ∇L| / mean |W|, per layer
  std::vector<double> std;   // mean per-entry std / mean |W|, per layer
};

GradientBiasStd gradient_bias_std(const Graph& graph, const PropagationMatrix& p,
                                  const ModelParams& params, const GradientStudyConfig& cfg);
GradientBiasStd gradient_bias_std(const GradientMoments& moments, const ModelParams& params);

struct CorrelationConfig {
  bool preprocessed = false;
  double dropout_rate = 0.5;
  /// Neighbour sets come from one sampled plan over all nodes.
  std::vector<std::size_t> samples_per_layer{2, 2};
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
};

struct LayerCorrelation {
  std::size_t layer = 0;
  double feature_correlation = 0.0;
  double neighbor_correlation = 0.0;
  std::size_t feature_terms = 0;
  std::size_t neighbor_terms = 0;
  std::size_t excluded_pairs = 0;  // pairs with a zero-variance member
};

/// Average feature and neighbour correlation of every hidden layer H^(1..L-1),
/// over `samples` full-graph forwards with fresh dropout masks.
std::vector<LayerCorrelation> correlation_diagnostics(const PropagationMatrix& p,
                                                      const Matrix& x, const ModelParams& params,
                                                      const CorrelationConfig& cfg);

struct VarianceRow {
  std::string case_id;
  std::string estimator;
  std::size_t layer = 0;
  double bias = std::nan("");
  double stddev = std::nan("");
  double vns = std::nan("");
  double vd = std::nan("");
};

/// Header plus one line per row; reals with 17 significant digits, NaN as an empty cell.
void write_variance_csv(std::ostream& out, std::span<const VarianceRow> rows);

}  // namespace vrgcn
