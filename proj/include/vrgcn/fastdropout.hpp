#pragma once

#include <cstddef>
#include <span>

#include "vrgcn/dense.hpp"
#include "vrgcn/model.hpp"
#include "vrgcn/random.hpp"
#include "vrgcn/sparse.hpp"

namespace vrgcn {

/// Elementwise Gaussian approximation of an activation matrix.
struct GaussianActivation {
  Matrix mean;
  Matrix var;

  void validate() const;
};

GaussianActivation moments_input(const Matrix& x);

/// Inverted dropout with keep probability `keep_prob` in (0, 1].
GaussianActivation moments_dropout(const GaussianActivation& g, double keep_prob);

/// Row-vector convention: Z = X·W, mean μW, variance σ²(W∘W).
GaussianActivation moments_linear(const GaussianActivation& g, const Matrix& w);

/// Per-row normalisation with the row statistics of the mean treated as
/// constants; ε = 1e-5 is added to the row standard deviation.
GaussianActivation moments_layernorm(const GaussianActivation& g, std::span<const double> gamma,
                                     std::span<const double> beta);
inline constexpr double kLayerNormEpsilon = 1e-5;

enum class ReluVariance {
  kTrue,       // Var max(0, X)
  kPublished,  // (1-Φ)·Var(X|X>0) + Φ(1-Φ)·(E Z)²
};

GaussianActivation moments_relu(const GaussianActivation& g,
                                ReluVariance variance = ReluVariance::kTrue);

/// Z = P̂·H: mean P̂μ, variance (P̂∘P̂)σ².
GaussianActivation moments_ns_aggregate(const GaussianActivation& h, const SparseMatrix& p_hat);

/// Z = P̂(H - H̄) + P·H̄ with H and H̄ driven by the same standard normal per
/// entry: mean P̂Δμ + Pμ̄, variance Σ_v (P̂_uv Δσ_v + P_uv σ̄_v)². P̂ and P share
/// row and column indexing.
GaussianActivation moments_cv_aggregate(const GaussianActivation& h,
                                        const GaussianActivation& h_bar,
                                        const SparseMatrix& p_hat, const SparseMatrix& p);

/// One draw from N(mean, var) per entry.
Matrix sample_from_moments(const GaussianActivation& g, Rng& rng);

/// Full-graph inference that propagates moments through the first
/// `sample_after` layers (aggregate, dropout, linear, ReLU), samples once, and
/// runs the remaining layers with ordinary dropout. sample_after == L returns
/// the logit moments without sampling (var is then the moment variance).
GaussianActivation fastdropout_forward(const SparseMatrix& p, const Matrix& x,
                                       const ModelParams& params, double keep_prob,
                                       std::size_t sample_after, Rng& rng);

/// Standard normal density and upper tail ratio φ(a)/(1-Φ(a)).
double normal_pdf(double a);
double normal_cdf(double a);
double inverse_mills(double a);

}  // namespace vrgcn
