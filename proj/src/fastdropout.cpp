#include "vrgcn/fastdropout.hpp"

#include <cmath>
#include <numbers>

#include "vrgcn/autodiff.hpp"
#include "vrgcn/kernels.hpp"

namespace vrgcn {

void GaussianActivation::validate() const {
  require(!mean.empty(), "GaussianActivation: empty");
  require(mean.same_shape(var), "GaussianActivation: mean and var shapes differ");
  for (double v : var.values()) require(v >= 0.0, "GaussianActivation: negative variance");
}

double normal_pdf(double a) { return std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double a) { return 0.5 * std::erfc(-a / std::numbers::sqrt2); }

double inverse_mills(double a) {
  if (a <= 6.0) return normal_pdf(a) / (0.5 * std::erfc(a / std::numbers::sqrt2));
  // log φ(a) - log(1-Φ(a)), with erfc(t) = exp(-t²)·erfcx(t) expanded as a continued fraction.
  const double t = a / std::numbers::sqrt2;
  double cf = 0.0;
  for (int k = 60; k >= 1; --k) cf = (k / 2.0) / (t + cf);
  const double log_erfcx = -std::log(std::sqrt(std::numbers::pi) * (t + cf));
  const double log_tail = std::log(0.5) + log_erfcx - t * t;
  const double log_pdf = -0.5 * a * a - 0.5 * std::log(2.0 * std::numbers::pi);
  return std::exp(log_pdf - log_tail);
}

GaussianActivation moments_input(const Matrix& x) {
  require(!x.empty(), "moments_input: empty features");
  return {x, Matrix(x.rows(), x.cols())};
}

GaussianActivation moments_dropout(const GaussianActivation& g, double keep_prob) {
  g.validate();
  require(keep_prob > 0.0 && keep_prob <= 1.0, "moments_dropout: keep_prob must lie in (0, 1]");
  GaussianActivation out{g.mean, g.var};
  for (std::size_t i = 0; i < out.var.size(); ++i) {
    const double mu = g.mean.values()[i];
    out.var.values()[i] = std::max(0.0, (g.var.values()[i] + mu * mu) / keep_prob - mu * mu);
  }
  return out;
}

GaussianActivation moments_linear(const GaussianActivation& g, const Matrix& w) {
  g.validate();
  require(g.mean.cols() == w.rows(), "moments_linear: shape mismatch");
  return {kernels::gemm(g.mean, w), kernels::gemm(g.var, hadamard(w, w))};
}

GaussianActivation moments_layernorm(const GaussianActivation& g, std::span<const double> gamma,
                                     std::span<const double> beta) {
  g.validate();
  const std::size_t cols = g.mean.cols();
  require(gamma.size() == cols && beta.size() == cols, "moments_layernorm: gamma/beta size mismatch");
  GaussianActivation out{Matrix(g.mean.rows(), cols), Matrix(g.mean.rows(), cols)};
  for (std::size_t r = 0; r < g.mean.rows(); ++r) {
    const auto mu = g.mean.row(r);
    double m = 0.0;
    for (double v : mu) m += v;
    m /= static_cast<double>(cols);
    double s2 = 0.0;
    for (double v : mu) s2 += (v - m) * (v - m);
    const double sd = std::sqrt(s2 / static_cast<double>(cols)) + kLayerNormEpsilon;
    for (std::size_t c = 0; c < cols; ++c) {
      out.mean(r, c) = gamma[c] * (mu[c] - m) / sd + beta[c];
      out.var(r, c) = gamma[c] * gamma[c] / (sd * sd) * g.var(r, c);
    }
  }
  return out;
}

GaussianActivation moments_relu(const GaussianActivation& g, ReluVariance variance) {
  g.validate();
  GaussianActivation out{Matrix(g.mean.rows(), g.mean.cols()), Matrix(g.mean.rows(), g.mean.cols())};
  for (std::size_t i = 0; i < g.mean.size(); ++i) {
    const double mu = g.mean.values()[i];
    const double sigma = std::sqrt(g.var.values()[i]);
    if (sigma == 0.0) {
      out.mean.values()[i] = std::max(mu, 0.0);
      continue;
    }
    const double alpha = -mu / sigma;
    const double pass = 0.5 * std::erfc(alpha / std::numbers::sqrt2);  // 1 - Φ(α)
    const double lambda = inverse_mills(alpha);
    const double tail_mean = mu + sigma * lambda;
    const double tail_var = std::max(0.0, sigma * sigma * (1.0 + alpha * lambda - lambda * lambda));
    const double ez = mu * pass + sigma * normal_pdf(alpha);
    const double spread = variance == ReluVariance::kTrue ? tail_mean : ez;
    out.mean.values()[i] = ez;
    out.var.values()[i] = std::max(0.0, pass * tail_var + (1.0 - pass) * pass * spread * spread);
  }
  return out;
}

GaussianActivation moments_ns_aggregate(const GaussianActivation& h, const SparseMatrix& p_hat) {
  h.validate();
  require(p_hat.cols() == h.mean.rows(), "moments_ns_aggregate: shape mismatch");
  const SparseMatrix squared = p_hat.map_values([](std::size_t, std::size_t, double v) { return v * v; });
  return {kernels::spmm(p_hat, h.mean), kernels::spmm(squared, h.var)};
}

GaussianActivation moments_cv_aggregate(const GaussianActivation& h,
                                        const GaussianActivation& h_bar,
                                        const SparseMatrix& p_hat, const SparseMatrix& p) {
  h.validate();
  h_bar.validate();
  require(h.mean.same_shape(h_bar.mean), "moments_cv_aggregate: H and H̄ shapes differ");
  require(p_hat.rows() == p.rows() && p_hat.cols() == p.cols() && p.cols() == h.mean.rows(),
          "moments_cv_aggregate: shape mismatch");
  const std::size_t cols = h.mean.cols();
  GaussianActivation out{kernels::spmm(p_hat, h.mean - h_bar.mean) + kernels::spmm(p, h_bar.mean),
                         Matrix(p.rows(), cols)};
  for (std::size_t u = 0; u < p.rows(); ++u) {
    // Union of the two sparsity patterns, both sorted by column.
    const auto hc = p_hat.row_cols(u), pc = p.row_cols(u);
    const auto hv = p_hat.row_values(u), pv = p.row_values(u);
    std::size_t a = 0, b = 0;
    while (a < hc.size() || b < pc.size()) {
      NodeId v;
      double ph = 0.0, pe = 0.0;
      if (b >= pc.size() || (a < hc.size() && hc[a] < pc[b])) {
        v = hc[a];
        ph = hv[a++];
      } else if (a >= hc.size() || pc[b] < hc[a]) {
        v = pc[b];
        pe = pv[b++];
      } else {
        v = hc[a];
        ph = hv[a++];
        pe = pv[b++];
      }
      for (std::size_t d = 0; d < cols; ++d) {
        const double sd = std::sqrt(h.var(v, d)), sd_bar = std::sqrt(h_bar.var(v, d));
        const double c = ph * (sd - sd_bar) + pe * sd_bar;
        out.var(u, d) += c * c;
      }
    }
  }
  return out;
}

Matrix sample_from_moments(const GaussianActivation& g, Rng& rng) {
  g.validate();
  std::normal_distribution<double> normal;
  Matrix out = g.mean;
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += std::sqrt(g.var.values()[i]) * normal(rng);
  return out;
}

GaussianActivation fastdropout_forward(const SparseMatrix& p, const Matrix& x,
                                       const ModelParams& params, double keep_prob,
                                       std::size_t sample_after, Rng& rng) {
  params.validate();
  const std::size_t layers = params.num_layers();
  require(sample_after <= layers, "fastdropout_forward: sample_after exceeds the depth");
  require(keep_prob > 0.0 && keep_prob <= 1.0, "fastdropout_forward: keep_prob must lie in (0, 1]");
  GaussianActivation g = moments_input(x);
  for (std::size_t l = 0; l < sample_after; ++l) {
    g = moments_linear(moments_dropout(moments_ns_aggregate(g, p), keep_prob), params.weights[l]);
    if (l + 1 < layers) g = moments_relu(g);
  }
  if (sample_after == layers) return g;
  Matrix h = sample_from_moments(g, rng);
  for (std::size_t l = sample_after; l < layers; ++l) {
    Matrix u = kernels::spmm(p, h);
    u = DropoutMask::sample(u.rows(), u.cols(), keep_prob, rng).apply(u);
    h = kernels::gemm(u, params.weights[l]);
    if (l + 1 < layers)
      for (double& v : h.values()) v = std::max(v, 0.0);
  }
  return {h, Matrix(h.rows(), h.cols())};
}

}  // namespace vrgcn
