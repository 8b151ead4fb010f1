#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "vrgcn/fastdropout.hpp"
#include "vrgcn/kernels.hpp"
#include "vrgcn/synth.hpp"

using namespace vrgcn;
using vrgcn::testing::uniform_matrix;

namespace {

GaussianActivation random_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return {uniform_matrix(rows, cols, seed, -1.0, 1.0), uniform_matrix(rows, cols, seed + 1000, 0.0, 0.5)};
}

// Mean and variance of each entry of f(draw) over `n` draws, with standard errors.
struct Mc {
  Matrix mean, var, se_mean, se_var;
};

template <typename F>
Mc monte_carlo(std::size_t rows, std::size_t cols, std::size_t n, F&& draw) {
  Matrix s1(rows, cols), s2(rows, cols), s3(rows, cols), s4(rows, cols);
  Matrix first;
  for (std::size_t k = 0; k < n; ++k) {
    const Matrix z = draw();
    if (k == 0) first = z;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double d = z.values()[i] - first.values()[i];
      s1.values()[i] += d;
      s2.values()[i] += d * d;
      s3.values()[i] += d * d * d;
      s4.values()[i] += d * d * d * d;
    }
  }
  Mc out{Matrix(rows, cols), Matrix(rows, cols), Matrix(rows, cols), Matrix(rows, cols)};
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < s1.size(); ++i) {
    const double m = s1.values()[i] / nn;
    const double m2 = s2.values()[i] / nn - m * m;
    const double m4 = s4.values()[i] / nn - 4 * m * s3.values()[i] / nn + 6 * m * m * s2.values()[i] / nn -
                      3 * m * m * m * m;
    out.mean.values()[i] = first.values()[i] + m;
    out.var.values()[i] = m2 * nn / (nn - 1);
    out.se_mean.values()[i] = std::sqrt(std::max(m2, 0.0) / nn);
    out.se_var.values()[i] = std::sqrt(std::max(m4 - m2 * m2, 0.0) / nn);
  }
  return out;
}

void check_within(const GaussianActivation& g, const Mc& mc) {
  for (std::size_t i = 0; i < g.mean.size(); ++i) {
    CHECK(std::abs(g.mean.values()[i] - mc.mean.values()[i]) <= 4 * mc.se_mean.values()[i] + 1e-12);
    CHECK(std::abs(g.var.values()[i] - mc.var.values()[i]) <= 4 * mc.se_var.values()[i] + 1e-12);
  }
}

}  // namespace

TEST_CASE("input moments") {
  const Matrix x = uniform_matrix(3, 4, 1);
  const GaussianActivation g = moments_input(x);
  CHECK(g.mean == x);
  CHECK(g.var == Matrix(3, 4));
  CHECK_THROWS_AS(moments_input(Matrix()), InputError);
}

TEST_CASE("dropout moments") {
  const GaussianActivation g = random_gaussian(2, 3, 2);
  const GaussianActivation same = moments_dropout(g, 1.0);
  CHECK(same.mean == g.mean);
  CHECK(max_abs_diff(same.var, g.var) < 1e-15);
  const GaussianActivation one = moments_dropout(moments_input(Matrix(1, 1, 1.0)), 0.5);
  CHECK(one.mean(0, 0) == 1.0);
  CHECK(one.var(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(moments_dropout(g, 0.0), InputError);

  const Matrix x = uniform_matrix(2, 3, 3);
  Rng rng = make_rng(4);
  check_within(moments_dropout(moments_input(x), 0.6),
               monte_carlo(2, 3, 200000, [&] { return DropoutMask::sample(2, 3, 0.6, rng).apply(x); }));
}

TEST_CASE("linear moments") {
  const GaussianActivation g = random_gaussian(2, 3, 5);
  const GaussianActivation id = moments_linear(g, Matrix::identity(3));
  CHECK(id.mean == g.mean);
  CHECK(id.var == g.var);
  const GaussianActivation scaled = moments_linear(g, Matrix::identity(3) * 3.0);
  CHECK(max_abs_diff(scaled.mean, g.mean * 3.0) < 1e-15);
  CHECK(max_abs_diff(scaled.var, g.var * 9.0) < 1e-15);

  const Matrix w = uniform_matrix(3, 3, 6);
  Rng rng = make_rng(7);
  check_within(moments_linear(g, w), monte_carlo(2, 3, 200000, [&] {
                 return kernels::gemm(sample_from_moments(g, rng), w);
               }));
}

TEST_CASE("layer norm moments") {
  Matrix m(1, 4);
  m(0, 0) = -1.0;
  m(0, 1) = 1.0;
  m(0, 2) = -1.0;
  m(0, 3) = 1.0;
  const std::vector<double> gamma(4, 1.0), beta(4, 0.0);
  const GaussianActivation n = moments_layernorm({m, Matrix(1, 4, 0.1)}, gamma, beta);
  CHECK(max_abs_diff(n.mean, m) < 1e-4);
  const GaussianActivation flat = moments_layernorm({Matrix(1, 4, 2.0), Matrix(1, 4, 0.1)}, gamma, beta);
  for (double v : flat.mean.values()) CHECK(std::isfinite(v));
  for (double v : flat.var.values()) CHECK(std::isfinite(v));
}

TEST_CASE("relu moments") {
  const GaussianActivation std_normal{Matrix(1, 1, 0.0), Matrix(1, 1, 1.0)};
  const GaussianActivation r = moments_relu(std_normal);
  CHECK(std::abs(r.mean(0, 0) - 1.0 / std::sqrt(2.0 * std::numbers::pi)) < 1e-9);
  CHECK(r.var(0, 0) == doctest::Approx(0.5 - 1.0 / (2.0 * std::numbers::pi)).epsilon(1e-12));

  const GaussianActivation far{Matrix(1, 1, 10.0), Matrix(1, 1, 1.0)};
  const GaussianActivation pass = moments_relu(far);
  CHECK(pass.mean(0, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(pass.var(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  const GaussianActivation dead{Matrix(1, 1, -40.0), Matrix(1, 1, 1.0)};
  const GaussianActivation zero = moments_relu(dead);
  CHECK(zero.mean(0, 0) >= 0.0);
  CHECK(zero.mean(0, 0) < 1e-300);
  CHECK(std::isfinite(zero.var(0, 0)));

  const GaussianActivation fixed{uniform_matrix(2, 2, 8), Matrix(2, 2)};
  const GaussianActivation det = moments_relu(fixed);
  for (std::size_t i = 0; i < 4; ++i) CHECK(det.mean.values()[i] == std::max(0.0, fixed.mean.values()[i]));
  CHECK(det.var == Matrix(2, 2));

  const GaussianActivation g = random_gaussian(2, 3, 9);
  Rng rng = make_rng(10);
  check_within(moments_relu(g), monte_carlo(2, 3, 200000, [&] {
                 Matrix z = sample_from_moments(g, rng);
                 for (double& v : z.values()) v = std::max(v, 0.0);
                 return z;
               }));
}

TEST_CASE("published relu variance differs from the true one") {
  const GaussianActivation g{Matrix(1, 1, 0.0), Matrix(1, 1, 1.0)};
  const double truth = moments_relu(g, ReluVariance::kTrue).var(0, 0);
  const double published = moments_relu(g, ReluVariance::kPublished).var(0, 0);
  CHECK(truth == doctest::Approx(0.3408).epsilon(1e-4));
  CHECK(published == doctest::Approx(0.2215).epsilon(1e-3));
}

TEST_CASE("inverse Mills ratio is smooth across the tail switch") {
  CHECK(inverse_mills(0.0) == doctest::Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-14));
  CHECK(inverse_mills(6.0 - 1e-9) == doctest::Approx(inverse_mills(6.0 + 1e-9)).epsilon(1e-8));
  CHECK(inverse_mills(40.0) == doctest::Approx(40.0 + 1.0 / 40.0).epsilon(1e-4));
}

TEST_CASE("aggregation moments") {
  const GaussianActivation g = random_gaussian(3, 2, 11);
  const GaussianActivation id = moments_ns_aggregate(g, SparseMatrix::identity(3));
  CHECK(id.mean == g.mean);
  CHECK(id.var == g.var);
  const SparseMatrix pick = SparseMatrix::from_triplets(1, 3, {{0, 2, 2.0}});
  const GaussianActivation one = moments_ns_aggregate(g, pick);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(one.mean(0, c) == 2.0 * g.mean(2, c));
    CHECK(one.var(0, c) == 4.0 * g.var(2, c));
  }

  const PropagationMatrix p = build_propagation(random_graph(3, 0.7, 1, 2, 12));
  const SparseMatrix p_hat = p.matrix().map_values([](std::size_t r, std::size_t c, double v) {
    return r == c ? 1.5 * v : 0.75 * v;
  });
  const GaussianActivation collapse = moments_cv_aggregate(g, g, p_hat, p.matrix());
  const GaussianActivation exact = moments_ns_aggregate(g, p.matrix());
  CHECK(max_abs_diff(collapse.mean, exact.mean) < 1e-15);
  CHECK(max_abs_diff(collapse.var, exact.var) < 1e-12);

  Rng rng = make_rng(13);
  check_within(moments_ns_aggregate(g, p_hat), monte_carlo(3, 2, 200000, [&] {
                 return kernels::spmm(p_hat, sample_from_moments(g, rng));
               }));
  const GaussianActivation bar = random_gaussian(3, 2, 14);
  std::normal_distribution<double> n01(0.0, 1.0);
  check_within(moments_cv_aggregate(g, bar, p_hat, p.matrix()), monte_carlo(3, 2, 200000, [&] {
                 Matrix h(3, 2), hb(3, 2);
                 for (std::size_t i = 0; i < 6; ++i) {
                   const double e = n01(rng);
                   h.values()[i] = g.mean.values()[i] + std::sqrt(g.var.values()[i]) * e;
                   hb.values()[i] = bar.mean.values()[i] + std::sqrt(bar.var.values()[i]) * e;
                 }
                 return kernels::spmm(p_hat, h - hb) + kernels::spmm(p.matrix(), hb);
               }));
}

TEST_CASE("variances stay non-negative") {
  Rng rng = make_rng(15);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const GaussianActivation g = random_gaussian(3, 3, 100 + seed);
    const Matrix w = uniform_matrix(3, 3, 200 + seed, -3.0, 3.0);
    const std::vector<double> gamma{1.0, -2.0, 0.5}, beta{0.0, 1.0, -1.0};
    for (const GaussianActivation& out :
         {moments_dropout(g, 0.3), moments_linear(g, w), moments_relu(g),
          moments_layernorm(g, gamma, beta), moments_ns_aggregate(g, SparseMatrix::from_dense(w))})
      for (double v : out.var.values()) CHECK(v >= 0.0);
  }
}

TEST_CASE("fast dropout inference matches the dropout network mean on a deterministic path") {
  const Graph g = random_graph(6, 0.4, 3, 2, 16);
  const PropagationMatrix p = build_propagation(g);
  Rng init = make_rng(17);
  const ModelParams params = ModelParams::glorot({3, 4, 2}, init);
  Rng rng = make_rng(18);
  const GaussianActivation keep_all = fastdropout_forward(p.matrix(), g.features, params, 1.0, 2, rng);
  CHECK(max_abs_diff(keep_all.mean, exact_activations(p, g.features, params, false).back()) < 1e-13);
  CHECK(max_abs(keep_all.var) == 0.0);
  const GaussianActivation sampled = fastdropout_forward(p.matrix(), g.features, params, 0.5, 1, rng);
  CHECK(sampled.mean.rows() == 6);
  CHECK(sampled.mean.cols() == 2);
}
