#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "vrgcn/synth.hpp"
#include "vrgcn/variance.hpp"

using namespace vrgcn;

namespace {

NeighborhoodMoments sample_moments(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0), m(-2.0, 2.0), s(0.1, 0.5);
  NeighborhoodMoments in;
  in.d = d;
  for (std::size_t i = 0; i < n; ++i) {
    in.p.push_back(u(rng));
    in.mu.push_back(m(rng));
    in.s.push_back(s(rng));
    in.delta_mu.push_back(m(rng) * 0.5);
  }
  return in;
}

}  // namespace

TEST_CASE("closed-form subset variance") {
  const std::vector<double> equal{1.5, 1.5, 1.5, 1.5};
  CHECK(analytic_sampling_variance(equal, 2) == 0.0);
  const std::vector<double> x{0.0, 1.0, 2.0};
  CHECK(analytic_sampling_variance(x, 3) == 0.0);
  CHECK(analytic_sampling_variance(x, 1) == doctest::Approx(6.0).epsilon(1e-15));
  const std::vector<double> ones(3, 1.0);
  CHECK(enumerate_subset_variance(x, ones, 1) == doctest::Approx(6.0).epsilon(1e-15));
  const std::vector<double> ab{0.3, -1.2};
  CHECK(analytic_sampling_variance(ab, 1) == doctest::Approx(1.5 * 1.5).epsilon(1e-15));
  const std::vector<double> single{4.0};
  CHECK(analytic_sampling_variance(single, 1) == 0.0);
}

TEST_CASE("closed form matches enumeration") {
  Rng rng = make_rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng() % 8, d = 1 + rng() % n;
    std::vector<double> x(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = u(rng);
      w[i] = u(rng);
    }
    const double a = analytic_sampling_variance(x, w, d), e = enumerate_subset_variance(x, w, d);
    CHECK(std::abs(a - e) <= 1e-12 * std::max(1.0, std::abs(e)));
  }
  const std::vector<double> big(40, 1.0);
  CHECK_THROWS_AS(enumerate_subset_variance(big, big, 20), InputError);
}

TEST_CASE("breakdown rows") {
  NeighborhoodMoments in = sample_moments(2, 5, 2);
  const double su = in.dropout_sum();
  const VarianceBreakdown ex = table2_breakdown(Estimator::kExact, in);
  CHECK(ex.vns == 0.0);
  CHECK(ex.vd == doctest::Approx(su));
  const VarianceBreakdown ns = table2_breakdown(Estimator::kNS, in);
  CHECK(ns.vd == doctest::Approx(2.5 * su));
  const VarianceBreakdown cv = table2_breakdown(Estimator::kCV, in);
  CHECK(cv.vd == doctest::Approx(5.5 * su));
  const VarianceBreakdown cvd = table2_breakdown(Estimator::kCVD, in);
  CHECK(cvd.vd == doctest::Approx(su));
  CHECK(cv.vns == doctest::Approx(cvd.vns));
  for (const VarianceBreakdown& b : {ex, ns, cv, cvd}) CHECK(b.total == doctest::Approx(b.vns + b.vd));
  CHECK(cv_dropout_variance_iid_history(in) == doctest::Approx(4.0 * su));
  CHECK_THROWS_AS(table2_breakdown(Estimator::kIS, in), InputError);

  std::fill(in.delta_mu.begin(), in.delta_mu.end(), 0.0);
  CHECK(table2_breakdown(Estimator::kCV, in).vns == 0.0);
  CHECK(table2_breakdown(Estimator::kCVD, in).vns == 0.0);
  std::fill(in.s.begin(), in.s.end(), 0.0);
  for (Estimator e : {Estimator::kExact, Estimator::kNS, Estimator::kCV, Estimator::kCVD})
    CHECK(table2_breakdown(e, in).vd == 0.0);
  CHECK(table2_breakdown(Estimator::kNS, in).vns > 0.0);
}

TEST_CASE("Monte Carlo rows for exact, NS and CVD match their closed forms") {
  const NeighborhoodMoments in = sample_moments(3, 6, 3);
  for (Estimator e : {Estimator::kExact, Estimator::kNS, Estimator::kCVD}) {
    const McVariance mc = estimator_variance_monte_carlo(e, in, 100000, 4);
    CHECK(within_se(mc.variance, table2_breakdown(e, in).total, mc.stderr_variance));
  }
  const McVariance cv = estimator_variance_monte_carlo(Estimator::kCV, in, 100000, 4);
  CHECK(within_se(cv.variance, table2_breakdown(Estimator::kCV, in).vns + cv_dropout_variance_iid_history(in),
                  cv.stderr_variance));
}

TEST_CASE("Monte Carlo estimates are deterministic") {
  const NeighborhoodMoments in = sample_moments(5, 4, 2);
  const McVariance a = estimator_variance_monte_carlo(Estimator::kNS, in, 10000, 9);
  const McVariance b = estimator_variance_monte_carlo(Estimator::kNS, in, 10000, 9);
  CHECK(a.variance == b.variance);
  CHECK(a.mean == b.mean);
}

TEST_CASE("zero-mean uncorrelated subset sums and variance splits") {
  const std::vector<double> var{0.5, 1.0, 2.0, 0.1, 0.7};
  CHECK(subset_sum_variance_check(var, 2, 100000, 6).within());
  CHECK(variance_split_check(sample_moments(7, 5, 2), 100000, 8).within());
}

TEST_CASE("summary statistics") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const McVariance s = summarize(v);
  CHECK(s.mean == 2.5);
  CHECK(s.variance == doctest::Approx(5.0 / 3.0));
  CHECK(s.draws == 4);
}

TEST_CASE("gradient bias and standard deviation") {
  const Graph g = random_graph(8, 0.4, 3, 2, 10);
  const PropagationMatrix p = build_propagation(g);
  Rng rng = make_rng(11);
  const ModelParams params = ModelParams::glorot({3, 4, 2}, rng);

  GradientStudyConfig exact;
  exact.estimator.kind = Estimator::kExact;
  exact.minibatch_size = g.splits.train.size();
  exact.draws = 1000;
  const GradientBiasStd e = gradient_bias_std(g, p, params, exact);
  for (double b : e.bias) CHECK(b < 1e-14);
  for (double s : e.std) CHECK(s < 1e-14);

  GradientStudyConfig cv = exact;
  cv.estimator.kind = Estimator::kCV;
  cv.minibatch_size = 4;
  const GradientMoments m = sample_gradients(g, p, params, cv);
  for (std::size_t l = 0; l < m.mean.size(); ++l)
    for (std::size_t i = 0; i < m.mean[l].size(); ++i)
      CHECK(std::abs(m.mean[l].values()[i] - m.reference[l].values()[i]) <=
            4 * m.stderr_mean[l].values()[i] + 1e-12);

  GradientStudyConfig ns = cv;
  ns.estimator.kind = Estimator::kNS;
  ns.draws = 2000;
  const GradientMoments nm = sample_gradients(g, p, params, ns);
  std::size_t significant = 0;
  for (std::size_t i = 0; i < nm.mean[0].size(); ++i)
    significant += std::abs(nm.mean[0].values()[i] - nm.reference[0].values()[i]) >
                   4 * nm.stderr_mean[0].values()[i];
  CHECK(significant > 0);
  CHECK(gradient_bias_std(nm, params).bias[0] > 0.0);
}

TEST_CASE("correlation diagnostics") {
  const Graph g = generate_sbm({});
  const PropagationMatrix p = build_propagation(g);
  Rng rng = make_rng(12);
  const ModelParams params = ModelParams::glorot({8, 16, 2}, rng);
  CorrelationConfig cfg;
  cfg.preprocessed = true;
  cfg.samples_per_layer = {2};
  const auto layers = correlation_diagnostics(p, g.features, params, cfg);
  REQUIRE(layers.size() == 1);
  CHECK(std::abs(layers[0].neighbor_correlation) < 4.0 / std::sqrt(1000.0));

  cfg.dropout_rate = 0.0;
  CHECK_THROWS_AS(correlation_diagnostics(p, g.features, params, cfg), InputError);

  ModelParams dup = params;
  for (std::size_t r = 0; r < dup.weights[0].rows(); ++r)
    for (std::size_t c = 0; c < dup.weights[0].cols(); ++c) dup.weights[0](r, c) = dup.weights[0](r, 0);
  cfg.dropout_rate = 0.5;
  const auto same = correlation_diagnostics(p, g.features, dup, cfg);
  CHECK(same[0].feature_correlation == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("variance CSV") {
  VarianceRow a;
  a.case_id = "x";
  a.estimator = "cv";
  a.layer = 1;
  a.vns = 0.1;
  a.vd = 1.0 / 3.0;
  std::ostringstream out;
  const std::vector<VarianceRow> rows{a};
  write_variance_csv(out, rows);
  CHECK(out.str() == "case,estimator,layer,bias,std,vns,vd\nx,cv,1,,,0.10000000000000001,0.33333333333333331\n");
}
