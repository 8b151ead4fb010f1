#include "vrgcn/verify.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "parallel.hpp"
#include "vrgcn/fastdropout.hpp"
#include "vrgcn/io.hpp"
#include "vrgcn/kernels.hpp"
#include "vrgcn/synth.hpp"
#include "vrgcn/trainer.hpp"
#include "vrgcn/variance.hpp"

namespace vrgcn {

bool SuiteReport::passed() const {
  return std::none_of(checks.begin(), checks.end(),
                      [](const CheckResult& c) { return c.status == CheckStatus::kFail; });
}

double GradCheckReport::worst() const {
  return max_rel_error.empty() ? 0.0 : *std::max_element(max_rel_error.begin(), max_rel_error.end());
}

void print_report(std::ostream& out, const SuiteReport& report) {
  for (const CheckResult& c : report.checks) {
    const char* tag = c.status == CheckStatus::kPass   ? "PASS"
                      : c.status == CheckStatus::kFail ? "FAIL"
                      : c.status == CheckStatus::kSkip ? "SKIP"
                                                       : "INFO";
    out << '[' << tag << "] " << c.name << ": " << c.detail << " (" << std::fixed
        << std::setprecision(2) << c.seconds << " s)" << std::defaultfloat << '\n';
  }
}

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

// Runs `body`, fails it if it throws or exceeds `limit` seconds (0 = no limit).
CheckResult timed(const std::string& name, double limit, const std::function<Outcome()>& body) {
  CheckResult r;
  r.name = name;
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  r.detail = o.detail;
  r.status = o.ok ? CheckStatus::kPass : CheckStatus::kFail;
  if (limit > 0.0 && r.seconds >= limit) {
    r.status = CheckStatus::kFail;
    r.detail += "; exceeded the " + fmt(limit) + " s budget";
  }
  return r;
}

CheckResult info(const std::string& name, const std::string& detail) {
  return {name, CheckStatus::kInfo, detail, 0.0};
}

ModelParams random_params(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  Rng rng = make_rng(seed, 5);
  return ModelParams::glorot(dims, rng);
}

std::vector<NodeId> iota_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

// ---------------------------------------------------------------- criterion 1

Outcome subset_variance_equivalence(std::uint64_t seed, std::size_t cases) {
  Rng rng = make_rng(seed, 11);
  std::uniform_int_distribution<std::size_t> size(1, 8);
  std::uniform_real_distribution<double> value(-2.0, 2.0);
  double worst = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = size(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    std::vector<double> x(n), ones(n, 1.0);
    for (double& v : x) v = value(rng);
    const double analytic = analytic_sampling_variance(x, d);
    const double brute = enumerate_subset_variance(x, ones, d);
    const double err = brute != 0.0 ? std::abs(analytic - brute) / std::abs(brute) : std::abs(analytic);
    worst = std::max(worst, err);
  }
  return {worst < 1e-10, "max relative error " + fmt(worst) + " over " + std::to_string(cases) +
                             " cases (limit 1e-10)"};
}

Outcome subset_sum_variance(std::uint64_t seed) {
  const std::vector<double> var{0.5, 1.0, 2.0, 0.25, 1.5, 0.75};
  std::size_t bad = 0;
  std::string worst;
  for (std::size_t d = 1; d <= var.size(); ++d) {
    const McCheck c = subset_sum_variance_check(var, d, 100000, derive_seed(seed, d));
    if (!c.within()) {
      ++bad;
      worst += " D=" + std::to_string(d) + " mc " + fmt(c.estimate) + " vs " + fmt(c.expected);
    }
  }
  return {bad == 0, std::to_string(bad) + " of 6 sample counts outside 4 SE" + worst};
}

// ---------------------------------------------------------------- criterion 2

Outcome exact_testing(std::uint64_t seed, std::size_t seeds) {
  double worst = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t run = derive_seed(seed, 100 + s);
    const Graph g = random_graph(64, 4.0 / 63.0, 8, 3, run);
    const PropagationMatrix p = build_propagation(g);
    const ModelParams params = random_params({8, 16, 3}, run);
    ExactTestConfig cfg;
    cfg.samples_per_layer = {2, 2};
    cfg.minibatch_size = 8;
    cfg.seed = run;
    const Matrix z = exact_test_forward(p, g.features, params, cfg);
    const Matrix exact = exact_activations(p, g.features, params, false).back();
    worst = std::max(worst, max_abs_diff(z, exact));
  }
  return {worst < 1e-9, "max |Z_cv - Z_exact| " + fmt(worst) + " over " + std::to_string(seeds) +
                            " seeds after L = 2 epochs (limit 1e-9)"};
}

Outcome exact_testing_needs_every_node(std::uint64_t seed) {
  const Graph g = random_graph(64, 4.0 / 63.0, 8, 3, derive_seed(seed, 7));
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = random_params({8, 16, 3}, seed);
  NodeId skipped = 0;
  while (p.degree(skipped) < 2) ++skipped;
  ExactTestConfig cfg;
  cfg.samples_per_layer = {1, 1};
  cfg.minibatch_size = 8;
  cfg.seed = seed;
  for (NodeId v = 0; v < g.num_nodes; ++v)
    if (v != skipped) cfg.scan_nodes.push_back(v);
  const Matrix z = exact_test_forward(p, g.features, params, cfg);
  const Matrix exact = exact_activations(p, g.features, params, false).back();
  double worst = 0.0;
  for (NodeId u : p.matrix().row_cols(skipped))
    if (u != skipped)
      for (std::size_t c = 0; c < z.cols(); ++c) worst = std::max(worst, std::abs(z(u, c) - exact(u, c)));
  return {worst > 1e-6, "neighbours of the never-scanned node " + std::to_string(skipped) +
                            " deviate by " + fmt(worst) + " (must exceed 1e-6)"};
}

// ---------------------------------------------------------------- criterion 3

struct NamedEstimator {
  std::string name;
  EstimatorKind kind;
};

std::vector<NamedEstimator> gradcheck_estimators() {
  auto make = [](Estimator e, bool pp, double rate) {
    EstimatorKind k;
    k.kind = e;
    k.preprocess_first_layer = pp;
    k.dropout_rate = rate;
    return k;
  };
  return {{"exact", make(Estimator::kExact, false, 0.5)}, {"ns", make(Estimator::kNS, false, 0.5)},
          {"is", make(Estimator::kIS, false, 0.5)},       {"cv", make(Estimator::kCV, false, 0.5)},
          {"cvd", make(Estimator::kCVD, false, 0.5)},     {"cv+pp", make(Estimator::kCV, true, 0.5)},
          {"cvd+pp", make(Estimator::kCVD, true, 0.5)}};
}

Outcome gradient_correctness(std::uint64_t seed) {
  const Graph g = random_graph(5, 0.6, 3, 2, derive_seed(seed, 3));
  const ModelParams params = random_params({3, 4, 2}, seed);
  double worst = 0.0;
  std::string per;
  for (const auto& [name, kind] : gradcheck_estimators()) {
    GradCheckConfig cfg;
    cfg.estimator = kind;
    cfg.samples_per_layer = kind.preprocess_first_layer ? std::vector<std::size_t>{2}
                                                        : std::vector<std::size_t>{2, 2};
    cfg.seed = seed;
    const double e = grad_check(g, params, cfg).worst();
    worst = std::max(worst, e);
    per += " " + name + "=" + fmt(e);
  }
  return {worst < 1e-4, "max relative error " + fmt(worst) + " (limit 1e-4):" + per};
}

// ---------------------------------------------------------------- criterion 4

Outcome cv_gradient_unbiased(std::uint64_t seed, std::size_t draws) {
  const Graph g = random_graph(16, 0.25, 4, 2, derive_seed(seed, 4));
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = random_params({4, 8, 2}, seed);
  GradientStudyConfig cfg;
  cfg.estimator.kind = Estimator::kCV;
  cfg.samples_per_layer = {2, 2};
  cfg.self_weighting = SelfLoopWeighting::kExact;
  cfg.minibatch_size = 4;
  cfg.draws = draws;
  cfg.seed = seed;
  const GradientMoments m = sample_gradients(g, p, params, cfg);
  std::size_t entries = 0, outside = 0;
  double worst_z = 0.0;
  for (std::size_t l = 0; l < m.mean.size(); ++l)
    for (std::size_t i = 0; i < m.mean[l].size(); ++i) {
      ++entries;
      const double diff = std::abs(m.mean[l].values()[i] - m.reference[l].values()[i]);
      const double se = m.stderr_mean[l].values()[i];
      if (diff > 4.0 * se + 1e-12) ++outside;
      if (se > 0.0) worst_z = std::max(worst_z, diff / se);
    }
  return {outside == 0, std::to_string(outside) + " of " + std::to_string(entries) +
                            " weight entries outside 4 SE over " + std::to_string(draws) +
                            " draws (largest |z| " + fmt(worst_z) + ")"};
}

// ---------------------------------------------------------------- criterion 5

NeighborhoodMoments random_neighborhood(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng = make_rng(seed, 12);
  std::uniform_real_distribution<double> weight(0.1, 0.6), mean(-1.0, 1.0), var(0.1, 1.0);
  NeighborhoodMoments in;
  in.d = d;
  for (std::size_t v = 0; v < n; ++v) {
    in.p.push_back(weight(rng));
    in.mu.push_back(mean(rng));
    in.s.push_back(var(rng));
    in.delta_mu.push_back(mean(rng));
  }
  return in;
}

std::vector<CheckResult> estimator_variance_rows(std::uint64_t seed, double limit) {
  std::vector<CheckResult> out;
  const auto start = Clock::now();
  const NeighborhoodMoments in = random_neighborhood(seed, 5, 2);
  const std::size_t draws = 100000;
  const std::pair<Estimator, const char*> rows[] = {
      {Estimator::kExact, "exact"}, {Estimator::kNS, "ns"}, {Estimator::kCV, "cv"}, {Estimator::kCVD, "cvd"}};
  for (const auto& [e, name] : rows) {
    out.push_back(timed(std::string("5 estimator variance, ") + name + " row", 0.0, [&] {
      const VarianceBreakdown b = table2_breakdown(e, in);
      const McVariance mc = estimator_variance_monte_carlo(e, in, draws, derive_seed(seed, 50));
      const double z = mc.stderr_variance > 0 ? std::abs(mc.variance - b.total) / mc.stderr_variance : 0.0;
      return Outcome{within_se(mc.variance, b.total, mc.stderr_variance),
                     "MC " + fmt(mc.variance) + " vs closed form " + fmt(b.total) + " (vns " +
                         fmt(b.vns) + ", vd " + fmt(b.vd) + "), " + fmt(z) + " SE (limit 4)"};
    }));
  }
  out.push_back(timed("5 estimator variance, neighbour-sampling term vanishes with the mean drift", 0.0, [&] {
    bool ok = true;
    std::string detail;
    for (Estimator e : {Estimator::kCV, Estimator::kCVD}) {
      double prev_closed = INFINITY, prev_mc = INFINITY;
      detail += e == Estimator::kCV ? "cv:" : " cvd:";
      for (double scale : {1.0, 0.1, 0.01}) {
        NeighborhoodMoments scaled = in;
        for (double& v : scaled.delta_mu) v *= scale;
        std::fill(scaled.s.begin(), scaled.s.end(), 0.0);
        const double closed = table2_breakdown(e, scaled).vns;
        const double mc = estimator_variance_monte_carlo(e, scaled, draws, derive_seed(seed, 51)).variance;
        ok = ok && closed < prev_closed && mc < prev_mc;
        prev_closed = closed;
        prev_mc = mc;
        detail += " " + fmt(closed);
      }
    }
    return Outcome{ok, "closed-form VNS for drift scale 1, 0.1, 0.01 =" + detail + " (strictly decreasing, MC too)"};
  }));
  const McVariance cv = estimator_variance_monte_carlo(Estimator::kCV, in, draws, derive_seed(seed, 50));
  const double iid = table2_breakdown(Estimator::kCV, in).vns + cv_dropout_variance_iid_history(in);
  out.push_back(info("5 diagnostic, cv row with the dropout term (2n/D - 1) S_u",
                     "closed form " + fmt(iid) + " vs MC " + fmt(cv.variance) + ", " +
                         fmt(std::abs(cv.variance - iid) / cv.stderr_variance) + " SE"));
  const double total = std::chrono::duration<double>(Clock::now() - start).count();
  if (total >= limit)
    for (auto& r : out)
      if (r.status == CheckStatus::kPass) {
        r.status = CheckStatus::kFail;
        r.detail += "; criterion exceeded the " + fmt(limit) + " s budget";
      }
  out.front().seconds = total;
  return out;
}

Outcome variance_split(std::uint64_t seed) {
  const McCheck c = variance_split_check(random_neighborhood(seed, 6, 3), 100000, derive_seed(seed, 52));
  return {c.within(), "Var[f+g] " + fmt(c.estimate) + " vs Var f + Var g " + fmt(c.expected) +
                          " (SE " + fmt(c.se) + ")"};
}

// ---------------------------------------------------------------- criterion 6

Outcome collapse_lattice(std::uint64_t seed, std::size_t graphs) {
  double worst_a = 0.0, worst_b = 0.0, worst_c = 0.0;
  for (std::size_t t = 0; t < graphs; ++t) {
    const std::uint64_t run = derive_seed(seed, 200 + t);
    Rng rng = make_rng(run, 1);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 16)(rng);
    const Graph g = random_graph(n, 0.3, 4, 3, run);
    const PropagationMatrix p = build_propagation(g);
    const ModelParams params = random_params({4, 6, 3}, run);
    std::vector<NodeId> batch = iota_nodes(n);
    std::shuffle(batch.begin(), batch.end(), rng);
    batch.resize(std::max<std::size_t>(1, n / 3));

    SamplerConfig sc;
    sc.samples_per_layer = {2, 2};
    const ReceptiveFieldPlan plan = build_receptive_fields(p, batch, sc, rng);
    auto options = [&](double keep, Rng* r) {
      ForwardOptions o;
      o.keep_prob = keep;
      o.dropout_rng = r;
      return o;
    };

    // (a) cold history: CV == NS under identical masks.
    {
      const HistoryStore cold = make_history(n, params);
      Rng r1 = make_rng(run, 2), r2 = make_rng(run, 2);
      ForwardPass ns = forward_ns(plan, g.features, params, options(0.7, &r1));
      ForwardPass cv = forward_cv(p, plan, g.features, params, cold, options(0.7, &r2));
      worst_a = std::max(worst_a, max_abs_diff(ns.tape.value(ns.logits), cv.tape.value(cv.logits)));
    }
    // (b) keep-all dropout: CVD == CV on an arbitrary history.
    {
      HistoryStore hist = make_history(n, params);
      std::normal_distribution<double> normal;
      for (std::size_t l = 0; l < hist.num_layers(); ++l) {
        Matrix rows(n, hist.dims(l));
        for (double& v : rows.values()) v = normal(rng);
        hist.write_rows(l, iota_nodes(n), rows);
      }
      ForwardPass cv = forward_cv(p, plan, g.features, params, hist, options(1.0, nullptr));
      ForwardPass cvd = forward_cvd(p, plan, g.features, params, hist, options(1.0, nullptr));
      worst_b = std::max(worst_b, max_abs_diff(cv.tape.value(cv.logits), cvd.tape.value(cvd.logits)));
    }
    // (c) full sampling + exact history: every estimator == exact on the minibatch.
    {
      SamplerConfig full = sc;
      full.mode = SamplerMode::kFull;
      const ReceptiveFieldPlan fplan = build_receptive_fields(p, batch, full, rng);
      HistoryStore hist = make_history(n, params);
      seed_exact_history(hist, p, g.features, params, false);
      const Matrix exact = gather_rows(exact_activations(p, g.features, params, false).back(), batch);
      ForwardPass ns = forward_ns(fplan, g.features, params);
      ForwardPass cv = forward_cv(p, fplan, g.features, params, hist);
      ForwardPass cvd = forward_cvd(p, fplan, g.features, params, hist);
      for (ForwardPass* f : {&ns, &cv, &cvd})
        worst_c = std::max(worst_c, max_abs_diff(f->tape.value(f->logits), exact));
    }
  }
  const double worst = std::max({worst_a, worst_b, worst_c});
  return {worst < 1e-12, "max deviation (a) " + fmt(worst_a) + ", (b) " + fmt(worst_b) + ", (c) " +
                             fmt(worst_c) + " over " + std::to_string(graphs) + " graphs (limit 1e-12)"};
}

// ---------------------------------------------------------------- criterion 7

struct ParityRun {
  double exact = 0.0, cv_pp = 0.0, ns = 0.0;
};

ParityRun parity_run(std::uint64_t seed) {
  SbmConfig sbm;
  sbm.nodes = 32;
  sbm.communities = 2;
  sbm.seed = seed;
  const Graph g = generate_sbm(sbm);
  const PropagationMatrix p = build_propagation(g);
  TrainConfig base;
  base.hidden_dims = {16};
  base.minibatch_size = 8;
  base.epochs = 200;
  base.seed = seed;
  base.self_weighting = SelfLoopWeighting::kExact;
  base.evaluate_each_epoch = false;
  Rng init_rng = make_rng(seed, 1);
  const ModelParams init = ModelParams::glorot({sbm.feature_dim, 16, sbm.communities}, init_rng);
  auto final_loss = [&](Estimator e, bool pp) {
    TrainConfig cfg = base;
    cfg.estimator.kind = e;
    cfg.estimator.preprocess_first_layer = pp;
    cfg.samples_per_layer = pp ? std::vector<std::size_t>{2} : std::vector<std::size_t>{2, 2};
    const TrainResult r = train(g, p, cfg, init);
    if (r.report.aborted) throw std::runtime_error(r.report.message);
    return r.report.epochs.back().train_loss;
  };
  return {final_loss(Estimator::kExact, false), final_loss(Estimator::kCV, true),
          final_loss(Estimator::kNS, false)};
}

std::vector<CheckResult> convergence_parity(std::uint64_t seed, double limit) {
  const auto start = Clock::now();
  std::vector<ParityRun> runs(5);
  std::string error;
  try {
    detail::parallel_for(runs.size(), [&](std::size_t s) { runs[s] = parity_run(derive_seed(seed, 300 + s)); });
  } catch (const std::exception& e) {
    error = e.what();
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  CheckResult overlap{"7 convergence parity, cv+pp final training loss within 1e-2 of exact", CheckStatus::kFail, "", seconds};
  CheckResult ns{"7 convergence parity, ns (D=2) final training loss above exact", CheckStatus::kFail, "", 0.0};
  if (!error.empty()) {
    overlap.detail = ns.detail = "error: " + error;
    return {overlap, ns};
  }
  double worst = 0.0;
  bool ns_higher = true;
  std::string gaps, ns_detail;
  for (const ParityRun& r : runs) {
    worst = std::max(worst, std::abs(r.cv_pp - r.exact));
    ns_higher = ns_higher && r.ns > r.exact;
    gaps += " " + fmt(r.exact) + "/" + fmt(r.cv_pp);
    ns_detail += " " + fmt(r.ns) + "/" + fmt(r.exact);
  }
  overlap.status = worst < 1e-2 ? CheckStatus::kPass : CheckStatus::kFail;
  overlap.detail = "max |cv+pp - exact| " + fmt(worst) + " over 5 seeds; exact/cv+pp:" + gaps;
  ns.status = ns_higher ? CheckStatus::kPass : CheckStatus::kFail;
  ns.detail = "ns/exact:" + ns_detail;
  if (seconds >= limit) {
    for (CheckResult* c : {&overlap, &ns}) {
      c->status = CheckStatus::kFail;
      c->detail += "; exceeded the " + fmt(limit) + " s budget";
    }
  }
  return {overlap, ns};
}

// ---------------------------------------------------------------- criterion 8

// Per-entry sample moments about a shift, accumulated in fixed-size chunks.
struct Moments {
  std::vector<double> s1, s2, s3, s4;
  std::vector<double> shift;
  std::size_t n = 0;

  explicit Moments(std::vector<double> center)
      : s1(center.size()), s2(center.size()), s3(center.size()), s4(center.size()),
        shift(std::move(center)) {}
  void add(std::span<const double> x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - shift[i], d2 = d * d;
      s1[i] += d;
      s2[i] += d2;
      s3[i] += d2 * d;
      s4[i] += d2 * d2;
    }
    ++n;
  }
  void merge(const Moments& o) {
    for (std::size_t i = 0; i < s1.size(); ++i) {
      s1[i] += o.s1[i];
      s2[i] += o.s2[i];
      s3[i] += o.s3[i];
      s4[i] += o.s4[i];
    }
    n += o.n;
  }
  // Mean, variance and their standard errors for entry i.
  std::array<double, 4> stats(std::size_t i) const {
    const double m = static_cast<double>(n);
    const double a = s1[i] / m, b = s2[i] / m, c = s3[i] / m, d = s4[i] / m;
    const double var = b - a * a;
    const double m4 = d - 4 * a * c + 6 * a * a * b - 3 * a * a * a * a;
    return {shift[i] + a, var, std::sqrt(std::max(var, 0.0) / m),
            std::sqrt(std::max(0.0, m4 - var * var) / m)};
  }
};

// Draws `samples` outputs of `draw` and compares them entrywise with `g`.
template <class Draw>
std::size_t mc_mismatches(const GaussianActivation& g, std::size_t samples, std::uint64_t seed,
                          Draw draw, double& worst_z) {
  const std::size_t chunks = 64;
  std::vector<double> center(g.mean.values().begin(), g.mean.values().end());
  std::vector<Moments> parts(chunks, Moments(center));
  detail::parallel_for(chunks, [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    const std::size_t count = samples / chunks + (c < samples % chunks ? 1 : 0);
    for (std::size_t s = 0; s < count; ++s) parts[c].add(draw(rng).values());
  });
  Moments total(center);
  for (const Moments& m : parts) total.merge(m);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const auto [mean, var, se_mean, se_var] = total.stats(i);
    const double em = std::abs(mean - g.mean.values()[i]);
    const double ev = std::abs(var - g.var.values()[i]);
    if (se_mean > 0) worst_z = std::max(worst_z, em / se_mean);
    if (se_var > 0) worst_z = std::max(worst_z, ev / se_var);
    if (em > 4 * se_mean + 1e-12 || ev > 4 * se_var + 1e-12) ++bad;
  }
  return bad;
}

Matrix gaussian_draw(const GaussianActivation& g, Rng& rng) { return sample_from_moments(g, rng); }

SparseMatrix random_sparse(std::size_t n, Rng& rng, double density) {
  std::uniform_real_distribution<double> u(0.0, 1.0), w(0.1, 0.8);
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      if (r == c || u(rng) < density) t.push_back({static_cast<NodeId>(r), static_cast<NodeId>(c), w(rng)});
  return SparseMatrix::from_triplets(n, n, t);
}

std::vector<CheckResult> fastdropout_moments(std::uint64_t seed, std::size_t samples, double limit) {
  const auto start = Clock::now();
  Rng rng = make_rng(seed, 13);
  std::uniform_real_distribution<double> mean(-1.5, 1.5), var(0.05, 1.0), unit(-1.0, 1.0);
  auto random_g = [&](std::size_t rows) {
    GaussianActivation g{Matrix(rows, 4), Matrix(rows, 4)};
    for (double& v : g.mean.values()) v = mean(rng);
    for (double& v : g.var.values()) v = var(rng);
    return g;
  };
  struct Tally {
    std::size_t bad = 0;
    double worst_z = 0.0;
  };
  std::map<std::string, Tally> tally;
  const double keep = 0.6;
  for (std::size_t t = 0; t < 10; ++t) {
    const std::uint64_t s = derive_seed(seed, 400 + t);
    const GaussianActivation x = random_g(1);
    {
      Tally& k = tally["dropout"];
      k.bad += mc_mismatches(moments_dropout(x, keep), samples, s, [&](Rng& r) {
        Matrix h = gaussian_draw(x, r);
        return DropoutMask::sample(1, 4, keep, r).apply(h);
      }, k.worst_z);
    }
    {
      Matrix w(4, 4);
      for (double& v : w.values()) v = unit(rng);
      Tally& k = tally["linear"];
      k.bad += mc_mismatches(moments_linear(x, w), samples, s + 1, [&](Rng& r) {
        return kernels::gemm(gaussian_draw(x, r), w);
      }, k.worst_z);
    }
    {
      std::vector<double> gamma(4), beta(4);
      for (double& v : gamma) v = 1.0 + 0.5 * unit(rng);
      for (double& v : beta) v = unit(rng);
      const GaussianActivation predicted = moments_layernorm(x, gamma, beta);
      double m = 0.0, s2 = 0.0;
      for (double v : x.mean.values()) m += v / 4.0;
      for (double v : x.mean.values()) s2 += (v - m) * (v - m) / 4.0;
      const double sd = std::sqrt(s2) + kLayerNormEpsilon;
      Tally& k = tally["layernorm"];
      k.bad += mc_mismatches(predicted, samples, s + 2, [&](Rng& r) {
        Matrix h = gaussian_draw(x, r);
        for (std::size_t c = 0; c < 4; ++c) h(0, c) = gamma[c] * (h(0, c) - m) / sd + beta[c];
        return h;
      }, k.worst_z);
    }
    {
      Tally& k = tally["relu"];
      k.bad += mc_mismatches(moments_relu(x), samples, s + 3, [&](Rng& r) {
        Matrix h = gaussian_draw(x, r);
        for (double& v : h.values()) v = std::max(v, 0.0);
        return h;
      }, k.worst_z);
    }
    {
      const GaussianActivation h = random_g(4);
      const SparseMatrix p_hat = random_sparse(4, rng, 0.4);
      Tally& k = tally["ns-aggregate"];
      k.bad += mc_mismatches(moments_ns_aggregate(h, p_hat), samples, s + 4, [&](Rng& r) {
        return kernels::spmm(p_hat, gaussian_draw(h, r));
      }, k.worst_z);
    }
    {
      const GaussianActivation h = random_g(4), h_bar = random_g(4);
      const SparseMatrix p_hat = random_sparse(4, rng, 0.4), p = random_sparse(4, rng, 0.6);
      Tally& k = tally["cv-aggregate"];
      k.bad += mc_mismatches(moments_cv_aggregate(h, h_bar, p_hat, p), samples, s + 5, [&](Rng& r) {
        std::normal_distribution<double> normal;
        Matrix a(4, 4), b(4, 4);
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double e = normal(r);
          a.values()[i] = h.mean.values()[i] + std::sqrt(h.var.values()[i]) * e;
          b.values()[i] = h_bar.mean.values()[i] + std::sqrt(h_bar.var.values()[i]) * e;
        }
        return kernels::spmm(p_hat, a - b) + kernels::spmm(p, b);
      }, k.worst_z);
    }
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  std::vector<CheckResult> out;
  for (const auto& [name, k] : tally) {
    CheckResult r{"8 moment propagation, " + name, k.bad == 0 ? CheckStatus::kPass : CheckStatus::kFail,
                  std::to_string(k.bad) + " entries outside 4 SE over 10 inputs x " +
                      std::to_string(samples) + " samples (largest |z| " + fmt(k.worst_z) + ")",
                  0.0};
    out.push_back(r);
  }
  GaussianActivation standard{Matrix(1, 1, 0.0), Matrix(1, 1, 1.0)};
  const double relu_mean = moments_relu(standard).mean(0, 0);
  const double err = std::abs(relu_mean - 1.0 / std::sqrt(2.0 * std::numbers::pi));
  out.push_back({"8 moment propagation, relu mean of N(0, 1)",
                 err < 1e-9 ? CheckStatus::kPass : CheckStatus::kFail,
                 "E max(0, X) = " + fmt(relu_mean) + ", error " + fmt(err) + " (limit 1e-9)", 0.0});
  out.front().seconds = seconds;
  if (seconds >= limit)
    for (auto& r : out) {
      r.status = CheckStatus::kFail;
      r.detail += "; criterion exceeded the " + fmt(limit) + " s budget";
    }
  return out;
}

Outcome fastdropout_composition(std::uint64_t seed, std::size_t samples) {
  Rng rng = make_rng(seed, 14);
  const Graph g = random_graph(4, 0.5, 4, 4, derive_seed(seed, 15));
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = random_params({4, 4, 4}, seed);
  const double keep = 0.7;
  const GaussianActivation predicted = fastdropout_forward(p.matrix(), g.features, params, keep, 2, rng);
  std::size_t bad = 0;
  double worst_mean_gap = 0.0;
  Moments total(std::vector<double>(predicted.mean.values().begin(), predicted.mean.values().end()));
  const std::size_t chunks = 64;
  std::vector<Moments> parts(chunks, total);
  detail::parallel_for(chunks, [&](std::size_t c) {
    Rng r = make_rng(derive_seed(seed, 16), c);
    for (std::size_t s = 0; s < samples / chunks; ++s) {
      Matrix h = g.features;
      for (std::size_t l = 0; l < params.num_layers(); ++l) {
        Matrix u = kernels::spmm(p.matrix(), h);
        u = DropoutMask::sample(u.rows(), u.cols(), keep, r).apply(u);
        h = kernels::gemm(u, params.weights[l]);
        if (l + 1 < params.num_layers())
          for (double& v : h.values()) v = std::max(v, 0.0);
      }
      parts[c].add(h.values());
    }
  });
  for (const Moments& m : parts) total.merge(m);
  for (std::size_t i = 0; i < predicted.mean.size(); ++i) {
    const auto st = total.stats(i);
    worst_mean_gap = std::max(worst_mean_gap, std::abs(st[0] - predicted.mean.values()[i]));
    if (std::abs(st[0] - predicted.mean.values()[i]) > 4 * st[2]) ++bad;
  }
  return {bad == 0, std::to_string(bad) + " of " + std::to_string(predicted.mean.size()) +
                        " logit means outside 4 SE (largest gap " + fmt(worst_mean_gap) + ")"};
}

// ---------------------------------------------------------------- criterion 9

Outcome two_layer_independence(std::uint64_t seed) {
  SbmConfig sbm;
  sbm.seed = derive_seed(seed, 17);
  const Graph g = generate_sbm(sbm);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = random_params({sbm.feature_dim, 16, sbm.communities}, seed);
  CorrelationConfig cfg;
  cfg.preprocessed = true;
  cfg.dropout_rate = 0.5;
  cfg.samples_per_layer = {2};
  cfg.samples = 1000;
  cfg.seed = seed;
  const auto layers = correlation_diagnostics(p, g.features, params, cfg);
  const LayerCorrelation& l1 = layers.front();
  const double bound = 4.0 / std::sqrt(1000.0);
  return {std::abs(l1.neighbor_correlation) < bound && l1.neighbor_terms > 0,
          "layer-1 average neighbour correlation " + fmt(l1.neighbor_correlation) + " over " +
              std::to_string(l1.neighbor_terms) + " (node, dim) terms (bound " + fmt(bound) +
              "); feature correlation " + fmt(l1.feature_correlation) + ", " +
              std::to_string(l1.excluded_pairs) + " zero-variance pairs excluded"};
}

// ---------------------------------------------------------------- criterion 10

CheckResult cora_accuracy(const std::string& dir, std::uint64_t seed) {
  const std::string name = "10 cvd+pp on Cora reaches test accuracy 0.79";
  if (dir.empty() || !std::filesystem::exists(DatasetPaths::in_directory(dir).edges))
    return {name, CheckStatus::kSkip, "no Cora files provided", 0.0};
  return timed(name, 600.0, [&] {
    const Graph g = load_dataset(DatasetPaths::in_directory(dir));
    TrainConfig cfg;
    cfg.estimator.kind = Estimator::kCVD;
    cfg.estimator.preprocess_first_layer = true;
    cfg.estimator.dropout_rate = 0.5;
    cfg.samples_per_layer = {2};
    cfg.hidden_dims = {16};
    cfg.epochs = 200;
    cfg.weight_decay = 5e-4;
    cfg.seed = seed;
    const TrainResult r = train(g, cfg);
    const double acc = evaluate(g, build_propagation(g), r.best_params, g.splits.test);
    return Outcome{acc >= 0.79, "test accuracy " + fmt(acc) + " (best validation epoch " +
                                    std::to_string(r.report.best_epoch) + ")"};
  });
}

// ---------------------------------------------------------------- sampling MC

Outcome sampler_unbiased(std::uint64_t seed, SelfLoopWeighting weighting, std::size_t plans) {
  const Graph g = random_graph(8, 0.5, 2, 2, derive_seed(seed, 18));
  const PropagationMatrix p = build_propagation(g);
  const std::size_t n = g.num_nodes;
  SamplerConfig cfg;
  cfg.samples_per_layer = {2};
  cfg.self_weighting = weighting;
  const std::vector<NodeId> all = iota_nodes(n);
  std::vector<Matrix> sums(64, Matrix(n, n)), squares(64, Matrix(n, n));
  detail::parallel_for(64, [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    for (std::size_t t = c; t < plans; t += 64) {
      const ReceptiveFieldPlan plan = build_receptive_fields(p, all, cfg, rng);
      const PlanLayer& pl = plan.layers.front();
      for (std::size_t r = 0; r < pl.nodes_out.size(); ++r) {
        const auto cols = pl.p_hat.row_cols(r);
        const auto vals = pl.p_hat.row_values(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
          sums[c](pl.nodes_out[r], pl.nodes_in[cols[k]]) += vals[k];
          squares[c](pl.nodes_out[r], pl.nodes_in[cols[k]]) += vals[k] * vals[k];
        }
      }
    }
  });
  Matrix sum(n, n), sq(n, n);
  for (std::size_t c = 0; c < 64; ++c) {
    sum += sums[c];
    sq += squares[c];
  }
  const double m = static_cast<double>(plans);
  std::size_t bad = 0;
  for (NodeId u = 0; u < n; ++u) {
    const std::vector<double> expected = expectation_of_p_hat(p, u, cfg);
    for (NodeId v = 0; v < n; ++v) {
      const double mean = sum(u, v) / m;
      const double var = std::max(0.0, sq(u, v) / m - mean * mean);
      const double se = std::sqrt(var / m);
      if (std::abs(mean - expected[v]) > 4 * se + 1e-12) ++bad;
    }
  }
  return {bad == 0, std::to_string(bad) + " of " + std::to_string(n * n) +
                        " entries of E[P_hat] outside 4 SE over " + std::to_string(plans) + " plans"};
}

Outcome importance_unbiased(std::uint64_t seed, std::size_t draws) {
  const Graph g = random_graph(12, 0.3, 3, 2, derive_seed(seed, 19));
  const PropagationMatrix p = build_propagation(g);
  const std::size_t n = g.num_nodes;
  const Matrix exact = kernels::spmm(p.matrix(), g.features);
  const std::vector<double> q = importance_distribution(p);
  const std::vector<NodeId> all = iota_nodes(n);
  Moments total(std::vector<double>(exact.values().begin(), exact.values().end()));
  std::vector<Moments> parts(64, total);
  detail::parallel_for(64, [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    for (std::size_t t = c; t < draws; t += 64) {
      const PlanLayer layer = sample_importance_layer(p, q, all, 4, rng);
      parts[c].add(kernels::spmm(layer.p_hat, gather_rows(g.features, layer.nodes_in)).values());
    }
  });
  for (const Moments& m : parts) total.merge(m);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const auto st = total.stats(i);
    if (std::abs(st[0] - exact.values()[i]) > 4 * st[2] + 1e-12) ++bad;
  }
  return {bad == 0, std::to_string(bad) + " of " + std::to_string(exact.size()) +
                        " entries of the importance estimate of P.H outside 4 SE over " +
                        std::to_string(draws) + " draws"};
}

}  // namespace

GradCheckReport grad_check(const Graph& graph, const ModelParams& params,
                           const GradCheckConfig& cfg) {
  params.validate();
  require(cfg.step > 0.0, "grad_check: step must be positive");
  const EstimatorKind& est = cfg.estimator;
  const bool pp = est.preprocess_first_layer;
  const PropagationMatrix p = build_propagation(graph);
  const Matrix x = pp ? preprocess_input(p, graph.features) : graph.features;
  Rng rng = make_rng(cfg.seed, 21);

  std::vector<NodeId> nodes = graph.splits.train;
  require(!nodes.empty(), "grad_check: empty training split");
  std::shuffle(nodes.begin(), nodes.end(), rng);
  nodes.resize(std::min(cfg.minibatch_size, nodes.size()));

  ReceptiveFieldPlan plan;
  if (est.kind != Estimator::kExact) {
    SamplerConfig sc;
    sc.samples_per_layer = cfg.samples_per_layer;
    sc.mode = sampler_mode_for(est.kind);
    sc.self_weighting = cfg.self_weighting;
    plan = build_receptive_fields(p, nodes, sc, rng);
  }
  HistoryStore history = make_history(graph.num_nodes, params);
  if (est.kind == Estimator::kCV || est.kind == Estimator::kCVD) {
    ModelParams stale = params;
    for (Matrix& w : stale.weights) w *= 0.8;
    seed_exact_history(history, p, x, stale, pp);
  }
  std::vector<bool> is_train(graph.num_nodes, false);
  for (NodeId v : graph.splits.train) is_train[v] = true;

  auto loss = [&](const ModelParams& w, std::vector<Matrix>* grads) {
    Rng dropout_rng = make_rng(cfg.seed, 22);
    ForwardOptions opts;
    opts.preprocessed = pp;
    opts.keep_prob = est.keep_prob();
    opts.dropout_rng = &dropout_rng;
    opts.cvd_scaling = est.cvd_scaling;
    ForwardPass pass;
    switch (est.kind) {
      case Estimator::kExact: pass = forward_exact(p, x, w, opts); break;
      case Estimator::kCV: pass = forward_cv(p, plan, x, w, history, opts); break;
      case Estimator::kCVD: pass = forward_cvd(p, plan, x, w, history, opts); break;
      default: pass = forward_ns(plan, x, w, opts); break;
    }
    auto [l, count] = attach_loss(pass, graph.labels, is_train);
    require(count > 0, "grad_check: no loss nodes");
    if (grads) {
      pass.tape.backward(l);
      for (Var v : pass.weights) grads->push_back(pass.tape.grad(v));
    }
    return pass.tape.value(l)(0, 0);
  };

  std::vector<Matrix> analytic;
  loss(params, &analytic);
  GradCheckReport report;
  ModelParams probe = params;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.weights[l].size(); ++i) {
      double& w = probe.weights[l].values()[i];
      const double saved = w;
      w = saved + cfg.step;
      const double up = loss(probe, nullptr);
      w = saved - cfg.step;
      const double down = loss(probe, nullptr);
      w = saved;
      const double numeric = (up - down) / (2.0 * cfg.step);
      const double a = analytic[l].values()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
    }
    report.max_rel_error.push_back(worst);
  }
  return report;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"prop1-variance", "table2",       "theorem1",
                                              "gradcheck",      "fastdropout",  "unbiasedness",
                                              "correlation"};
  return names;
}

SuiteReport run_suite(const std::string& name, std::uint64_t seed) {
  SuiteReport r;
  r.suite = name;
  auto& c = r.checks;
  if (name == "prop1-variance") {
    c.push_back(timed("closed-form subset variance matches enumeration", 0.0,
                      [&] { return subset_variance_equivalence(seed, 1000); }));
    c.push_back(timed("zero-mean uncorrelated subset sum variance", 0.0,
                      [&] { return subset_sum_variance(seed); }));
  } else if (name == "table2") {
    for (CheckResult& x : estimator_variance_rows(seed, 1e9)) c.push_back(std::move(x));
    c.push_back(timed("variance of a zero-mean term plus an independent term adds", 0.0,
                      [&] { return variance_split(seed); }));
  } else if (name == "theorem1") {
    c.push_back(timed("cv forward with fixed weights is exact after L epochs", 0.0,
                      [&] { return exact_testing(seed, 10); }));
    c.push_back(timed("a never-scanned node breaks exactness", 0.0,
                      [&] { return exact_testing_needs_every_node(seed); }));
  } else if (name == "gradcheck") {
    c.push_back(timed("backprop matches central differences", 0.0,
                      [&] { return gradient_correctness(seed); }));
  } else if (name == "fastdropout") {
    for (CheckResult& x : fastdropout_moments(seed, 1000000, 1e9)) c.push_back(std::move(x));
    c.push_back(timed("two-layer moment pipeline mean", 0.0,
                      [&] { return fastdropout_composition(seed, 1000000); }));
  } else if (name == "unbiasedness") {
    c.push_back(timed("sampled propagation rows match their analytic mean (scaled self)", 0.0,
                      [&] { return sampler_unbiased(seed, SelfLoopWeighting::kScaled, 100000); }));
    c.push_back(timed("sampled propagation rows match their analytic mean (exact self)", 0.0,
                      [&] { return sampler_unbiased(seed, SelfLoopWeighting::kExact, 100000); }));
    c.push_back(timed("importance-sampled aggregation is unbiased", 0.0,
                      [&] { return importance_unbiased(seed, 100000); }));
    c.push_back(timed("cv gradient with exact history is unbiased", 0.0,
                      [&] { return cv_gradient_unbiased(seed, 10000); }));
  } else if (name == "correlation") {
    c.push_back(timed("neighbour activations are uncorrelated after a preprocessed first layer",
                      0.0, [&] { return two_layer_independence(seed); }));
  } else {
    throw InputError("unknown suite '" + name + "'");
  }
  return r;
}

SuiteReport run_acceptance(const AcceptanceOptions& opts) {
  const std::uint64_t seed = opts.seed;
  SuiteReport r;
  r.suite = "acceptance";
  auto& c = r.checks;
  c.push_back(timed("1 subset-sampling variance, closed form vs enumeration", 5.0,
                    [&] { return subset_variance_equivalence(seed, 1000); }));
  c.push_back(timed("2 exact testing with fixed weights, 64 nodes, 10 seeds", 10.0,
                    [&] { return exact_testing(seed, 10); }));
  c.push_back(timed("3 gradient check, all estimators on 5 nodes", 5.0,
                    [&] { return gradient_correctness(seed); }));
  c.push_back(timed("4 cv gradient unbiased after warm-up, 16 nodes", 60.0,
                    [&] { return cv_gradient_unbiased(seed, 10000); }));
  for (CheckResult& x : estimator_variance_rows(seed, 120.0)) c.push_back(std::move(x));
  c.push_back(timed("6 estimator-collapse lattice on 20 graphs", 0.0,
                    [&] { return collapse_lattice(seed, 20); }));
  for (CheckResult& x : convergence_parity(seed, 120.0)) c.push_back(std::move(x));
  for (CheckResult& x : fastdropout_moments(seed, 1000000, 60.0)) c.push_back(std::move(x));
  c.push_back(timed("9 two-layer neighbour independence with preprocessing", 0.0,
                    [&] { return two_layer_independence(seed); }));
  c.push_back(cora_accuracy(opts.cora_dir, seed));
  return r;
}

}  // namespace vrgcn
