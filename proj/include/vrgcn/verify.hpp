#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "vrgcn/graph.hpp"
#include "vrgcn/model.hpp"
#include "vrgcn/sampling.hpp"

namespace vrgcn {

enum class CheckStatus { kPass, kFail, kSkip, kInfo };

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::kFail;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  /// True when no check failed. Skipped and informational lines do not count.
  bool passed() const;
};

/// prop1-variance, table2, theorem1, gradcheck, fastdropout, unbiasedness, correlation.
const std::vector<std::string>& suite_names();
/// Throws InputError for an unknown suite.
SuiteReport run_suite(const std::string& name, std::uint64_t seed = 0);

struct AcceptanceOptions {
  /// Directory with the Cora files in dataset layout; empty skips criterion 10.
  std::string cora_dir;
  std::uint64_t seed = 0;
};
SuiteReport run_acceptance(const AcceptanceOptions& opts);

/// One line per check: "[PASS] name: detail (1.23 s)".
void print_report(std::ostream& out, const SuiteReport& report);

struct GradCheckConfig {
  EstimatorKind estimator;
  std::vector<std::size_t> samples_per_layer{2, 2};
  SelfLoopWeighting self_weighting = SelfLoopWeighting::kScaled;
  std::size_t minibatch_size = 3;
  double step = 1e-5;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::vector<double> max_rel_error;  // per weight matrix
  double worst() const;
};

/// Central differences against backprop with the plan, dropout masks and
/// history frozen. CV/CVD history is seeded from stale weights (0.8·W) so the
/// correction terms are non-zero. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const Graph& graph, const ModelParams& params,
                           const GradCheckConfig& cfg);

}  // namespace vrgcn
