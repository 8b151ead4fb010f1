#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vrgcn/dense.hpp"

namespace vrgcn {

enum class OptimizerKind { kSgd, kAdam };
enum class LrSchedule {
  kConstant,
  kInvSqrt,  // lr / sqrt(t), t = 1, 2, ...
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 0.01;
  LrSchedule schedule = LrSchedule::kConstant;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Plain SGD or Adam with bias correction, over a fixed list of parameter matrices.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  void step(std::span<Matrix> params, std::span<const Matrix> grads);
  std::size_t steps() const noexcept { return t_; }
  double current_lr() const noexcept;

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace vrgcn
