#include "vrgcn/optimizer.hpp"

#include <cmath>

namespace vrgcn {

void OptimizerConfig::validate() const {
  require(lr > 0.0, "optimizer: learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "optimizer: Adam betas must lie in [0, 1)");
  require(eps > 0.0, "optimizer: eps must be positive");
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

double Optimizer::current_lr() const noexcept {
  const double t = static_cast<double>(t_ == 0 ? 1 : t_);
  return cfg_.schedule == LrSchedule::kInvSqrt ? cfg_.lr / std::sqrt(t) : cfg_.lr;
}

void Optimizer::step(std::span<Matrix> params, std::span<const Matrix> grads) {
  require(params.size() == grads.size(), "optimizer: one gradient per parameter");
  for (std::size_t i = 0; i < params.size(); ++i)
    require(params[i].same_shape(grads[i]), "optimizer: gradient shape mismatch");
  ++t_;
  const double lr = current_lr();
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].values();
      auto g = grads[i].values();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
    }
    return;
  }
  if (m_.empty()) {
    for (const Matrix& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

}  // namespace vrgcn
