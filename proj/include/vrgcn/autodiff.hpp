#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vrgcn/dense.hpp"
#include "vrgcn/random.hpp"
#include "vrgcn/sparse.hpp"

namespace vrgcn {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Binary Bernoulli(keep_prob) mask, applied as inverted dropout: x ∘ M / keep_prob.
struct DropoutMask {
  Matrix mask;
  double keep_prob = 1.0;

  static DropoutMask sample(std::size_t rows, std::size_t cols, double keep_prob, Rng& rng);
  Matrix apply(const Matrix& x) const;
};

enum class OpKind {
  kLeaf,
  kMatmul,
  kSpmm,
  kAdd,
  kSub,
  kScale,
  kRelu,
  kDropout,
  kSum,
  kSoftmaxCrossEntropy,
  kSigmoidCrossEntropy,
};

/// Reverse-mode autodiff over dense matrices. Nodes are appended in
/// topological order; backward() walks them once in reverse and accumulates
/// gradients additively on fan-out. Sparse operands are constants: gradients
/// flow only into the dense operand, and the SparseMatrix must outlive the tape.
class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad = false);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  Var matmul(Var a, Var b);
  Var spmm(const SparseMatrix& s, Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double factor);
  /// ReLU; the derivative at exactly 0 is 0.
  Var relu(Var a);
  Var dropout(Var a, DropoutMask mask);
  /// 1x1 sum of all entries.
  Var sum(Var a);
  /// 1x1: Σ_i w_i·(logsumexp(z_i) - z_i[y_i]). Rows with w_i == 0 are ignored.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels,
                            std::span<const double> row_weights);
  /// 1x1: Σ_i w_i·Σ_c BCE(sigmoid(z_ic), t_ic).
  Var sigmoid_cross_entropy(Var logits, const Matrix& targets, std::span<const double> row_weights);

  void backward(Var loss);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() root w.r.t. v (zeros if v does not reach it).
  const Matrix& grad(Var v) const;
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::size_t a = static_cast<std::size_t>(-1);
    std::size_t b = static_cast<std::size_t>(-1);
    Matrix value;
    Matrix grad;
    Matrix aux;  // dropout mask, or d(loss)/d(logits) for the loss nodes
    double factor = 1.0;
    const SparseMatrix* sparse = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void accumulate(std::size_t id, const Matrix& g);

  std::vector<Node> nodes_;
};

}  // namespace vrgcn
