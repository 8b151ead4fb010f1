#include "vrgcn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "vrgcn/kernels.hpp"

namespace vrgcn {

DropoutMask DropoutMask::sample(std::size_t rows, std::size_t cols, double keep_prob, Rng& rng) {
  require(keep_prob > 0.0 && keep_prob <= 1.0, "dropout: keep probability must be in (0, 1]");
  DropoutMask m{Matrix(rows, cols), keep_prob};
  std::bernoulli_distribution keep(keep_prob);
  for (double& v : m.mask.values()) v = keep(rng) ? 1.0 : 0.0;
  return m;
}

Matrix DropoutMask::apply(const Matrix& x) const {
  Matrix out = hadamard(x, mask);
  out *= 1.0 / keep_prob;
  return out;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  require(v.id < nodes_.size(), "Tape: unknown variable");
  return nodes_[v.id];
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.cols() == nb.value.rows(), "Tape::matmul: shape mismatch");
  Node n;
  n.kind = OpKind::kMatmul;
  n.a = a.id;
  n.b = b.id;
  n.value = kernels::gemm(na.value, nb.value);
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::spmm(const SparseMatrix& s, Var a) {
  const Node& na = node(a);
  require(s.cols() == na.value.rows(), "Tape::spmm: shape mismatch");
  Node n;
  n.kind = OpKind::kSpmm;
  n.a = a.id;
  n.sparse = &s;
  n.value = kernels::spmm(s, na.value);
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.same_shape(nb.value), "Tape::add: shape mismatch");
  Node n;
  n.kind = OpKind::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.value = na.value + nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.same_shape(nb.value), "Tape::sub: shape mismatch");
  Node n;
  n.kind = OpKind::kSub;
  n.a = a.id;
  n.b = b.id;
  n.value = na.value - nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  const Node& na = node(a);
  Node n;
  n.kind = OpKind::kScale;
  n.a = a.id;
  n.factor = factor;
  n.value = na.value * factor;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  const Node& na = node(a);
  Node n;
  n.kind = OpKind::kRelu;
  n.a = a.id;
  n.value = na.value;
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::dropout(Var a, DropoutMask mask) {
  const Node& na = node(a);
  require(mask.mask.same_shape(na.value), "Tape::dropout: mask shape mismatch");
  Node n;
  n.kind = OpKind::kDropout;
  n.a = a.id;
  n.value = mask.apply(na.value);
  n.aux = std::move(mask.mask);
  n.factor = 1.0 / mask.keep_prob;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  const Node& na = node(a);
  Node n;
  n.kind = OpKind::kSum;
  n.a = a.id;
  n.value = Matrix(1, 1, vrgcn::sum(na.value));
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels,
                                std::span<const double> row_weights) {
  const Matrix& z = node(logits).value;
  require(labels.size() == z.rows() && row_weights.size() == z.rows(),
          "softmax_cross_entropy: one label and weight per row");
  Node n;
  n.kind = OpKind::kSoftmaxCrossEntropy;
  n.a = logits.id;
  n.aux = Matrix(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (row_weights[i] == 0.0) continue;
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < z.cols(),
            "softmax_cross_entropy: label out of range");
    auto row = z.row(i);
    const double m = *std::ranges::max_element(row);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - m);
    const double lse = m + std::log(denom);
    loss += row_weights[i] * (lse - row[static_cast<std::size_t>(labels[i])]);
    auto g = n.aux.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) g[c] = row_weights[i] * std::exp(row[c] - lse);
    g[static_cast<std::size_t>(labels[i])] -= row_weights[i];
  }
  n.value = Matrix(1, 1, loss);
  n.requires_grad = node(logits).requires_grad;
  return push(std::move(n));
}

Var Tape::sigmoid_cross_entropy(Var logits, const Matrix& targets,
                                std::span<const double> row_weights) {
  const Matrix& z = node(logits).value;
  require(targets.same_shape(z) && row_weights.size() == z.rows(),
          "sigmoid_cross_entropy: target shape mismatch");
  Node n;
  n.kind = OpKind::kSigmoidCrossEntropy;
  n.a = logits.id;
  n.aux = Matrix(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (row_weights[i] == 0.0) continue;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      const double x = z(i, c);
      const double t = targets(i, c);
      loss += row_weights[i] * (std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))));
      const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      n.aux(i, c) = row_weights[i] * (sig - t);
    }
  }
  n.value = Matrix(1, 1, loss);
  n.requires_grad = node(logits).requires_grad;
  return push(std::move(n));
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  n.grad += g;
}

const Matrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(loss.id < nodes_.size(), "Tape::backward: unknown variable");
  require(nodes_[loss.id].value.rows() == 1 && nodes_[loss.id].value.cols() == 1,
          "Tape::backward: root must be a scalar");
  for (Node& n : nodes_)
    n.grad = n.requires_grad ? Matrix(n.value.rows(), n.value.cols()) : Matrix();
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad(0, 0) = 1.0;

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.kind == OpKind::kLeaf) continue;
    const Matrix& g = n.grad;
    switch (n.kind) {
      case OpKind::kMatmul:
        if (nodes_[n.a].requires_grad) accumulate(n.a, kernels::gemm_nt(g, nodes_[n.b].value));
        if (nodes_[n.b].requires_grad) accumulate(n.b, kernels::gemm_tn(nodes_[n.a].value, g));
        break;
      case OpKind::kSpmm:
        accumulate(n.a, kernels::spmm(n.sparse->transpose(), g));
        break;
      case OpKind::kAdd:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case OpKind::kSub:
        accumulate(n.a, g);
        if (nodes_[n.b].requires_grad) accumulate(n.b, g * -1.0);
        break;
      case OpKind::kScale:
        accumulate(n.a, g * n.factor);
        break;
      case OpKind::kRelu: {
        Matrix local = g;
        auto in = nodes_[n.a].value.values();
        auto out = local.values();
        for (std::size_t i = 0; i < out.size(); ++i)
          if (!(in[i] > 0.0)) out[i] = 0.0;
        accumulate(n.a, local);
        break;
      }
      case OpKind::kDropout:
        accumulate(n.a, hadamard(g, n.aux) * n.factor);
        break;
      case OpKind::kSum:
        accumulate(n.a, Matrix(nodes_[n.a].value.rows(), nodes_[n.a].value.cols(), g(0, 0)));
        break;
      case OpKind::kSoftmaxCrossEntropy:
      case OpKind::kSigmoidCrossEntropy:
        accumulate(n.a, n.aux * g(0, 0));
        break;
      case OpKind::kLeaf:
        break;
    }
  }
}

}  // namespace vrgcn
