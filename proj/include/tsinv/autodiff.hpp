#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every backward rule is written in terms of the same differentiable ops, so
// the gradients returned by Grad(..., create_graph=true) are graph nodes that
// can be differentiated again. Attacks rely on this: they differentiate a
// distance between gradients with respect to the inputs that produced them.
//
// A graph is confined to the thread that built it. Grad mode is thread-local.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "tsinv/tensor.hpp"

namespace tsinv::ad {

class Var;
struct Node;

// Maps output position -> input position; -1 reads as zero.
using IndexMap = std::shared_ptr<const std::vector<int32_t>>;

using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Var> parents;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var Constant(Tensor value);
  static Var Leaf(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

  // Same value, cut from the graph.
  Var Detached() const { return Constant(value()); }

 private:
  std::shared_ptr<Node> node_;
};

bool GradEnabled();

// Scoped override of the thread-local grad mode.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// Gradients of a scalar `loss` with respect to `leaves`. Leaves not reached
// from the loss receive explicit zeros. With create_graph the results are
// themselves differentiable.
std::vector<Var> Grad(const Var& loss, std::span<const Var> leaves, bool create_graph = false);

// Elementwise arithmetic with numpy-style broadcasting.
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Div(const Var& a, const Var& b);
Var Neg(const Var& a);
Var Scale(const Var& a, double s);
Var AddScalar(const Var& a, double s);

Var Sigmoid(const Var& x);
Var Tanh(const Var& x);
Var Relu(const Var& x);
Var Abs(const Var& x);
Var Sqrt(const Var& x);
Var Square(const Var& x);
// max(x, c) elementwise.
Var MaxScalar(const Var& x, double c);
Var Clamp(const Var& x, double lo, double hi);

// C = op(A) * op(B) for rank-2 operands, op = transpose when the flag is set.
Var MatMul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);

Var Reshape(const Var& x, Shape shape);
Var Permute(const Var& x, const std::vector<int>& perm);
Var Transpose(const Var& x);  // rank-2
Var Gather(const Var& x, IndexMap index, Shape out_shape);
Var ScatterAdd(const Var& x, IndexMap index, Shape out_shape);
Var BroadcastTo(const Var& x, const Shape& shape);
Var SumTo(const Var& x, const Shape& shape);
Var Sum(const Var& x);
Var Mean(const Var& x);
Var Slice(const Var& x, int axis, int64_t start, int64_t length);
Var Concat(const std::vector<Var>& parts, int axis);
Var Flatten(const Var& x);

// Causal/dilated 1-D convolution. x: (B, C, T), w: (O, C, K), bias: (O) or undefined.
// Output length is T + pad_left + pad_right - dilation * (K - 1).
Var Conv1d(const Var& x, const Var& w, const Var& bias, int dilation, int pad_left, int pad_right);
// Non-overlapping max pooling over the last axis of (B, C, T); T / k outputs.
Var MaxPool1d(const Var& x, int k);

Shape BroadcastShape(const Shape& a, const Shape& b);

inline Var operator+(const Var& a, const Var& b) { return Add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return Sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return Mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return Div(a, b); }
inline Var operator-(const Var& a) { return Neg(a); }
inline Var operator*(const Var& a, double s) { return Scale(a, s); }
inline Var operator*(double s, const Var& a) { return Scale(a, s); }
inline Var operator+(const Var& a, double s) { return AddScalar(a, s); }
inline Var operator-(double s, const Var& a) { return AddScalar(Neg(a), s); }

}  // namespace tsinv::ad
