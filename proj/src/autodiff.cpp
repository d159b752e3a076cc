#include "tsinv/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace tsinv::ad {
namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void CheckFinite(const Tensor& t, const char* op) {
  if (!t.AllFinite()) throw NumericError(std::string("non-finite result in op '") + op + "'");
}

// Records a result node. Parents are kept only when grad mode is on and at
// least one of them takes part in differentiation.
Var MakeResult(Tensor value, const char* op, std::vector<Var> parents, BackwardFn backward) {
  CheckFinite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

std::vector<int64_t> Strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

IndexMap MakeIndex(std::vector<int32_t> v) { return std::make_shared<const std::vector<int32_t>>(std::move(v)); }

// For each element of `big`, the position of the element of `small` it reads
// under broadcasting.
IndexMap BroadcastIndex(const Shape& small, const Shape& big) {
  const size_t offset = big.size() - small.size();
  const auto small_strides = Strides(small);
  const int64_t n = NumElements(big);
  std::vector<int32_t> idx(static_cast<size_t>(n));
  std::vector<int64_t> coord(big.size(), 0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t src = 0;
    for (size_t a = 0; a < small.size(); ++a) {
      if (small[a] != 1) src += coord[a + offset] * small_strides[a];
    }
    idx[static_cast<size_t>(i)] = static_cast<int32_t>(src);
    for (int a = static_cast<int>(big.size()) - 1; a >= 0; --a) {
      if (++coord[a] < big[a]) break;
      coord[a] = 0;
    }
  }
  return MakeIndex(std::move(idx));
}

template <typename F>
Tensor MapUnary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <typename F>
Tensor MapBinary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (size_t i = 0; i < x.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

// Brings both operands to a common shape.
std::pair<Var, Var> Conform(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return {a, b};
  Shape s = BroadcastShape(a.shape(), b.shape());
  return {a.shape() == s ? a : BroadcastTo(a, s), b.shape() == s ? b : BroadcastTo(b, s)};
}

}  // namespace

Var Var::Constant(Tensor value) {
  CheckFinite(value, "constant");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var Var::Leaf(Tensor value) {
  CheckFinite(value, "leaf");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool GradEnabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

std::vector<Var> Grad(const Var& loss, std::span<const Var> leaves, bool create_graph) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("Grad requires a scalar loss, got shape " + (loss.defined() ? ShapeString(loss.shape()) : "<undefined>"));
  }

  // Post-order DFS over the differentiable part of the graph.
  std::vector<std::shared_ptr<Node>> order;
  if (loss.requires_grad()) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
    stack.emplace_back(loss.shared(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        const Var& p = node->parents[next++];
        if (p.requires_grad() && visited.insert(p.node()).second) stack.emplace_back(p.shared(), 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<Node*> wanted;
  for (const Var& leaf : leaves) wanted.insert(leaf.node());

  GradModeGuard mode(create_graph);
  std::unordered_map<Node*, Var> grads;
  if (loss.requires_grad()) grads[loss.node()] = Var::Constant(Tensor(loss.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    Var g = found->second;
    if (!wanted.count(node)) grads.erase(found);
    std::vector<Var> parent_grads = node->backward(Var(*it), g);
    for (size_t i = 0; i < node->parents.size(); ++i) {
      const Var& p = node->parents[i];
      if (!p.requires_grad() || i >= parent_grads.size() || !parent_grads[i].defined()) continue;
      auto slot = grads.find(p.node());
      if (slot == grads.end()) {
        grads.emplace(p.node(), parent_grads[i]);
      } else {
        slot->second = Add(slot->second, parent_grads[i]);
      }
    }
  }

  std::vector<Var> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) {
    auto found = grads.find(leaf.node());
    out.push_back(found != grads.end() ? found->second : Var::Constant(Tensor(leaf.shape(), 0.0)));
  }
  return out;
}

Shape BroadcastShape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + ShapeString(a) + " and " + ShapeString(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Var Add(const Var& a0, const Var& b0) {
  auto [a, b] = Conform(a0, b0);
  return MakeResult(MapBinary(a.value(), b.value(), std::plus<>()), "add", {a, b},
                    [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var Sub(const Var& a0, const Var& b0) {
  auto [a, b] = Conform(a0, b0);
  return MakeResult(MapBinary(a.value(), b.value(), std::minus<>()), "sub", {a, b},
                    [](const Var&, const Var& g) { return std::vector<Var>{g, Neg(g)}; });
}

Var Mul(const Var& a0, const Var& b0) {
  auto [a, b] = Conform(a0, b0);
  return MakeResult(MapBinary(a.value(), b.value(), std::multiplies<>()), "mul", {a, b},
                    [a, b](const Var&, const Var& g) {
                      return std::vector<Var>{a.requires_grad() ? Mul(g, b) : Var(),
                                              b.requires_grad() ? Mul(g, a) : Var()};
                    });
}

Var Div(const Var& a0, const Var& b0) {
  auto [a, b] = Conform(a0, b0);
  return MakeResult(MapBinary(a.value(), b.value(), std::divides<>()), "div", {a, b},
                    [b](const Var& self, const Var& g) {
                      Var ga = Div(g, b);
                      return std::vector<Var>{ga, b.requires_grad() ? Neg(Mul(ga, self)) : Var()};
                    });
}

Var Neg(const Var& a) {
  return MakeResult(MapUnary(a.value(), [](double v) { return -v; }), "neg", {a},
                    [](const Var&, const Var& g) { return std::vector<Var>{Neg(g)}; });
}

Var Scale(const Var& a, double s) {
  return MakeResult(MapUnary(a.value(), [s](double v) { return v * s; }), "scale", {a},
                    [s](const Var&, const Var& g) { return std::vector<Var>{Scale(g, s)}; });
}

Var AddScalar(const Var& a, double s) {
  return MakeResult(MapUnary(a.value(), [s](double v) { return v + s; }), "add_scalar", {a},
                    [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

Var Sigmoid(const Var& x) {
  return MakeResult(MapUnary(x.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); }), "sigmoid", {x},
                    [](const Var& self, const Var& g) {
                      return std::vector<Var>{Mul(g, Mul(self, 1.0 - self))};
                    });
}

Var Tanh(const Var& x) {
  return MakeResult(MapUnary(x.value(), [](double v) { return std::tanh(v); }), "tanh", {x},
                    [](const Var& self, const Var& g) {
                      return std::vector<Var>{Mul(g, 1.0 - Square(self))};
                    });
}

Var Relu(const Var& x) { return MaxScalar(x, 0.0); }

Var MaxScalar(const Var& x, double c) {
  return MakeResult(MapUnary(x.value(), [c](double v) { return v > c ? v : c; }), "max_scalar", {x},
                    [x, c](const Var&, const Var& g) {
                      Var mask = Var::Constant(MapUnary(x.value(), [c](double v) { return v > c ? 1.0 : 0.0; }));
                      return std::vector<Var>{Mul(g, mask)};
                    });
}

Var Clamp(const Var& x, double lo, double hi) {
  return MakeResult(MapUnary(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }), "clamp", {x},
                    [x, lo, hi](const Var&, const Var& g) {
                      Var mask = Var::Constant(
                          MapUnary(x.value(), [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; }));
                      return std::vector<Var>{Mul(g, mask)};
                    });
}

Var Abs(const Var& x) {
  return MakeResult(MapUnary(x.value(), [](double v) { return std::fabs(v); }), "abs", {x},
                    [x](const Var&, const Var& g) {
                      Var sign = Var::Constant(
                          MapUnary(x.value(), [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
                      return std::vector<Var>{Mul(g, sign)};
                    });
}

Var Sqrt(const Var& x) {
  for (double v : x.value().data()) {
    if (v < 0) throw NumericError("sqrt of negative value");
  }
  return MakeResult(MapUnary(x.value(), [](double v) { return std::sqrt(v); }), "sqrt", {x},
                    [](const Var& self, const Var& g) {
                      // d sqrt(x) = 1 / (2 sqrt(x)); the floor keeps the zero point finite.
                      return std::vector<Var>{Div(Scale(g, 0.5), MaxScalar(self, 1e-150))};
                    });
}

Var Square(const Var& x) {
  return MakeResult(MapUnary(x.value(), [](double v) { return v * v; }), "square", {x},
                    [x](const Var&, const Var& g) { return std::vector<Var>{Mul(g, Scale(x, 2.0))}; });
}

Var MatMul(const Var& a, const Var& b, bool ta, bool tb) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + ShapeString(a.shape()) + " and " +
                     ShapeString(b.shape()));
  }
  const int64_t ar = a.shape()[0], ac = a.shape()[1], br = b.shape()[0], bc = b.shape()[1];
  const int64_t m = ta ? ac : ar, k = ta ? ar : ac;
  const int64_t kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul inner dimensions differ: " + ShapeString(a.shape()) + (ta ? "^T" : "") + " x " +
                     ShapeString(b.shape()) + (tb ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  ConstMap am(a.value().data().data(), ar, ac);
  ConstMap bm(b.value().data().data(), br, bc);
  MutMap om(out.data().data(), m, n);
  if (!ta && !tb) {
    om.noalias() = am * bm;
  } else if (ta && !tb) {
    om.noalias() = am.transpose() * bm;
  } else if (!ta && tb) {
    om.noalias() = am * bm.transpose();
  } else {
    om.noalias() = am.transpose() * bm.transpose();
  }
  return MakeResult(std::move(out), "matmul", {a, b}, [a, b, ta, tb](const Var&, const Var& g) {
    Var ga, gb;
    if (a.requires_grad()) ga = ta ? MatMul(b, g, tb, true) : MatMul(g, b, false, !tb);
    if (b.requires_grad()) gb = tb ? MatMul(g, a, true, ta) : MatMul(a, g, !ta, false);
    return std::vector<Var>{ga, gb};
  });
}

Var Reshape(const Var& x, Shape shape) {
  Shape original = x.shape();
  Tensor out = x.value().Reshaped(std::move(shape));
  return MakeResult(std::move(out), "reshape", {x}, [original](const Var&, const Var& g) {
    return std::vector<Var>{Reshape(g, original)};
  });
}

Var Flatten(const Var& x) { return Reshape(x, Shape{static_cast<int64_t>(x.size())}); }

Var Gather(const Var& x, IndexMap index, Shape out_shape) {
  if (static_cast<int64_t>(index->size()) != NumElements(out_shape)) {
    throw ShapeError("gather index length does not match output shape " + ShapeString(out_shape));
  }
  Tensor out(out_shape);
  auto src = x.value().data();
  auto dst = out.data();
  const auto& idx = *index;
  const int32_t limit = static_cast<int32_t>(src.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const int32_t j = idx[i];
    if (j >= limit) throw ShapeError("gather index out of range");
    dst[i] = j >= 0 ? src[static_cast<size_t>(j)] : 0.0;
  }
  Shape in_shape = x.shape();
  return MakeResult(std::move(out), "gather", {x}, [index, in_shape](const Var&, const Var& g) {
    return std::vector<Var>{ScatterAdd(g, index, in_shape)};
  });
}

Var ScatterAdd(const Var& x, IndexMap index, Shape out_shape) {
  if (index->size() != x.size()) throw ShapeError("scatter index length does not match input");
  Tensor out(out_shape);
  auto src = x.value().data();
  auto dst = out.data();
  const auto& idx = *index;
  const int32_t limit = static_cast<int32_t>(dst.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const int32_t j = idx[i];
    if (j >= limit) throw ShapeError("scatter index out of range");
    if (j >= 0) dst[static_cast<size_t>(j)] += src[i];
  }
  Shape in_shape = x.shape();
  return MakeResult(std::move(out), "scatter_add", {x}, [index, in_shape](const Var&, const Var& g) {
    return std::vector<Var>{Gather(g, index, in_shape)};
  });
}

Var BroadcastTo(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (BroadcastShape(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + ShapeString(x.shape()) + " to " + ShapeString(shape));
  }
  return Gather(x, BroadcastIndex(x.shape(), shape), shape);
}

Var SumTo(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (BroadcastShape(shape, x.shape()) != x.shape()) {
    throw ShapeError("cannot reduce " + ShapeString(x.shape()) + " to " + ShapeString(shape));
  }
  return ScatterAdd(x, BroadcastIndex(shape, x.shape()), shape);
}

Var Sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  Shape in_shape = x.shape();
  return MakeResult(Tensor::Scalar(total), "sum", {x}, [in_shape](const Var&, const Var& g) {
    return std::vector<Var>{BroadcastTo(g, in_shape)};
  });
}

Var Mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return Scale(Sum(x), 1.0 / static_cast<double>(x.size()));
}

Var Permute(const Var& x, const std::vector<int>& perm) {
  const Shape& in = x.shape();
  if (perm.size() != in.size()) throw ShapeError("permutation rank mismatch for " + ShapeString(in));
  Shape out(in.size());
  for (size_t i = 0; i < perm.size(); ++i) out[i] = in.at(static_cast<size_t>(perm[i]));
  const auto in_strides = Strides(in);
  const int64_t n = NumElements(out);
  std::vector<int32_t> idx(static_cast<size_t>(n));
  std::vector<int64_t> coord(out.size(), 0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t src = 0;
    for (size_t a = 0; a < out.size(); ++a) src += coord[a] * in_strides[static_cast<size_t>(perm[a])];
    idx[static_cast<size_t>(i)] = static_cast<int32_t>(src);
    for (int a = static_cast<int>(out.size()) - 1; a >= 0; --a) {
      if (++coord[a] < out[a]) break;
      coord[a] = 0;
    }
  }
  return Gather(x, MakeIndex(std::move(idx)), out);
}

Var Transpose(const Var& x) {
  if (x.value().rank() != 2) throw ShapeError("transpose expects rank 2, got " + ShapeString(x.shape()));
  return Permute(x, {1, 0});
}

Var Slice(const Var& x, int axis, int64_t start, int64_t length) {
  const Shape& in = x.shape();
  if (axis < 0 || static_cast<size_t>(axis) >= in.size() || start < 0 || length < 0 ||
      start + length > in[static_cast<size_t>(axis)]) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " out of range for " + ShapeString(in));
  }
  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= in[static_cast<size_t>(a)];
  for (size_t a = static_cast<size_t>(axis) + 1; a < in.size(); ++a) inner *= in[a];
  const int64_t dim = in[static_cast<size_t>(axis)];
  std::vector<int32_t> idx;
  idx.reserve(static_cast<size_t>(outer * length * inner));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t t = 0; t < length; ++t) {
      for (int64_t i = 0; i < inner; ++i) idx.push_back(static_cast<int32_t>((o * dim + start + t) * inner + i));
    }
  }
  Shape out = in;
  out[static_cast<size_t>(axis)] = length;
  return Gather(x, MakeIndex(std::move(idx)), out);
}

Var Concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape out = parts.front().shape();
  if (axis < 0 || static_cast<size_t>(axis) >= out.size()) throw ShapeError("concat axis out of range");
  int64_t total = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != out.size()) throw ShapeError("concat rank mismatch");
    for (size_t a = 0; a < s.size(); ++a) {
      if (a != static_cast<size_t>(axis) && s[a] != out[a]) {
        throw ShapeError("concat shape mismatch: " + ShapeString(s) + " vs " + ShapeString(out));
      }
    }
    total += s[static_cast<size_t>(axis)];
  }
  out[static_cast<size_t>(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= out[static_cast<size_t>(a)];
  for (size_t a = static_cast<size_t>(axis) + 1; a < out.size(); ++a) inner *= out[a];

  Tensor value(out);
  auto dst = value.data();
  std::vector<int64_t> offsets;
  int64_t offset = 0;
  for (const Var& p : parts) {
    const int64_t len = p.shape()[static_cast<size_t>(axis)];
    auto src = p.value().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * len * inner, len * inner, dst.begin() + (o * total + offset) * inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  return MakeResult(std::move(value), "concat", parts, [parts, offsets, axis](const Var&, const Var& g) {
    std::vector<Var> grads;
    for (size_t i = 0; i < parts.size(); ++i) {
      grads.push_back(parts[i].requires_grad()
                          ? Slice(g, axis, offsets[i], parts[i].shape()[static_cast<size_t>(axis)])
                          : Var());
    }
    return grads;
  });
}

Var Conv1d(const Var& x, const Var& w, const Var& bias, int dilation, int pad_left, int pad_right) {
  if (x.value().rank() != 3 || w.value().rank() != 3) {
    throw ShapeError("conv1d expects x (B,C,T) and w (O,C,K), got " + ShapeString(x.shape()) + " and " +
                     ShapeString(w.shape()));
  }
  const int64_t batch = x.shape()[0], channels = x.shape()[1], steps = x.shape()[2];
  const int64_t out_channels = w.shape()[0], kernel = w.shape()[2];
  if (w.shape()[1] != channels) {
    throw ShapeError("conv1d channel mismatch: x " + ShapeString(x.shape()) + ", w " + ShapeString(w.shape()));
  }
  if (dilation < 1) throw ShapeError("conv1d dilation must be >= 1");
  const int64_t out_steps = steps + pad_left + pad_right - static_cast<int64_t>(dilation) * (kernel - 1);
  if (out_steps < 1) throw ShapeError("conv1d output would be empty");

  // im2col: rows (b, t), columns (c, k).
  std::vector<int32_t> idx(static_cast<size_t>(batch * out_steps * channels * kernel));
  size_t pos = 0;
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t t = 0; t < out_steps; ++t) {
      for (int64_t c = 0; c < channels; ++c) {
        for (int64_t k = 0; k < kernel; ++k) {
          const int64_t src = t - pad_left + k * dilation;
          idx[pos++] = (src >= 0 && src < steps) ? static_cast<int32_t>((b * channels + c) * steps + src) : -1;
        }
      }
    }
  }
  Var cols = Gather(x, MakeIndex(std::move(idx)), Shape{batch * out_steps, channels * kernel});
  Var y = MatMul(cols, Reshape(w, Shape{out_channels, channels * kernel}), false, true);
  y = Permute(Reshape(y, Shape{batch, out_steps, out_channels}), {0, 2, 1});
  if (bias.defined()) y = Add(y, Reshape(bias, Shape{1, out_channels, 1}));
  return y;
}

Var MaxPool1d(const Var& x, int k) {
  if (x.value().rank() != 3 || k < 1) throw ShapeError("maxpool1d expects (B,C,T) and k >= 1");
  const int64_t rows = x.shape()[0] * x.shape()[1], steps = x.shape()[2];
  const int64_t out_steps = steps / k;
  if (out_steps < 1) throw ShapeError("maxpool1d window larger than sequence");
  auto src = x.value().data();
  std::vector<int32_t> idx(static_cast<size_t>(rows * out_steps));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t t = 0; t < out_steps; ++t) {
      int64_t best = r * steps + t * k;
      for (int64_t j = 1; j < k; ++j) {
        const int64_t cand = r * steps + t * k + j;
        if (src[static_cast<size_t>(cand)] > src[static_cast<size_t>(best)]) best = cand;
      }
      idx[static_cast<size_t>(r * out_steps + t)] = static_cast<int32_t>(best);
    }
  }
  return Gather(x, MakeIndex(std::move(idx)), Shape{x.shape()[0], x.shape()[1], out_steps});
}

}  // namespace tsinv::ad
