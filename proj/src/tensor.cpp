#include "mdcl/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "mdcl/gemm.hpp"

namespace mdcl {
namespace {

constexpr int kMaxRank = 6;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
NodePtr<T> new_node(Shape shape, std::vector<T> value) {
  check(!shape.empty() && !value.empty(), "tensor: empty shape");
  check(numel(shape) == static_cast<std::int64_t>(value.size()),
        "tensor: shape " + shape_str(shape) + " does not match buffer size " +
            std::to_string(value.size()));
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Builds an op node. Parents are only retained (and the backward closure only
// stored) when some parent carries gradient, so constant subgraphs are freed
// as soon as their handles go out of scope.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                      std::function<void(TensorNode<T>&)> backprop) {
  auto n = new_node(std::move(shape), std::move(value));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor<T>(n);
}

// Trailing-aligned broadcast plan: per-dimension input strides, 0 on
// broadcast dimensions.
struct BcastPlan {
  Shape out;
  int rank = 0;
  std::array<std::int64_t, kMaxRank> sa{}, sb{};
};

BcastPlan make_bcast(const Shape& a, const Shape& b, const char* opname) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int rank = std::max(ra, rb);
  check(rank <= kMaxRank, std::string(opname) + ": rank above " + std::to_string(kMaxRank));
  BcastPlan plan;
  plan.rank = rank;
  plan.out.resize(rank);
  std::array<std::int64_t, kMaxRank> ca{}, cb{};  // contiguous strides
  std::int64_t s = 1;
  for (int i = ra - 1; i >= 0; --i) { ca[i] = s; s *= a[i]; }
  s = 1;
  for (int i = rb - 1; i >= 0; --i) { cb[i] = s; s *= b[i]; }
  for (int i = 0; i < rank; ++i) {
    const int da = i < rank - ra ? 1 : a[i - (rank - ra)];
    const int db = i < rank - rb ? 1 : b[i - (rank - rb)];
    check(da == db || da == 1 || db == 1,
          std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
              " do not broadcast");
    plan.out[i] = std::max(da, db);
    plan.sa[i] = (da == 1) ? 0 : ca[i - (rank - ra)];
    plan.sb[i] = (db == 1) ? 0 : cb[i - (rank - rb)];
  }
  return plan;
}

// Calls body(out_index, a_index, b_index) for every output element. Fast
// paths cover the shapes the training loop actually produces; the odometer
// fallback handles arbitrary broadcasts.
template <typename T, typename Body>
void bcast_loop(const BcastPlan& plan, std::int64_t an, std::int64_t bn, Body&& body) {
  const std::int64_t n = numel(plan.out);
  if (an == n && bn == n) {
    for (std::int64_t i = 0; i < n; ++i) body(i, i, i);
    return;
  }
  if (bn == 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i, i, 0);
    return;
  }
  if (an == 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i, 0, i);
    return;
  }
  std::array<int, kMaxRank> idx{};
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    body(i, oa, ob);
    for (int d = plan.rank - 1; d >= 0; --d) {
      ++idx[d];
      oa += plan.sa[d];
      ob += plan.sb[d];
      if (idx[d] < plan.out[d]) break;
      idx[d] = 0;
      oa -= plan.sa[d] * plan.out[d];
      ob -= plan.sb[d] * plan.out[d];
    }
  }
}

// Generic elementwise binary op. fwd(a, b) -> out; bwd(g, a, b, out, da, db)
// writes both local gradients (applied only where the parent needs them).
template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const Tensor<T>& ta, const Tensor<T>& tb, const char* name, Fwd fwd,
                    Bwd bwd) {
  check(ta.defined() && tb.defined(), std::string(name) + ": undefined operand");
  auto pa = ta.node();
  auto pb = tb.node();
  const BcastPlan plan = make_bcast(pa->shape, pb->shape, name);
  std::vector<T> out(numel(plan.out));
  const T* av = pa->value.data();
  const T* bv = pb->value.data();
  bcast_loop<T>(plan, ta.size(), tb.size(),
                [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                  out[i] = fwd(av[ia], bv[ib]);
                });
  const std::int64_t an = ta.size(), bn = tb.size();
  auto backprop = [pa = pa.get(), pb = pb.get(), plan, an, bn, bwd](TensorNode<T>& self) {
    const bool na = pa->requires_grad, nb = pb->requires_grad;
    if (na) pa->ensure_grad();
    if (nb) pb->ensure_grad();
    const T* av = pa->value.data();
    const T* bv = pb->value.data();
    const T* ov = self.value.data();
    const T* g = self.grad.data();
    T* ga = na ? pa->grad.data() : nullptr;
    T* gb = nb ? pb->grad.data() : nullptr;
    bcast_loop<T>(plan, an, bn, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      T da, db;
      bwd(g[i], av[ia], bv[ib], ov[i], da, db);
      if (na) ga[ia] += da;
      if (nb) gb[ib] += db;
    });
  };
  return make_result<T>(plan.out, std::move(out), {pa, pb}, std::move(backprop));
}

// Generic elementwise unary op. bwd(g, a, out) -> da.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& ta, const char* name, Fwd fwd, Bwd bwd) {
  check(ta.defined(), std::string(name) + ": undefined operand");
  auto pa = ta.node();
  const std::int64_t n = ta.size();
  std::vector<T> out(n);
  const T* av = pa->value.data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  auto backprop = [pa = pa.get(), bwd](TensorNode<T>& self) {
    pa->ensure_grad();
    const T* av = pa->value.data();
    const T* ov = self.value.data();
    const T* g = self.grad.data();
    T* ga = pa->grad.data();
    const std::int64_t n = static_cast<std::int64_t>(self.value.size());
    for (std::int64_t i = 0; i < n; ++i) ga[i] += bwd(g[i], av[i], ov[i]);
  };
  return make_result<T>(pa->shape, std::move(out), {pa}, std::move(backprop));
}

// outer/inner split around one axis, used by reductions, concat and narrow.
void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  std::vector<T> v(numel(shape), T(0));
  return Tensor(new_node(std::move(shape), std::move(v)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  std::vector<T> v(numel(shape), value);
  return Tensor(new_node(std::move(shape), std::move(v)));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
  return Tensor(new_node(std::move(shape), std::move(data)));
}

template <typename T>
Tensor<T> Tensor<T>::param(Shape shape, std::vector<T> data) {
  auto n = new_node(std::move(shape), std::move(data));
  n->requires_grad = true;
  return Tensor(n);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(new_node(node_->shape, node_->value));
}

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backprop) {
  std::vector<NodePtr<T>> nodes;
  nodes.reserve(parents.size());
  for (const auto& p : parents) nodes.push_back(p.node());
  return make_result<T>(std::move(shape), std::move(value), std::move(nodes),
                        std::move(backprop));
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T g, T, T, T, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T g, T, T, T, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T g, T x, T y, T, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "divide", [](T x, T y) { return x / y; },
      [](T g, T, T y, T o, T& da, T& db) { da = g / y; db = -g * o / y; });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "minimum", [](T x, T y) { return x <= y ? x : y; },
      [](T g, T x, T y, T, T& da, T& db) {
        da = x <= y ? g : T(0);
        db = x <= y ? T(0) : g;
      });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "maximum", [](T x, T y) { return x >= y ? x : y; },
      [](T g, T x, T y, T, T& da, T& db) {
        da = x >= y ? g : T(0);
        db = x >= y ? T(0) : g;
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary_op<T>(
      a, "add_scalar", [s](T x) { return x + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary_op<T>(
      a, "mul_scalar", [s](T x) { return x * s; }, [s](T g, T, T) { return g * s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_op<T>(
      a, "neg", [](T x) { return -x; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary_op<T>(
      a, "abs", [](T x) { return x < T(0) ? -x : x; },
      [](T g, T x, T) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_op<T>(
      a, "exp", [](T x) { return std::exp(x); }, [](T g, T, T o) { return g * o; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary_op<T>(
      a, "log", [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_op<T>(
      a, "sqrt", [](T x) { return std::sqrt(x); },
      [](T g, T, T o) { return g / (T(2) * o); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return unary_op<T>(
      a, "sin", [](T x) { return std::sin(x); }, [](T g, T x, T) { return g * std::cos(x); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return unary_op<T>(
      a, "cos", [](T x) { return std::cos(x); },
      [](T g, T x, T) { return -g * std::sin(x); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op<T>(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T g, T, T o) { return g * o * (T(1) - o); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_op<T>(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& a) {
  return unary_op<T>(
      a, "elu", [](T x) { return x > T(0) ? x : std::expm1(x); },
      [](T g, T x, T o) { return x > T(0) ? g : g * (o + T(1)); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary_op<T>(
      a, "softplus",
      [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](T g, T x, T) {
        if (x >= T(0)) return g / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return g * e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  check(lo <= hi, "clamp: lo > hi");
  return unary_op<T>(
      a, "clamp", [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T g, T x, T) { return (x > lo && x < hi) ? g : T(0); });
}

template <typename T>
Tensor<T> less_than(const Tensor<T>& a, const Tensor<T>& b) {
  const BcastPlan plan = make_bcast(a.shape(), b.shape(), "less_than");
  std::vector<T> out(numel(plan.out));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  bcast_loop<T>(plan, a.size(), b.size(),
                [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                  out[i] = av[ia] < bv[ib] ? T(1) : T(0);
                });
  return Tensor<T>::from_data(plan.out, std::move(out));
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check(numel(shape) == a.size(), "reshape: " + shape_str(a.shape()) + " to " +
                                      shape_str(shape) + " changes element count");
  auto pa = a.node();
  std::vector<T> out = pa->value;
  auto backprop = [pa = pa.get()](TensorNode<T>& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  };
  return make_result<T>(std::move(shape), std::move(out), {pa}, std::move(backprop));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  check(axis >= 0 && axis < rank, "concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    check(static_cast<int>(s.size()) == rank, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      check(i == axis || s[i] == s0[i], "concat: shape mismatch at dim " + std::to_string(i));
    out_shape[axis] += s[axis];
  }
  std::int64_t outer, inner;
  axis_split(out_shape, axis, outer, inner);
  const std::int64_t out_row = static_cast<std::int64_t>(out_shape[axis]) * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<NodePtr<T>> nodes;
  std::vector<std::int64_t> offsets;  // offset of each part inside an outer row
  std::int64_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offsets.push_back(off);
    const std::int64_t chunk = static_cast<std::int64_t>(p.shape()[axis]) * inner;
    const T* src = p.values().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * out_row + off, src + o * chunk, sizeof(T) * chunk);
    off += chunk;
  }
  std::vector<TensorNode<T>*> raw;
  for (const auto& n : nodes) raw.push_back(n.get());
  auto backprop = [raw, offsets, outer, inner, out_row](TensorNode<T>& self) {
    for (std::size_t pi = 0; pi < raw.size(); ++pi) {
      TensorNode<T>* p = raw[pi];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      std::int64_t chunk = static_cast<std::int64_t>(p->value.size()) / outer;
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* g = self.grad.data() + o * out_row + offsets[pi];
        T* dst = p->grad.data() + o * chunk;
        for (std::int64_t i = 0; i < chunk; ++i) dst[i] += g[i];
      }
    }
  };
  return make_result<T>(std::move(out_shape), std::move(out), std::move(nodes),
                        std::move(backprop));
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  check(axis >= 0 && axis < static_cast<int>(s.size()), "narrow: axis out of range");
  check(start >= 0 && len > 0 && start + len <= s[axis], "narrow: window out of range");
  Shape out_shape = s;
  out_shape[axis] = len;
  std::int64_t outer, inner;
  axis_split(s, axis, outer, inner);
  const std::int64_t in_row = static_cast<std::int64_t>(s[axis]) * inner;
  const std::int64_t out_row = static_cast<std::int64_t>(len) * inner;
  const std::int64_t skip = static_cast<std::int64_t>(start) * inner;
  std::vector<T> out(numel(out_shape));
  auto pa = a.node();
  const T* src = pa->value.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_row, src + o * in_row + skip, sizeof(T) * out_row);
  auto backprop = [pa = pa.get(), outer, in_row, out_row, skip](TensorNode<T>& self) {
    pa->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* g = self.grad.data() + o * out_row;
      T* dst = pa->grad.data() + o * in_row + skip;
      for (std::int64_t i = 0; i < out_row; ++i) dst[i] += g[i];
    }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {pa}, std::move(backprop));
}

template <typename T>
Tensor<T> crop_hw(const Tensor<T>& a, int top, int left, int h, int w) {
  const Shape& s = a.shape();
  const int rank = static_cast<int>(s.size());
  check(rank >= 2, "crop_hw: needs at least 2 dims");
  const int H = s[rank - 2], W = s[rank - 1];
  check(top >= 0 && left >= 0 && h > 0 && w > 0 && top + h <= H && left + w <= W,
        "crop_hw: window out of range");
  Shape out_shape = s;
  out_shape[rank - 2] = h;
  out_shape[rank - 1] = w;
  std::int64_t planes = 1;
  for (int i = 0; i < rank - 2; ++i) planes *= s[i];
  std::vector<T> out(numel(out_shape));
  auto pa = a.node();
  const T* src = pa->value.data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      std::memcpy(out.data() + (p * h + y) * w,
                  src + (p * static_cast<std::int64_t>(H) + top + y) * W + left,
                  sizeof(T) * w);
  auto backprop = [pa = pa.get(), planes, H, W, top, left, h, w](TensorNode<T>& self) {
    pa->ensure_grad();
    for (std::int64_t p = 0; p < planes; ++p)
      for (int y = 0; y < h; ++y) {
        const T* g = self.grad.data() + (p * h + y) * w;
        T* dst = pa->grad.data() + (p * static_cast<std::int64_t>(H) + top + y) * W + left;
        for (int x = 0; x < w; ++x) dst[x] += g[x];
      }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {pa}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
  auto pa = a.node();
  T acc = T(0);
  for (T v : pa->value) acc += v;
  auto backprop = [pa = pa.get()](TensorNode<T>& self) {
    pa->ensure_grad();
    const T g = self.grad[0];
    for (auto& gv : pa->grad) gv += g;
  };
  return make_result<T>({1}, {acc}, {pa}, std::move(backprop));
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
  auto pa = a.node();
  T acc = T(0);
  for (T v : pa->value) acc += v;
  const T inv = T(1) / static_cast<T>(pa->value.size());
  auto backprop = [pa = pa.get(), inv](TensorNode<T>& self) {
    pa->ensure_grad();
    const T g = self.grad[0] * inv;
    for (auto& gv : pa->grad) gv += g;
  };
  return make_result<T>({1}, {acc * inv}, {pa}, std::move(backprop));
}

namespace {

template <typename T>
Tensor<T> reduce_axis_impl(const Tensor<T>& a, int axis, bool keepdim, bool mean) {
  const Shape& s = a.shape();
  check(axis >= 0 && axis < static_cast<int>(s.size()), "reduce_axis: axis out of range");
  std::int64_t outer, inner;
  axis_split(s, axis, outer, inner);
  const int len = s[axis];
  const T inv = mean ? T(1) / static_cast<T>(len) : T(1);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(s[i]);
    }
  }
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(outer * inner, T(0));
  auto pa = a.node();
  const T* src = pa->value.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (int k = 0; k < len; ++k) {
      const T* row = src + (o * len + k) * inner;
      T* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  if (mean)
    for (auto& v : out) v *= inv;
  auto backprop = [pa = pa.get(), outer, inner, len, inv](TensorNode<T>& self) {
    pa->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (int k = 0; k < len; ++k) {
        const T* g = self.grad.data() + o * inner;
        T* dst = pa->grad.data() + (o * len + k) * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
      }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {pa}, std::move(backprop));
}

}  // namespace

template <typename T>
Tensor<T> reduce_sum_axis(const Tensor<T>& a, int axis, bool keepdim) {
  return reduce_axis_impl(a, axis, keepdim, false);
}

template <typename T>
Tensor<T> reduce_mean_axis(const Tensor<T>& a, int axis, bool keepdim) {
  return reduce_axis_impl(a, axis, keepdim, true);
}

template <typename T>
Tensor<T> reduce_min_axis(const Tensor<T>& a, int axis) {
  const Shape& s = a.shape();
  check(axis >= 0 && axis < static_cast<int>(s.size()), "reduce_min_axis: axis out of range");
  std::int64_t outer, inner;
  axis_split(s, axis, outer, inner);
  const int len = s[axis];
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(outer * inner);
  auto argmin = std::make_shared<std::vector<int>>(outer * inner, 0);
  auto pa = a.node();
  const T* src = pa->value.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      T best = src[o * len * inner + i];
      int bk = 0;
      for (int k = 1; k < len; ++k) {
        const T v = src[(o * len + k) * inner + i];
        if (v < best) {  // strict: first index wins ties
          best = v;
          bk = k;
        }
      }
      out[o * inner + i] = best;
      (*argmin)[o * inner + i] = bk;
    }
  auto backprop = [pa = pa.get(), argmin, outer, inner, len](TensorNode<T>& self) {
    pa->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const int bk = (*argmin)[o * inner + i];
        pa->grad[(o * len + bk) * inner + i] += self.grad[o * inner + i];
      }
  };
  return make_result<T>(std::move(out_shape), std::move(out), {pa}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
  int N, C, H, W, O, kh, kw, Ho, Wo;
  int stride, pad;
  std::int64_t K() const { return static_cast<std::int64_t>(C) * kh * kw; }
  std::int64_t P() const { return static_cast<std::int64_t>(Ho) * Wo; }
};

// col is K x P, row-major: one row per (c, ki, kj), one column per output pixel.
template <typename T>
void im2col(const ConvDims& d, const T* img, T* col) {
  std::int64_t row = 0;
  for (int c = 0; c < d.C; ++c) {
    const T* plane = img + static_cast<std::int64_t>(c) * d.H * d.W;
    for (int ki = 0; ki < d.kh; ++ki)
      for (int kj = 0; kj < d.kw; ++kj, ++row) {
        T* dst = col + row * d.P();
        for (int ho = 0; ho < d.Ho; ++ho) {
          const int y = ho * d.stride - d.pad + ki;
          if (y < 0 || y >= d.H) {
            for (int wo = 0; wo < d.Wo; ++wo) dst[ho * d.Wo + wo] = T(0);
            continue;
          }
          const T* src_row = plane + static_cast<std::int64_t>(y) * d.W;
          for (int wo = 0; wo < d.Wo; ++wo) {
            const int x = wo * d.stride - d.pad + kj;
            dst[ho * d.Wo + wo] = (x >= 0 && x < d.W) ? src_row[x] : T(0);
          }
        }
      }
  }
}

template <typename T>
void col2im_add(const ConvDims& d, const T* col, T* img) {
  std::int64_t row = 0;
  for (int c = 0; c < d.C; ++c) {
    T* plane = img + static_cast<std::int64_t>(c) * d.H * d.W;
    for (int ki = 0; ki < d.kh; ++ki)
      for (int kj = 0; kj < d.kw; ++kj, ++row) {
        const T* src = col + row * d.P();
        for (int ho = 0; ho < d.Ho; ++ho) {
          const int y = ho * d.stride - d.pad + ki;
          if (y < 0 || y >= d.H) continue;
          T* dst_row = plane + static_cast<std::int64_t>(y) * d.W;
          for (int wo = 0; wo < d.Wo; ++wo) {
            const int x = wo * d.stride - d.pad + kj;
            if (x >= 0 && x < d.W) dst_row[x] += src[ho * d.Wo + wo];
          }
        }
      }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  check(is.size() == 4, "conv2d: input must be NCHW, got " + shape_str(is));
  check(ws.size() == 4, "conv2d: weight must be OIKK, got " + shape_str(ws));
  check(is[1] == ws[1], "conv2d: channel mismatch, input " + shape_str(is) + " weight " +
                            shape_str(ws));
  check(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
  ConvDims d;
  d.N = is[0]; d.C = is[1]; d.H = is[2]; d.W = is[3];
  d.O = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  d.stride = stride; d.pad = padding;
  d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
  check(d.Ho >= 1 && d.Wo >= 1, "conv2d: kernel larger than padded input");
  const std::int64_t K = d.K(), P = d.P();
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.shape() == Shape{d.O}, "conv2d: bias must have shape {O}");
  auto pi = input.node();
  auto pw = weight.node();
  std::vector<T> out(static_cast<std::int64_t>(d.N) * d.O * P);
  std::vector<T> col(K * P);
  const T* bv = has_bias ? bias.values().data() : nullptr;
  for (int n = 0; n < d.N; ++n) {
    im2col(d, pi->value.data() + static_cast<std::int64_t>(n) * d.C * d.H * d.W, col.data());
    T* out_n = out.data() + static_cast<std::int64_t>(n) * d.O * P;
    if (has_bias) {
      for (int o = 0; o < d.O; ++o)
        for (std::int64_t p = 0; p < P; ++p) out_n[o * P + p] = bv[o];
    }
    gemm<T>(false, false, d.O, static_cast<int>(P), static_cast<int>(K), pw->value.data(),
            static_cast<int>(K), col.data(), static_cast<int>(P), out_n, static_cast<int>(P),
            has_bias);
  }
  std::vector<NodePtr<T>> parents = {pi, pw};
  if (has_bias) parents.push_back(bias.node());
  auto backprop = [pi = pi.get(), pw = pw.get(),
                   pb = has_bias ? bias.node().get() : nullptr, d, K, P](TensorNode<T>& self) {
    const bool ni = pi->requires_grad, nw = pw->requires_grad;
    const bool nb = pb && pb->requires_grad;
    if (ni) pi->ensure_grad();
    if (nw) pw->ensure_grad();
    if (nb) pb->ensure_grad();
    if (nb) {
      T* gb = pb->grad.data();
      for (int n = 0; n < d.N; ++n) {
        const T* g = self.grad.data() + static_cast<std::int64_t>(n) * d.O * P;
        for (int o = 0; o < d.O; ++o) {
          T acc = T(0);
          for (std::int64_t p = 0; p < P; ++p) acc += g[o * P + p];
          gb[o] += acc;
        }
      }
    }
    if (!ni && !nw) return;
    std::vector<T> col(K * P);
    std::vector<T> dcol(ni ? K * P : 0);
    for (int n = 0; n < d.N; ++n) {
      const T* g = self.grad.data() + static_cast<std::int64_t>(n) * d.O * P;
      if (nw) {
        im2col(d, pi->value.data() + static_cast<std::int64_t>(n) * d.C * d.H * d.W,
               col.data());
        gemm<T>(false, true, d.O, static_cast<int>(K), static_cast<int>(P), g,
                static_cast<int>(P), col.data(), static_cast<int>(P), pw->grad.data(),
                static_cast<int>(K), true);
      }
      if (ni) {
        gemm<T>(true, false, static_cast<int>(K), static_cast<int>(P), d.O,
                pw->value.data(), static_cast<int>(K), g, static_cast<int>(P), dcol.data(),
                static_cast<int>(P), false);
        col2im_add(d, dcol.data(),
                   pi->grad.data() + static_cast<std::int64_t>(n) * d.C * d.H * d.W);
      }
    }
  };
  return make_result<T>({d.N, d.O, d.Ho, d.Wo}, std::move(out), std::move(parents),
                        std::move(backprop));
}

// ---------------------------------------------------------------------------
// bilinear_resize

namespace {

// Sample-position tables for one axis, align_corners = false with index clamp.
struct AxisTap {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

inline AxisTap make_taps(int in, int out) {
  AxisTap t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int x = 0; x < out; ++x) {
    const double s = (x + 0.5) * scale - 0.5;
    const double f = std::floor(s);
    int i0 = static_cast<int>(f);
    const double w = s - f;
    int i1 = i0 + 1;
    t.i0[x] = std::min(std::max(i0, 0), in - 1);
    t.i1[x] = std::min(std::max(i1, 0), in - 1);
    t.w1[x] = w;
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& a, int out_h, int out_w) {
  const Shape& s = a.shape();
  check(s.size() == 4, "bilinear_resize: input must be NCHW");
  check(out_h >= 1 && out_w >= 1, "bilinear_resize: bad output size");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  const AxisTap ty = make_taps(H, out_h), tx = make_taps(W, out_w);
  std::vector<T> out(static_cast<std::int64_t>(N) * C * out_h * out_w);
  auto pa = a.node();
  const T* src = pa->value.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
    const T* plane = src + p * H * W;
    T* dst = out.data() + p * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const T wy = static_cast<T>(ty.w1[y]);
      const T* r0 = plane + static_cast<std::int64_t>(ty.i0[y]) * W;
      const T* r1 = plane + static_cast<std::int64_t>(ty.i1[y]) * W;
      for (int x = 0; x < out_w; ++x) {
        const T wx = static_cast<T>(tx.w1[x]);
        const T top = r0[tx.i0[x]] * (T(1) - wx) + r0[tx.i1[x]] * wx;
        const T bot = r1[tx.i0[x]] * (T(1) - wx) + r1[tx.i1[x]] * wx;
        dst[y * out_w + x] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  auto backprop = [pa = pa.get(), N, C, H, W, out_h, out_w, ty, tx](TensorNode<T>& self) {
    pa->ensure_grad();
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
      const T* g = self.grad.data() + p * out_h * out_w;
      T* dst = pa->grad.data() + p * H * W;
      for (int y = 0; y < out_h; ++y) {
        const T wy = static_cast<T>(ty.w1[y]);
        T* r0 = dst + static_cast<std::int64_t>(ty.i0[y]) * W;
        T* r1 = dst + static_cast<std::int64_t>(ty.i1[y]) * W;
        for (int x = 0; x < out_w; ++x) {
          const T wx = static_cast<T>(tx.w1[x]);
          const T gv = g[y * out_w + x];
          r0[tx.i0[x]] += gv * (T(1) - wx) * (T(1) - wy);
          r0[tx.i1[x]] += gv * wx * (T(1) - wy);
          r1[tx.i0[x]] += gv * (T(1) - wx) * wy;
          r1[tx.i1[x]] += gv * wx * wy;
        }
      }
    }
  };
  return make_result<T>({N, C, out_h, out_w}, std::move(out), {pa}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// grid_sample

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& input, const Tensor<T>& grid) {
  const Shape& is = input.shape();
  const Shape& gs = grid.shape();
  check(is.size() == 4, "grid_sample: input must be NCHW");
  check(gs.size() == 4 && gs[3] == 2, "grid_sample: grid must be {N,H,W,2}");
  check(is[0] == gs[0], "grid_sample: batch mismatch");
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  const int Hg = gs[1], Wg = gs[2];
  auto pi = input.node();
  auto pg = grid.node();
  std::vector<T> out(static_cast<std::int64_t>(N) * C * Hg * Wg);
  const T* src = pi->value.data();
  const T* gv = pg->value.data();
  const std::int64_t in_img = static_cast<std::int64_t>(C) * H * W;
  const std::int64_t out_img = static_cast<std::int64_t>(C) * Hg * Wg;
  const std::int64_t gpx = static_cast<std::int64_t>(Hg) * Wg;
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int n = 0; n < N; ++n) {
    const T* img = src + n * in_img;
    const T* gr = gv + n * gpx * 2;
    T* dst = out.data() + n * out_img;
    for (std::int64_t p = 0; p < gpx; ++p) {
      const T sx = gr[p * 2], sy = gr[p * 2 + 1];
      const T fx = std::floor(sx), fy = std::floor(sy);
      const T wx = sx - fx, wy = sy - fy;
      const int x0 = clampi(static_cast<int>(fx), W - 1);
      const int x1 = clampi(static_cast<int>(fx) + 1, W - 1);
      const int y0 = clampi(static_cast<int>(fy), H - 1);
      const int y1 = clampi(static_cast<int>(fy) + 1, H - 1);
      for (int c = 0; c < C; ++c) {
        const T* plane = img + static_cast<std::int64_t>(c) * H * W;
        const T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
        const T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
        dst[c * gpx + p] = (v00 * (T(1) - wx) + v01 * wx) * (T(1) - wy) +
                           (v10 * (T(1) - wx) + v11 * wx) * wy;
      }
    }
  }
  auto backprop = [pi = pi.get(), pg = pg.get(), N, C, H, W, gpx, in_img,
                   out_img](TensorNode<T>& self) {
    const bool ni = pi->requires_grad, ng = pg->requires_grad;
    if (ni) pi->ensure_grad();
    if (ng) pg->ensure_grad();
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int n = 0; n < N; ++n) {
      const T* img = pi->value.data() + n * in_img;
      const T* gr = pg->value.data() + n * gpx * 2;
      const T* g = self.grad.data() + n * out_img;
      T* gi = ni ? pi->grad.data() + n * in_img : nullptr;
      T* gg = ng ? pg->grad.data() + n * gpx * 2 : nullptr;
      for (std::int64_t p = 0; p < gpx; ++p) {
        const T sx = gr[p * 2], sy = gr[p * 2 + 1];
        const T fx = std::floor(sx), fy = std::floor(sy);
        const T wx = sx - fx, wy = sy - fy;
        const int x0 = clampi(static_cast<int>(fx), W - 1);
        const int x1 = clampi(static_cast<int>(fx) + 1, W - 1);
        const int y0 = clampi(static_cast<int>(fy), H - 1);
        const int y1 = clampi(static_cast<int>(fy) + 1, H - 1);
        T dsx = T(0), dsy = T(0);
        for (int c = 0; c < C; ++c) {
          const T* plane = img + static_cast<std::int64_t>(c) * H * W;
          const T gv = g[c * gpx + p];
          if (ni) {
            T* gp = gi + static_cast<std::int64_t>(c) * H * W;
            gp[y0 * W + x0] += gv * (T(1) - wx) * (T(1) - wy);
            gp[y0 * W + x1] += gv * wx * (T(1) - wy);
            gp[y1 * W + x0] += gv * (T(1) - wx) * wy;
            gp[y1 * W + x1] += gv * wx * wy;
          }
          if (ng) {
            const T v00 = plane[y0 * W + x0], v01 = plane[y0 * W + x1];
            const T v10 = plane[y1 * W + x0], v11 = plane[y1 * W + x1];
            dsx += gv * ((v01 - v00) * (T(1) - wy) + (v11 - v10) * wy);
            dsy += gv * ((v10 - v00) * (T(1) - wx) + (v11 - v01) * wx);
          }
        }
        if (ng) {
          gg[p * 2] += dsx;
          gg[p * 2 + 1] += dsy;
        }
      }
    }
  };
  return make_result<T>({N, C, Hg, Wg}, std::move(out), {pi, pg}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// backward

template <typename T>
void backward(const Tensor<T>& loss) {
  check(loss.defined(), "backward: undefined loss");
  check(loss.size() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  TensorNode<T>* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable carries gradient
  // Iterative post-order DFS; parents land before children, so processing the
  // list in reverse visits every node after all of its consumers.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack{{root}};
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorNode<T>* p = f.node->parents[f.next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define MDCL_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                              \
  template Tensor<T> make_op<T>(Shape, std::vector<T>, std::vector<Tensor<T>>,           \
                                std::function<void(TensorNode<T>&)>);                    \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> divide<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> minimum<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> maximum<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                 \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                 \
  template Tensor<T> neg<T>(const Tensor<T>&);                                           \
  template Tensor<T> abs<T>(const Tensor<T>&);                                           \
  template Tensor<T> exp<T>(const Tensor<T>&);                                           \
  template Tensor<T> log<T>(const Tensor<T>&);                                           \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                          \
  template Tensor<T> sin<T>(const Tensor<T>&);                                           \
  template Tensor<T> cos<T>(const Tensor<T>&);                                           \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                          \
  template Tensor<T> elu<T>(const Tensor<T>&);                                           \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                      \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                   \
  template Tensor<T> less_than<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                      \
  template Tensor<T> narrow<T>(const Tensor<T>&, int, int, int);                         \
  template Tensor<T> crop_hw<T>(const Tensor<T>&, int, int, int, int);                   \
  template Tensor<T> reduce_mean<T>(const Tensor<T>&);                                   \
  template Tensor<T> reduce_sum<T>(const Tensor<T>&);                                    \
  template Tensor<T> reduce_mean_axis<T>(const Tensor<T>&, int, bool);                   \
  template Tensor<T> reduce_sum_axis<T>(const Tensor<T>&, int, bool);                    \
  template Tensor<T> reduce_min_axis<T>(const Tensor<T>&, int);                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                               int, int);                                                \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int, int);                     \
  template Tensor<T> grid_sample<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template void backward<T>(const Tensor<T>&);

MDCL_INSTANTIATE(float)
MDCL_INSTANTIATE(double)

#undef MDCL_INSTANTIATE

}  // namespace mdcl
