#pragma once

// Dense row-major tensors (rank <= 4) with reverse-mode autodiff.
// Values are immutable once a node is created; gradients accumulate on
// leaf nodes until explicitly zeroed. All reductions run in a fixed
// sequential order so repeated runs are bit-identical.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace vikan {

using Shape = std::vector<int>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    check(d > 0, "non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

constexpr int kMaxRank = 4;

enum class Precision { F32, F64 };

// splitmix64; hand-rolled draws so streams are identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  // Box-Muller, no spare caching (keeps the draw sequence obvious).
  double normal(double mean, double sd) {
    double u1 = next_uniform();
    double u2 = next_uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(2.0 * M_PI * u2);
  }

  // Independent substream, e.g. one per epoch.
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 0x632be59bd9b4e019ULL)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline uint64_t& backward_pass() {
  thread_local uint64_t pass = 0;
  return pass;
}

}  // namespace detail

// Disables tape recording in scope (inference / oracle evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // persistent on leaves, per-pass scratch on interior nodes
  bool requires_grad = false;
  bool leaf = true;
  uint64_t pass = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

// Grad buffer for `n` during the current backward pass. Leaf buffers
// accumulate across passes; interior buffers are zeroed once per pass.
template <typename T>
std::vector<T>& grad_ref(Node<T>& n) {
  if (n.leaf) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }
  if (n.pass != detail::backward_pass()) {
    n.grad.assign(n.value.size(), T(0));
    n.pass = detail::backward_pass();
  }
  return n.grad;
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Tensor from_data(Shape shape, std::vector<T> data) {
    check(numel_of(shape) == static_cast<int64_t>(data.size()),
          "data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
    check(static_cast<int>(shape.size()) <= kMaxRank, "rank > 4 unsupported");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)), T(0));
    return from_data(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, T v) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)), v);
    return from_data(std::move(shape), std::move(d));
  }

  static Tensor scalar(T v) { return from_data({}, {v}); }

  static Tensor uniform(Shape shape, T lo, T hi, Rng& rng) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)));
    for (auto& x : d) x = static_cast<T>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(d));
  }

  static Tensor normal(Shape shape, T mean, T sd, Rng& rng) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)));
    for (auto& x : d) x = static_cast<T>(rng.normal(mean, sd));
    return from_data(std::move(shape), std::move(d));
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }

  std::span<const T> data() const { return n_->value; }
  // In-place mutation is reserved for leaves (optimizer steps, test setup).
  std::span<T> mutable_data() {
    check(n_->leaf, "only leaf tensors may be mutated in place");
    return n_->value;
  }

  T item() const {
    check(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return n_->value[0];
  }

  T at(std::initializer_list<int> idx) const {
    check(static_cast<int>(idx.size()) == rank(), "index rank mismatch");
    int64_t off = 0;
    int i = 0;
    for (int v : idx) {
      check(v >= 0 && v < n_->shape[i], "index out of range");
      off = off * n_->shape[i] + v;
      ++i;
    }
    return n_->value[static_cast<size_t>(off)];
  }

  Tensor& set_requires_grad(bool rg = true) {
    check(n_->leaf, "requires_grad can only be toggled on leaves");
    n_->requires_grad = rg;
    return *this;
  }
  bool requires_grad() const { return n_->requires_grad; }

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  std::span<const T> grad() const {
    check(has_grad(), "tensor has no gradient");
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

  // Reverse pass from a scalar. Leaf grads accumulate across calls.
  void backward() const {
    check(numel() == 1, "backward() requires a scalar loss, got " + shape_str(shape()));
    check(n_->requires_grad, "backward() on a tensor with no grad-requiring inputs");
    ++detail::backward_pass();
    std::vector<Node<T>*> order = topo_order();
    grad_ref(*n_)[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backward_fn) node->backward_fn(*node);
    }
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  // Post-order DFS over the grad-requiring subgraph; each node exactly once.
  std::vector<Node<T>*> topo_order() const {
    std::vector<Node<T>*> order;
    if (!n_->requires_grad) return order;
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({n_.get(), 0});
    seen.insert(n_.get());
    while (!stack.empty()) {
      Node<T>* node = stack.back().first;
      size_t& next = stack.back().second;
      bool descended = false;
      while (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && !seen.count(child)) {
          seen.insert(child);
          stack.push_back({child, 0});
          descended = true;
          break;
        }
      }
      if (!descended) {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<Node<T>> n_;
};

namespace detail {

// Linear `seen` lookup above is O(n^2); fine for model graphs (~100 nodes)
// but backward() on huge graphs would want a hash set. Swap if it shows up.

template <typename T>
std::shared_ptr<Node<T>> make_op(Shape shape, std::vector<T> value,
                                 std::vector<std::shared_ptr<Node<T>>> inputs,
                                 std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_mode()) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in->requires_grad;
    if (rg) {
      n->requires_grad = true;
      n->leaf = false;
      n->inputs = std::move(inputs);
      n->backward_fn = std::move(backward);
    }
  }
  return n;
}

// Trailing-dimension broadcast: shapes align at the last axis, extent 1 stretches.
inline bool broadcast_shapes(const Shape& a, const Shape& b, Shape& out) {
  int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  int r = std::max(ra, rb);
  out.assign(r, 1);
  for (int i = 0; i < r; ++i) {
    int da = i < ra ? a[ra - 1 - i] : 1;
    int db = i < rb ? b[rb - 1 - i] : 1;
    if (da == db || da == 1 || db == 1) {
      out[r - 1 - i] = std::max(da, db);
    } else {
      return false;
    }
  }
  return true;
}

// Row-major strides padded on the left to kMaxRank; broadcast axes get stride 0.
inline std::array<int64_t, kMaxRank> padded_strides(const Shape& s, const Shape& out) {
  std::array<int64_t, kMaxRank> st{};
  int r = static_cast<int>(s.size());
  int ro = static_cast<int>(out.size());
  int64_t stride = 1;
  std::array<int64_t, kMaxRank> natural{};
  for (int i = r - 1; i >= 0; --i) {
    natural[i] = stride;
    stride *= s[i];
  }
  for (int i = 0; i < kMaxRank; ++i) st[i] = 0;
  for (int i = 0; i < ro; ++i) {
    int pad = kMaxRank - ro + i;
    int ai = i - (ro - r);
    if (ai >= 0) st[pad] = (s[ai] == 1 && out[i] != 1) ? 0 : natural[ai];
  }
  return st;
}

inline std::array<int64_t, kMaxRank> padded_extents(const Shape& out) {
  std::array<int64_t, kMaxRank> e{1, 1, 1, 1};
  int r = static_cast<int>(out.size());
  for (int i = 0; i < r; ++i) e[kMaxRank - r + i] = out[i];
  return e;
}

// Sums `g` (shaped `from`) down to `to` under broadcast rules, accumulating into acc.
template <typename T>
void reduce_broadcast_grad(const std::vector<T>& g, const Shape& from, const Shape& to,
                           std::vector<T>& acc) {
  auto ext = padded_extents(from);
  auto gst = padded_strides(from, from);
  auto ast = padded_strides(to, from);
  for (int64_t i0 = 0; i0 < ext[0]; ++i0)
    for (int64_t i1 = 0; i1 < ext[1]; ++i1)
      for (int64_t i2 = 0; i2 < ext[2]; ++i2)
        for (int64_t i3 = 0; i3 < ext[3]; ++i3) {
          int64_t gi = i0 * gst[0] + i1 * gst[1] + i2 * gst[2] + i3 * gst[3];
          int64_t ai = i0 * ast[0] + i1 * ast[1] + i2 * ast[2] + i3 * ast[3];
          acc[static_cast<size_t>(ai)] += g[static_cast<size_t>(gi)];
        }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

enum class EwOp { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_ew(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
  Shape out_shape;
  check(detail::broadcast_shapes(a.shape(), b.shape(), out_shape),
        "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
            " are not broadcastable");
  auto an = a.node();
  auto bn = b.node();
  int64_t n = numel_of(out_shape);
  std::vector<T> out(static_cast<size_t>(n));

  auto apply = [op](T x, T y) -> T {
    switch (op) {
      case EwOp::Add: return x + y;
      case EwOp::Sub: return x - y;
      case EwOp::Mul: return x * y;
      case EwOp::Div: return x / y;  // IEEE: no trap on zero divisor
    }
    return T(0);
  };

  if (a.shape() == b.shape()) {
    const auto& av = an->value;
    const auto& bv = bn->value;
    for (int64_t i = 0; i < n; ++i)
      out[static_cast<size_t>(i)] = apply(av[static_cast<size_t>(i)], bv[static_cast<size_t>(i)]);
  } else {
    auto ext = detail::padded_extents(out_shape);
    auto sa = detail::padded_strides(a.shape(), out_shape);
    auto sb = detail::padded_strides(b.shape(), out_shape);
    int64_t k = 0;
    for (int64_t i0 = 0; i0 < ext[0]; ++i0)
      for (int64_t i1 = 0; i1 < ext[1]; ++i1)
        for (int64_t i2 = 0; i2 < ext[2]; ++i2)
          for (int64_t i3 = 0; i3 < ext[3]; ++i3) {
            int64_t ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2] + i3 * sa[3];
            int64_t ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2] + i3 * sb[3];
            out[static_cast<size_t>(k++)] =
                apply(an->value[static_cast<size_t>(ia)], bn->value[static_cast<size_t>(ib)]);
          }
  }

  auto backward = [op, an, bn, out_shape](Node<T>& self) {
    const std::vector<T>& g = self.grad;
    int64_t n = self.numel();
    // Full-shape contributions, then broadcast-sum down to each input.
    auto push = [&](const std::shared_ptr<Node<T>>& target, std::vector<T>&& contrib) {
      if (!target->requires_grad) return;
      auto& dst = grad_ref(*target);
      if (target->shape == out_shape) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += contrib[i];
      } else {
        detail::reduce_broadcast_grad(contrib, out_shape, target->shape, dst);
      }
    };
    auto ext = detail::padded_extents(out_shape);
    auto sa = detail::padded_strides(an->shape, out_shape);
    auto sb = detail::padded_strides(bn->shape, out_shape);
    auto value_at = [&](const std::shared_ptr<Node<T>>& src,
                        const std::array<int64_t, kMaxRank>& st, int64_t i0, int64_t i1,
                        int64_t i2, int64_t i3) -> T {
      return src->value[static_cast<size_t>(i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3])];
    };
    std::vector<T> ca, cb;
    if (an->requires_grad) ca.resize(static_cast<size_t>(n));
    if (bn->requires_grad) cb.resize(static_cast<size_t>(n));
    int64_t k = 0;
    for (int64_t i0 = 0; i0 < ext[0]; ++i0)
      for (int64_t i1 = 0; i1 < ext[1]; ++i1)
        for (int64_t i2 = 0; i2 < ext[2]; ++i2)
          for (int64_t i3 = 0; i3 < ext[3]; ++i3, ++k) {
            T gk = g[static_cast<size_t>(k)];
            switch (op) {
              case EwOp::Add:
                if (!ca.empty()) ca[static_cast<size_t>(k)] = gk;
                if (!cb.empty()) cb[static_cast<size_t>(k)] = gk;
                break;
              case EwOp::Sub:
                if (!ca.empty()) ca[static_cast<size_t>(k)] = gk;
                if (!cb.empty()) cb[static_cast<size_t>(k)] = -gk;
                break;
              case EwOp::Mul:
                if (!ca.empty()) ca[static_cast<size_t>(k)] = gk * value_at(bn, sb, i0, i1, i2, i3);
                if (!cb.empty()) cb[static_cast<size_t>(k)] = gk * value_at(an, sa, i0, i1, i2, i3);
                break;
              case EwOp::Div: {
                T bv = value_at(bn, sb, i0, i1, i2, i3);
                if (!ca.empty()) ca[static_cast<size_t>(k)] = gk / bv;
                if (!cb.empty())
                  cb[static_cast<size_t>(k)] =
                      -gk * value_at(an, sa, i0, i1, i2, i3) / (bv * bv);
                break;
              }
            }
          }
    if (!ca.empty()) push(an, std::move(ca));
    if (!cb.empty()) push(bn, std::move(cb));
  };

  return Tensor<T>(detail::make_op<T>(out_shape, std::move(out), {an, bn}, backward));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return binary_ew(EwOp::Add, a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return binary_ew(EwOp::Sub, a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return binary_ew(EwOp::Mul, a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return binary_ew(EwOp::Div, a, b); }

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return a + Tensor<T>::scalar(s); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, T s) { return a - Tensor<T>::scalar(s); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return a * Tensor<T>::scalar(s); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, T s) { return a / Tensor<T>::scalar(s); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return Tensor<T>::scalar(s) * a; }

// dvalue(x, y) must return d y / d x given input x and output y.
template <typename T, typename F, typename DF>
Tensor<T> unary_ew(const Tensor<T>& a, F&& f, DF&& df) {
  auto an = a.node();
  std::vector<T> out(an->value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(an->value[i]);
  auto backward = [an, df](Node<T>& self) {
    auto& dst = grad_ref(*an);
    for (size_t i = 0; i < dst.size(); ++i)
      dst[i] += self.grad[i] * df(an->value[i], self.value[i]);
  };
  return Tensor<T>(detail::make_op<T>(a.shape(), std::move(out), {an}, backward));
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return unary_ew(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}
template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return unary_ew(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}
template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_ew(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  // log(x<=0) follows IEEE: -inf at 0, NaN below.
  return unary_ew(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary_ew(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}
template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_ew(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return unary_ew(
      a, [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kInvSqrt2 = T(0.7071067811865475244);
  constexpr T kInvSqrt2Pi = T(0.3989422804014326779);
  return unary_ew(
      a,
      [](T x) { return T(0.5) * x * (T(1) + std::erf(x * kInvSqrt2)); },
      [](T x, T) {
        T cdf = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
        T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  return unary_ew(
      a, [p](T x) { return std::pow(x, p); },
      [p](T x, T) { return p * std::pow(x, p - T(1)); });
}

// ---------------------------------------------------------------------------
// matmul / transpose

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 2 && b.rank() == 2,
        "matmul requires rank-2 operands, got " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  int m = a.shape()[0], k = a.shape()[1];
  int kb = b.shape()[0], n = b.shape()[1];
  check(k == kb, "matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  const T* A = an->value.data();
  const T* B = bn->value.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      T aip = A[i * k + p];
      const T* brow = B + static_cast<size_t>(p) * n;
      T* orow = out.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }

  auto backward = [an, bn, m, k, n](Node<T>& self) {
    const T* G = self.grad.data();
    if (an->requires_grad) {
      auto& da = grad_ref(*an);
      const T* B = bn->value.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          T gij = G[i * n + j];
          for (int p = 0; p < k; ++p) da[i * k + p] += gij * B[p * n + j];
        }
    }
    if (bn->requires_grad) {
      auto& db = grad_ref(*bn);
      const T* A = an->value.data();
      for (int p = 0; p < k; ++p)
        for (int i = 0; i < m; ++i) {
          T aip = A[i * k + p];
          const T* grow = G + static_cast<size_t>(i) * n;
          T* drow = db.data() + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) drow[j] += aip * grow[j];
        }
    }
  };
  return Tensor<T>(detail::make_op<T>({m, n}, std::move(out), {an, bn}, backward));
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  check(a.rank() == 2, "transpose2d requires rank 2, got " + shape_str(a.shape()));
  int m = a.shape()[0], n = a.shape()[1];
  auto an = a.node();
  std::vector<T> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = an->value[i * n + j];
  auto backward = [an, m, n](Node<T>& self) {
    auto& da = grad_ref(*an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) da[i * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  };
  return Tensor<T>(detail::make_op<T>({n, m}, std::move(out), {an}, backward));
}

// ---------------------------------------------------------------------------
// Reductions

namespace detail {

struct AxisSplit {
  int64_t outer, extent, inner;
};

inline AxisSplit axis_split(const Shape& s, int axis) {
  AxisSplit sp{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) sp.inner *= s[i];
  return sp;
}

inline Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  return out;
}

}  // namespace detail

enum class ReduceOp { Sum, Mean, Max };

// axis < 0 reduces everything to a scalar. Max ties route the gradient to the
// first maximal index.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, int axis = -1, bool keepdim = false) {
  auto an = a.node();
  if (axis < 0) {
    int64_t n = a.numel();
    T acc;
    int64_t arg = 0;
    if (op == ReduceOp::Max) {
      acc = an->value[0];
      for (int64_t i = 1; i < n; ++i)
        if (an->value[static_cast<size_t>(i)] > acc) {
          acc = an->value[static_cast<size_t>(i)];
          arg = i;
        }
    } else {
      acc = T(0);
      for (int64_t i = 0; i < n; ++i) acc += an->value[static_cast<size_t>(i)];
      if (op == ReduceOp::Mean) acc /= static_cast<T>(n);
    }
    auto backward = [an, op, n, arg](Node<T>& self) {
      auto& da = grad_ref(*an);
      T g = self.grad[0];
      switch (op) {
        case ReduceOp::Sum:
          for (int64_t i = 0; i < n; ++i) da[static_cast<size_t>(i)] += g;
          break;
        case ReduceOp::Mean:
          for (int64_t i = 0; i < n; ++i) da[static_cast<size_t>(i)] += g / static_cast<T>(n);
          break;
        case ReduceOp::Max:
          da[static_cast<size_t>(arg)] += g;
          break;
      }
    };
    return Tensor<T>(detail::make_op<T>({}, {acc}, {an}, backward));
  }

  check(axis < a.rank(), "reduce axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(a.shape()));
  auto sp = detail::axis_split(a.shape(), axis);
  Shape out_shape = detail::reduced_shape(a.shape(), axis, keepdim);
  std::vector<T> out(static_cast<size_t>(sp.outer * sp.inner));
  std::vector<int64_t> args;
  if (op == ReduceOp::Max) args.resize(out.size());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      int64_t base = o * sp.extent * sp.inner + in;
      T acc;
      int64_t arg = 0;
      if (op == ReduceOp::Max) {
        acc = an->value[static_cast<size_t>(base)];
        for (int64_t e = 1; e < sp.extent; ++e) {
          T v = an->value[static_cast<size_t>(base + e * sp.inner)];
          if (v > acc) {
            acc = v;
            arg = e;
          }
        }
        args[static_cast<size_t>(o * sp.inner + in)] = arg;
      } else {
        acc = T(0);
        for (int64_t e = 0; e < sp.extent; ++e)
          acc += an->value[static_cast<size_t>(base + e * sp.inner)];
        if (op == ReduceOp::Mean) acc /= static_cast<T>(sp.extent);
      }
      out[static_cast<size_t>(o * sp.inner + in)] = acc;
    }

  auto backward = [an, op, sp, args](Node<T>& self) {
    auto& da = grad_ref(*an);
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t in = 0; in < sp.inner; ++in) {
        int64_t oi = o * sp.inner + in;
        int64_t base = o * sp.extent * sp.inner + in;
        T g = self.grad[static_cast<size_t>(oi)];
        switch (op) {
          case ReduceOp::Sum:
            for (int64_t e = 0; e < sp.extent; ++e)
              da[static_cast<size_t>(base + e * sp.inner)] += g;
            break;
          case ReduceOp::Mean:
            for (int64_t e = 0; e < sp.extent; ++e)
              da[static_cast<size_t>(base + e * sp.inner)] += g / static_cast<T>(sp.extent);
            break;
          case ReduceOp::Max:
            da[static_cast<size_t>(base + args[static_cast<size_t>(oi)] * sp.inner)] += g;
            break;
        }
      }
  };
  return Tensor<T>(detail::make_op<T>(out_shape, std::move(out), {an}, backward));
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, int axis = -1, bool keepdim = false) {
  return reduce(ReduceOp::Sum, a, axis, keepdim);
}
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, int axis = -1, bool keepdim = false) {
  return reduce(ReduceOp::Mean, a, axis, keepdim);
}
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& a, int axis = -1, bool keepdim = false) {
  return reduce(ReduceOp::Max, a, axis, keepdim);
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check(numel_of(shape) == a.numel(),
        "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  auto an = a.node();
  std::vector<T> out = an->value;
  auto backward = [an](Node<T>& self) {
    auto& da = grad_ref(*an);
    for (size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
  };
  return Tensor<T>(detail::make_op<T>(std::move(shape), std::move(out), {an}, backward));
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
  check(axis >= 0 && axis < a.rank(), "slice axis out of range");
  check(start >= 0 && len >= 1 && start + len <= a.shape()[axis], "slice bounds out of range");
  auto an = a.node();
  auto sp = detail::axis_split(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<T> out(static_cast<size_t>(sp.outer * len * sp.inner));
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t e = 0; e < len; ++e)
      for (int64_t in = 0; in < sp.inner; ++in)
        out[static_cast<size_t>((o * len + e) * sp.inner + in)] =
            an->value[static_cast<size_t>((o * sp.extent + start + e) * sp.inner + in)];
  auto backward = [an, sp, start, len](Node<T>& self) {
    auto& da = grad_ref(*an);
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t e = 0; e < len; ++e)
        for (int64_t in = 0; in < sp.inner; ++in)
          da[static_cast<size_t>((o * sp.extent + start + e) * sp.inner + in)] +=
              self.grad[static_cast<size_t>((o * len + e) * sp.inner + in)];
  };
  return Tensor<T>(detail::make_op<T>(out_shape, std::move(out), {an}, backward));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  check(!parts.empty(), "concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  check(axis >= 0 && axis < static_cast<int>(s0.size()), "concat axis out of range");
  int total = 0;
  for (const auto& p : parts) {
    check(p.rank() == static_cast<int>(s0.size()), "concat rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis)
        check(p.shape()[i] == s0[i], "concat shapes differ off-axis: " + shape_str(p.shape()) +
                                         " vs " + shape_str(s0));
    total += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  auto osp = detail::axis_split(out_shape, axis);
  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::vector<int> extents;
  int off = 0;
  for (const auto& p : parts) {
    auto pn = p.node();
    auto psp = detail::axis_split(p.shape(), axis);
    for (int64_t o = 0; o < psp.outer; ++o)
      for (int64_t e = 0; e < psp.extent; ++e)
        for (int64_t in = 0; in < psp.inner; ++in)
          out[static_cast<size_t>((o * osp.extent + off + e) * osp.inner + in)] =
              pn->value[static_cast<size_t>((o * psp.extent + e) * psp.inner + in)];
    inputs.push_back(pn);
    extents.push_back(p.shape()[axis]);
    off += p.shape()[axis];
  }
  auto backward = [inputs, extents, osp](Node<T>& self) {
    int off = 0;
    for (size_t pi = 0; pi < inputs.size(); ++pi) {
      const auto& pn = inputs[pi];
      int ext = extents[pi];
      if (pn->requires_grad) {
        auto& da = grad_ref(*pn);
        for (int64_t o = 0; o < osp.outer; ++o)
          for (int64_t e = 0; e < ext; ++e)
            for (int64_t in = 0; in < osp.inner; ++in)
              da[static_cast<size_t>((o * ext + e) * osp.inner + in)] +=
                  self.grad[static_cast<size_t>((o * osp.extent + off + e) * osp.inner + in)];
      }
      off += ext;
    }
  };
  return Tensor<T>(detail::make_op<T>(out_shape, std::move(out), std::move(inputs), backward));
}

// Explicit broadcast copy to `shape`; backward sums over stretched axes.
template <typename T>
Tensor<T> expand(const Tensor<T>& a, Shape shape) {
  Shape bs;
  check(detail::broadcast_shapes(a.shape(), shape, bs) && bs == shape,
        "cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto an = a.node();
  auto ext = detail::padded_extents(shape);
  auto st = detail::padded_strides(a.shape(), shape);
  std::vector<T> out(static_cast<size_t>(numel_of(shape)));
  int64_t k = 0;
  for (int64_t i0 = 0; i0 < ext[0]; ++i0)
    for (int64_t i1 = 0; i1 < ext[1]; ++i1)
      for (int64_t i2 = 0; i2 < ext[2]; ++i2)
        for (int64_t i3 = 0; i3 < ext[3]; ++i3)
          out[static_cast<size_t>(k++)] =
              an->value[static_cast<size_t>(i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3])];
  Shape out_shape = shape;
  auto backward = [an, out_shape](Node<T>& self) {
    auto& da = grad_ref(*an);
    detail::reduce_broadcast_grad(self.grad, out_shape, an->shape, da);
  };
  return Tensor<T>(detail::make_op<T>(std::move(shape), std::move(out), {an}, backward));
}

// ---------------------------------------------------------------------------
// Softmax (fused, max-subtracted)

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  check(axis >= 0 && axis < a.rank(), "softmax axis out of range");
  auto an = a.node();
  auto sp = detail::axis_split(a.shape(), axis);
  std::vector<T> out(an->value.size());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      int64_t base = o * sp.extent * sp.inner + in;
      T mx = an->value[static_cast<size_t>(base)];
      for (int64_t e = 1; e < sp.extent; ++e)
        mx = std::max(mx, an->value[static_cast<size_t>(base + e * sp.inner)]);
      T denom = T(0);
      for (int64_t e = 0; e < sp.extent; ++e) {
        T v = std::exp(an->value[static_cast<size_t>(base + e * sp.inner)] - mx);
        out[static_cast<size_t>(base + e * sp.inner)] = v;
        denom += v;
      }
      for (int64_t e = 0; e < sp.extent; ++e)
        out[static_cast<size_t>(base + e * sp.inner)] /= denom;
    }
  auto backward = [an, sp](Node<T>& self) {
    auto& da = grad_ref(*an);
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t in = 0; in < sp.inner; ++in) {
        int64_t base = o * sp.extent * sp.inner + in;
        T dot = T(0);
        for (int64_t e = 0; e < sp.extent; ++e) {
          size_t i = static_cast<size_t>(base + e * sp.inner);
          dot += self.value[i] * self.grad[i];
        }
        for (int64_t e = 0; e < sp.extent; ++e) {
          size_t i = static_cast<size_t>(base + e * sp.inner);
          da[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
  };
  return Tensor<T>(detail::make_op<T>(a.shape(), std::move(out), {an}, backward));
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace vikan
