#pragma once

// Shared network blocks: linear layers, layer normalization, and multi-head
// self-attention in two numerically equivalent forms. The naive form
// materializes the full score matrix; the tiled form streams key/value tiles
// through an online softmax (running max + running denominator) and never
// holds more than O(T*d + tile*T) intermediate floats, which an
// instrumentation counter makes checkable.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "vikan/tensor.hpp"

namespace vikan {

struct ScratchStats {
  int64_t current = 0;
  int64_t peak = 0;

  void alloc(int64_t n) {
    current += n;
    peak = std::max(peak, current);
  }
  void release(int64_t n) { current -= n; }
  void reset() {
    current = 0;
    peak = 0;
  }
};

// Counts floats of attention-internal scratch (score rows, softmax state,
// saved probability matrices). Inputs, outputs, and gradient buffers are not
// scratch and are not counted.
inline ScratchStats& attention_scratch() {
  thread_local ScratchStats stats;
  return stats;
}

namespace detail {

template <typename T>
struct TrackedBuf {
  std::vector<T> v;
  TrackedBuf() = default;
  explicit TrackedBuf(size_t n, T fill = T(0)) : v(n, fill) {
    attention_scratch().alloc(static_cast<int64_t>(n));
  }
  void resize(size_t n) {
    attention_scratch().release(static_cast<int64_t>(v.size()));
    v.assign(n, T(0));
    attention_scratch().alloc(static_cast<int64_t>(n));
  }
  ~TrackedBuf() {
    if (!v.empty()) attention_scratch().release(static_cast<int64_t>(v.size()));
  }
  TrackedBuf(const TrackedBuf&) = delete;
  TrackedBuf& operator=(const TrackedBuf&) = delete;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  int in_dim() const { return weight.shape()[1]; }
  int out_dim() const { return weight.shape()[0]; }
};

// Xavier-uniform weights, zero bias.
template <typename T>
LinearParams<T> make_linear(int in, int out, Rng& rng) {
  T bound = static_cast<T>(std::sqrt(6.0 / (in + out)));
  LinearParams<T> p;
  p.weight = Tensor<T>::uniform({out, in}, -bound, bound, rng);
  p.bias = Tensor<T>::zeros({out});
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  return p;
}

// x [n, in] -> x W^T + b, bias broadcast over rows.
template <typename T>
Tensor<T> linear(const LinearParams<T>& p, const Tensor<T>& x) {
  check(x.rank() == 2 && x.shape()[1] == p.in_dim(),
        "linear: input " + shape_str(x.shape()) + " does not match weight " +
            shape_str(p.weight.shape()));
  return matmul(x, transpose2d(p.weight)) + p.bias;
}

// ---------------------------------------------------------------------------
// Layer normalization

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
LayerNormParams<T> make_layer_norm(int d) {
  LayerNormParams<T> p;
  p.gamma = Tensor<T>::full({d}, T(1));
  p.beta = Tensor<T>::zeros({d});
  p.gamma.set_requires_grad(true);
  p.beta.set_requires_grad(true);
  return p;
}

// Per-row standardization followed by the affine map gamma * x_hat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  check(x.rank() == 2, "layer_norm expects [n,d], got " + shape_str(x.shape()));
  auto mu = reduce_mean(x, 1, true);
  auto centered = x - mu;
  auto var = reduce_mean(centered * centered, 1, true);
  auto inv_sd = pow_scalar(var + eps, T(-0.5));
  return (centered * inv_sd) * gamma + beta;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p, T eps = T(1e-5)) {
  return layer_norm(x, p.gamma, p.beta, eps);
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

template <typename T>
struct AttentionParams {
  std::vector<Tensor<T>> w_q, w_k, w_v;  // per head, each [d, d_head]
  Tensor<T> w_o;                         // [d, d]

  int heads() const { return static_cast<int>(w_q.size()); }
  int dim() const { return w_o.shape()[0]; }
  int head_dim() const { return w_q.empty() ? 0 : w_q[0].shape()[1]; }
};

template <typename T>
AttentionParams<T> make_attention(int d, int heads, Rng& rng) {
  check(heads >= 1 && d % heads == 0, "head count must divide embedding dim");
  int dh = d / heads;
  T bound = static_cast<T>(std::sqrt(6.0 / (d + dh)));
  T bound_o = static_cast<T>(std::sqrt(6.0 / (d + d)));
  AttentionParams<T> p;
  for (int h = 0; h < heads; ++h) {
    p.w_q.push_back(Tensor<T>::uniform({d, dh}, -bound, bound, rng).set_requires_grad(true));
    p.w_k.push_back(Tensor<T>::uniform({d, dh}, -bound, bound, rng).set_requires_grad(true));
    p.w_v.push_back(Tensor<T>::uniform({d, dh}, -bound, bound, rng).set_requires_grad(true));
  }
  p.w_o = Tensor<T>::uniform({d, d}, -bound_o, bound_o, rng).set_requires_grad(true);
  return p;
}

namespace detail {

// Fused scaled-dot-product attention over one head for a batch of equal-length
// sequences. q/k/v are [B*T, dh]; sequence b owns rows [b*T, (b+1)*T).
//
// naive: builds each sequence's probability matrix and keeps it for backward.
// tiled: online softmax over key tiles; keeps only the running max and
//        denominator per row and rebuilds probability tiles during backward.
template <typename T>
Tensor<T> sdpa_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int seq_len,
                    bool tiled, int tile) {
  check(q.shape() == k.shape() && k.shape() == v.shape(),
        "attention head inputs must share shape");
  check(q.rank() == 2, "attention head inputs must be rank 2");
  const int n = q.shape()[0];
  const int dh = q.shape()[1];
  check(seq_len >= 1 && n % seq_len == 0, "rows not divisible into sequences");
  const int batches = n / seq_len;
  const int t_len = seq_len;
  if (tile < 1 || tile > t_len) tile = t_len;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  const T* Q = qn->value.data();
  const T* K = kn->value.data();
  const T* V = vn->value.data();

  std::vector<T> out(static_cast<size_t>(n) * dh, T(0));

  // saved for backward
  auto probs = std::make_shared<TrackedBuf<T>>();   // naive: B*T*T
  auto row_max = std::make_shared<TrackedBuf<T>>(); // tiled: B*T
  auto row_den = std::make_shared<TrackedBuf<T>>(); // tiled: B*T

  if (!tiled) {
    probs->resize(static_cast<size_t>(batches) * t_len * t_len);
    for (int b = 0; b < batches; ++b) {
      const T* Qb = Q + static_cast<size_t>(b) * t_len * dh;
      const T* Kb = K + static_cast<size_t>(b) * t_len * dh;
      const T* Vb = V + static_cast<size_t>(b) * t_len * dh;
      T* Pb = probs->v.data() + static_cast<size_t>(b) * t_len * t_len;
      T* Ob = out.data() + static_cast<size_t>(b) * t_len * dh;
      for (int i = 0; i < t_len; ++i) {
        T* prow = Pb + static_cast<size_t>(i) * t_len;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < t_len; ++j) {
          T s = T(0);
          for (int c = 0; c < dh; ++c) s += Qb[i * dh + c] * Kb[j * dh + c];
          prow[j] = s * scale;
          mx = std::max(mx, prow[j]);
        }
        T den = T(0);
        for (int j = 0; j < t_len; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          den += prow[j];
        }
        for (int j = 0; j < t_len; ++j) prow[j] /= den;
        for (int j = 0; j < t_len; ++j) {
          T p = prow[j];
          for (int c = 0; c < dh; ++c) Ob[i * dh + c] += p * Vb[j * dh + c];
        }
      }
    }
  } else {
    row_max->resize(static_cast<size_t>(n));
    row_den->resize(static_cast<size_t>(n));
    TrackedBuf<T> scores(static_cast<size_t>(tile));
    for (int b = 0; b < batches; ++b) {
      const T* Qb = Q + static_cast<size_t>(b) * t_len * dh;
      const T* Kb = K + static_cast<size_t>(b) * t_len * dh;
      const T* Vb = V + static_cast<size_t>(b) * t_len * dh;
      T* Ob = out.data() + static_cast<size_t>(b) * t_len * dh;
      T* m = row_max->v.data() + static_cast<size_t>(b) * t_len;
      T* l = row_den->v.data() + static_cast<size_t>(b) * t_len;
      for (int i = 0; i < t_len; ++i) {
        m[i] = -std::numeric_limits<T>::infinity();
        l[i] = T(0);
      }
      for (int j0 = 0; j0 < t_len; j0 += tile) {
        int jl = std::min(tile, t_len - j0);
        for (int i = 0; i < t_len; ++i) {
          T tile_max = -std::numeric_limits<T>::infinity();
          for (int j = 0; j < jl; ++j) {
            T s = T(0);
            for (int c = 0; c < dh; ++c) s += Qb[i * dh + c] * Kb[(j0 + j) * dh + c];
            scores.v[static_cast<size_t>(j)] = s * scale;
            tile_max = std::max(tile_max, scores.v[static_cast<size_t>(j)]);
          }
          T m_new = std::max(m[i], tile_max);
          T correction = (l[i] > T(0)) ? std::exp(m[i] - m_new) : T(0);
          l[i] *= correction;
          for (int c = 0; c < dh; ++c) Ob[i * dh + c] *= correction;
          for (int j = 0; j < jl; ++j) {
            T p = std::exp(scores.v[static_cast<size_t>(j)] - m_new);
            l[i] += p;
            for (int c = 0; c < dh; ++c) Ob[i * dh + c] += p * Vb[(j0 + j) * dh + c];
          }
          m[i] = m_new;
        }
      }
      for (int i = 0; i < t_len; ++i)
        for (int c = 0; c < dh; ++c) Ob[i * dh + c] /= l[i];
    }
  }

  auto backward = [qn, kn, vn, probs, row_max, row_den, batches, t_len, dh, scale, tiled,
                   tile](Node<T>& self) {
    const T* Q = qn->value.data();
    const T* K = kn->value.data();
    const T* V = vn->value.data();
    const T* G = self.grad.data();
    const T* O = self.value.data();
    auto& dq = grad_ref(*qn);
    auto& dk = grad_ref(*kn);
    auto& dv = grad_ref(*vn);

    if (!tiled) {
      TrackedBuf<T> dprow(static_cast<size_t>(t_len));
      for (int b = 0; b < batches; ++b) {
        const T* Qb = Q + static_cast<size_t>(b) * t_len * dh;
        const T* Kb = K + static_cast<size_t>(b) * t_len * dh;
        const T* Vb = V + static_cast<size_t>(b) * t_len * dh;
        const T* Pb = probs->v.data() + static_cast<size_t>(b) * t_len * t_len;
        const T* Gb = G + static_cast<size_t>(b) * t_len * dh;
        T* dQb = dq.data() + static_cast<size_t>(b) * t_len * dh;
        T* dKb = dk.data() + static_cast<size_t>(b) * t_len * dh;
        T* dVb = dv.data() + static_cast<size_t>(b) * t_len * dh;
        for (int i = 0; i < t_len; ++i) {
          const T* prow = Pb + static_cast<size_t>(i) * t_len;
          T dot = T(0);
          for (int j = 0; j < t_len; ++j) {
            T dp = T(0);
            for (int c = 0; c < dh; ++c) dp += Gb[i * dh + c] * Vb[j * dh + c];
            dprow.v[static_cast<size_t>(j)] = dp;
            dot += dp * prow[j];
          }
          for (int j = 0; j < t_len; ++j) {
            T p = prow[j];
            T ds = p * (dprow.v[static_cast<size_t>(j)] - dot) * scale;
            for (int c = 0; c < dh; ++c) {
              dQb[i * dh + c] += ds * Kb[j * dh + c];
              dKb[j * dh + c] += ds * Qb[i * dh + c];
              dVb[j * dh + c] += p * Gb[i * dh + c];
            }
          }
        }
      }
    } else {
      TrackedBuf<T> dvec(static_cast<size_t>(t_len));           // D_i = dO_i . O_i
      TrackedBuf<T> ptile(static_cast<size_t>(t_len) * tile);   // probability tile
      for (int b = 0; b < batches; ++b) {
        const T* Qb = Q + static_cast<size_t>(b) * t_len * dh;
        const T* Kb = K + static_cast<size_t>(b) * t_len * dh;
        const T* Vb = V + static_cast<size_t>(b) * t_len * dh;
        const T* Gb = G + static_cast<size_t>(b) * t_len * dh;
        const T* Ob = O + static_cast<size_t>(b) * t_len * dh;
        const T* m = row_max->v.data() + static_cast<size_t>(b) * t_len;
        const T* l = row_den->v.data() + static_cast<size_t>(b) * t_len;
        T* dQb = dq.data() + static_cast<size_t>(b) * t_len * dh;
        T* dKb = dk.data() + static_cast<size_t>(b) * t_len * dh;
        T* dVb = dv.data() + static_cast<size_t>(b) * t_len * dh;
        for (int i = 0; i < t_len; ++i) {
          T d = T(0);
          for (int c = 0; c < dh; ++c) d += Gb[i * dh + c] * Ob[i * dh + c];
          dvec.v[static_cast<size_t>(i)] = d;
        }
        for (int j0 = 0; j0 < t_len; j0 += tile) {
          int jl = std::min(tile, t_len - j0);
          for (int i = 0; i < t_len; ++i) {
            for (int j = 0; j < jl; ++j) {
              T s = T(0);
              for (int c = 0; c < dh; ++c) s += Qb[i * dh + c] * Kb[(j0 + j) * dh + c];
              ptile.v[static_cast<size_t>(i) * tile + j] = std::exp(s * scale - m[i]) / l[i];
            }
          }
          for (int i = 0; i < t_len; ++i) {
            for (int j = 0; j < jl; ++j) {
              T p = ptile.v[static_cast<size_t>(i) * tile + j];
              T dp = T(0);
              for (int c = 0; c < dh; ++c) dp += Gb[i * dh + c] * Vb[(j0 + j) * dh + c];
              T ds = p * (dp - dvec.v[static_cast<size_t>(i)]) * scale;
              for (int c = 0; c < dh; ++c) {
                dQb[i * dh + c] += ds * Kb[(j0 + j) * dh + c];
                dKb[(j0 + j) * dh + c] += ds * Qb[i * dh + c];
                dVb[(j0 + j) * dh + c] += p * Gb[i * dh + c];
              }
            }
          }
        }
      }
    }
  };

  return Tensor<T>(detail::make_op<T>({n, dh}, std::move(out), {qn, kn, vn}, backward));
}

}  // namespace detail

enum class AttentionKind { Naive, Tiled };

// x2d is [B*T, d]; every consecutive run of seq_len rows is one sequence.
template <typename T>
Tensor<T> attention_batched(const AttentionParams<T>& p, const Tensor<T>& x2d, int seq_len,
                            AttentionKind kind, int tile = 0) {
  check(x2d.rank() == 2 && x2d.shape()[1] == p.dim(),
        "attention: input " + shape_str(x2d.shape()) + " does not match model dim " +
            std::to_string(p.dim()));
  std::vector<Tensor<T>> head_outs;
  for (int h = 0; h < p.heads(); ++h) {
    auto q = matmul(x2d, p.w_q[h]);
    auto k = matmul(x2d, p.w_k[h]);
    auto v = matmul(x2d, p.w_v[h]);
    head_outs.push_back(
        detail::sdpa_head(q, k, v, seq_len, kind == AttentionKind::Tiled, tile));
  }
  auto merged = p.heads() == 1 ? head_outs[0] : concat(head_outs, 1);
  return matmul(merged, p.w_o);
}

// Single-sequence forms. x is [T, d].
template <typename T>
Tensor<T> attention_naive(const AttentionParams<T>& p, const Tensor<T>& x) {
  return attention_batched(p, x, x.shape()[0], AttentionKind::Naive);
}

template <typename T>
Tensor<T> attention_tiled(const AttentionParams<T>& p, const Tensor<T>& x, int tile) {
  check(tile >= 1, "tile must be positive");
  return attention_batched(p, x, x.shape()[0], AttentionKind::Tiled, tile);
}

}  // namespace vikan
