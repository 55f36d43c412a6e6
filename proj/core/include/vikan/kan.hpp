#pragma once

// Dimension-wise univariate expansion blocks. Every variant maps [n, d] to
// [n, d] behind the same interface: apply a learnable scalar function phi to
// each coordinate, concatenate the channel outputs, then mix with a linear
// d -> d map. The MLP variant is the standard two-layer baseline.
//
// Evaluation strategies deliberately differ where the variants' namesakes
// differ: the sine/Fourier/RBF phis are fused kernels with cached basis rows,
// VanillaKAN evaluates splines on their local support, and EfficientKAN
// materializes the full batched basis matrix (value + derivative) per call.

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vikan/bspline.hpp"
#include "vikan/nn.hpp"
#include "vikan/tensor.hpp"

namespace vikan {

enum class ExpansionVariant { VanillaKAN, SineKAN, FourierKAN, FastKAN, EfficientKAN, MLP };

inline const char* variant_name(ExpansionVariant v) {
  switch (v) {
    case ExpansionVariant::VanillaKAN: return "vanillakan";
    case ExpansionVariant::SineKAN: return "sinekan";
    case ExpansionVariant::FourierKAN: return "fourierkan";
    case ExpansionVariant::FastKAN: return "fastkan";
    case ExpansionVariant::EfficientKAN: return "efficientkan";
    case ExpansionVariant::MLP: return "mlp";
  }
  return "?";
}

inline bool variant_from_name(const std::string& s, ExpansionVariant& out) {
  for (ExpansionVariant v :
       {ExpansionVariant::VanillaKAN, ExpansionVariant::SineKAN, ExpansionVariant::FourierKAN,
        ExpansionVariant::FastKAN, ExpansionVariant::EfficientKAN, ExpansionVariant::MLP}) {
    if (s == variant_name(v)) {
      out = v;
      return true;
    }
  }
  return false;
}

struct ExpansionConfig {
  ExpansionVariant variant = ExpansionVariant::SineKAN;
  int M = 8;        // sinusoid / harmonic count per channel
  int centers = 5;  // RBF centers per channel
  int knots = 6;    // spline knot points across grid_range
  int order = 3;    // spline degree (cubic)
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  int hidden = 8;             // MLP hidden width
  int hidden_multiplier = 1;  // phi channels per input dimension
  uint64_t seed = 0;

  int spline_basis_count() const { return knots + order - 1; }

  void validate() const {
    check(M >= 1, "expansion config: M must be >= 1");
    check(centers >= 1, "expansion config: centers must be >= 1");
    check(order >= 1, "expansion config: order must be >= 1");
    check(knots >= order + 1, "expansion config: knots must be >= order+1");
    check(grid_lo < grid_hi, "expansion config: grid range must satisfy lo < hi");
    check(hidden >= 1, "expansion config: hidden must be >= 1");
    check(hidden_multiplier >= 1, "expansion config: hidden_multiplier must be >= 1");
  }
};

// Parameter bundles. Channel c of a width-multiplied expansion reads input
// dimension c / hidden_multiplier.

template <typename T>
struct SineKanParams {
  Tensor<T> alpha;  // [channels, M] amplitudes
  Tensor<T> omega;  // [channels, M] frequencies
  Tensor<T> phase;  // [channels, M]
};

template <typename T>
struct FourierKanParams {
  Tensor<T> a_sin;  // [channels, M], harmonics k = 1..M
  Tensor<T> a_cos;  // [channels, M]
};

template <typename T>
struct FastKanParams {
  Tensor<T> centers;     // [channels, C]
  Tensor<T> log_widths;  // [channels, C]; width = exp(log_width) > 0 always
  Tensor<T> weights;     // [channels, C]
};

template <typename T>
struct SplineKanParams {
  BsplineGrid grid;
  Tensor<T> coeff;        // [channels, B]
  Tensor<T> base_weight;  // [channels]; SiLU residual scale (VanillaKAN form)
};

template <typename T>
struct ExpansionParams {
  ExpansionVariant variant = ExpansionVariant::SineKAN;
  int dim = 0;
  int channels = 0;  // dim * hidden_multiplier
  SineKanParams<T> sine;
  FourierKanParams<T> fourier;
  FastKanParams<T> rbf;
  SplineKanParams<T> spline;
  LinearParams<T> mlp_in, mlp_out;  // MLP variant
  LinearParams<T> mixer;            // [dim, channels] after the expansions
};

// ---------------------------------------------------------------------------
// phi kernels (fused autodiff nodes)

// out[i,c] = sum_m alpha[c,m] * sin(omega[c,m] * x[i,j(c)] + phase[c,m])
template <typename T>
Tensor<T> phi_sine(const SineKanParams<T>& p, const Tensor<T>& x) {
  check(x.rank() == 2, "phi_sine expects [n,d]");
  const int n = x.shape()[0], d = x.shape()[1];
  const int channels = p.alpha.shape()[0], M = p.alpha.shape()[1];
  check(channels % d == 0, "phi channel count must be a multiple of input dim");
  const int mult = channels / d;
  auto xn = x.node();
  auto an = p.alpha.node();
  auto on = p.omega.node();
  auto bn = p.phase.node();

  std::vector<T> out(static_cast<size_t>(n) * channels, T(0));
  // sin and cos of every argument, cached for the flop-only backward
  auto cache = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * channels * M * 2);
  T* sc = cache->data();
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c) {
      T xv = xn->value[static_cast<size_t>(i) * d + c / mult];
      T acc = T(0);
      size_t base = (static_cast<size_t>(i) * channels + c) * M * 2;
      for (int m = 0; m < M; ++m) {
        T arg = on->value[c * M + m] * xv + bn->value[c * M + m];
        T s = std::sin(arg);
        T co = std::cos(arg);
        sc[base + 2 * m] = s;
        sc[base + 2 * m + 1] = co;
        acc += an->value[c * M + m] * s;
      }
      out[static_cast<size_t>(i) * channels + c] = acc;
    }

  auto backward = [xn, an, on, bn, cache, n, d, channels, M, mult](Node<T>& self) {
    const T* sc = cache->data();
    const T* G = self.grad.data();
    auto& dx = grad_ref(*xn);
    auto& da = grad_ref(*an);
    auto& dw = grad_ref(*on);
    auto& db = grad_ref(*bn);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        T g = G[static_cast<size_t>(i) * channels + c];
        if (g == T(0)) continue;
        T xv = xn->value[static_cast<size_t>(i) * d + c / mult];
        size_t base = (static_cast<size_t>(i) * channels + c) * M * 2;
        T dxi = T(0);
        for (int m = 0; m < M; ++m) {
          T s = sc[base + 2 * m];
          T co = sc[base + 2 * m + 1];
          T al = an->value[c * M + m];
          da[c * M + m] += g * s;
          dw[c * M + m] += g * al * co * xv;
          db[c * M + m] += g * al * co;
          dxi += al * on->value[c * M + m] * co;
        }
        dx[static_cast<size_t>(i) * d + c / mult] += g * dxi;
      }
  };
  return Tensor<T>(detail::make_op<T>({n, channels}, std::move(out), {xn, an, on, bn}, backward));
}

// out[i,c] = sum_k a_sin[c,k] sin(k x) + a_cos[c,k] cos(k x), k = 1..M.
// sin(kx)/cos(kx) come from one sincos plus the angle-addition recurrence.
template <typename T>
Tensor<T> phi_fourier(const FourierKanParams<T>& p, const Tensor<T>& x) {
  check(x.rank() == 2, "phi_fourier expects [n,d]");
  const int n = x.shape()[0], d = x.shape()[1];
  const int channels = p.a_sin.shape()[0], M = p.a_sin.shape()[1];
  check(channels % d == 0, "phi channel count must be a multiple of input dim");
  const int mult = channels / d;
  auto xn = x.node();
  auto sn = p.a_sin.node();
  auto cn = p.a_cos.node();

  std::vector<T> out(static_cast<size_t>(n) * channels, T(0));
  // per element: sin(kx), cos(kx) for k=1..M (harmonics shared across the
  // mult channels of one dimension, so cache per (i, j))
  auto cache = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * d * M * 2);
  T* hc = cache->data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      T xv = xn->value[static_cast<size_t>(i) * d + j];
      T s1 = std::sin(xv);
      T c1 = std::cos(xv);
      size_t base = (static_cast<size_t>(i) * d + j) * M * 2;
      T sk = s1, ck = c1;
      hc[base] = sk;
      hc[base + 1] = ck;
      for (int k = 1; k < M; ++k) {
        T sn1 = sk * c1 + ck * s1;
        T cn1 = ck * c1 - sk * s1;
        sk = sn1;
        ck = cn1;
        hc[base + 2 * k] = sk;
        hc[base + 2 * k + 1] = ck;
      }
    }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c) {
      int j = c / mult;
      size_t base = (static_cast<size_t>(i) * d + j) * M * 2;
      T acc = T(0);
      for (int k = 0; k < M; ++k)
        acc += sn->value[c * M + k] * hc[base + 2 * k] + cn->value[c * M + k] * hc[base + 2 * k + 1];
      out[static_cast<size_t>(i) * channels + c] = acc;
    }

  auto backward = [xn, sn, cn, cache, n, d, channels, M, mult](Node<T>& self) {
    const T* hc = cache->data();
    const T* G = self.grad.data();
    auto& dx = grad_ref(*xn);
    auto& dsin = grad_ref(*sn);
    auto& dcos = grad_ref(*cn);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        T g = G[static_cast<size_t>(i) * channels + c];
        if (g == T(0)) continue;
        int j = c / mult;
        size_t base = (static_cast<size_t>(i) * d + j) * M * 2;
        T dxi = T(0);
        for (int k = 0; k < M; ++k) {
          T skx = hc[base + 2 * k];
          T ckx = hc[base + 2 * k + 1];
          dsin[c * M + k] += g * skx;
          dcos[c * M + k] += g * ckx;
          dxi += static_cast<T>(k + 1) *
                 (sn->value[c * M + k] * ckx - cn->value[c * M + k] * skx);
        }
        dx[static_cast<size_t>(i) * d + j] += g * dxi;
      }
  };
  return Tensor<T>(detail::make_op<T>({n, channels}, std::move(out), {xn, sn, cn}, backward));
}

// out[i,c] = sum_r w[c,r] * exp(-((x - center[c,r]) / width[c,r])^2),
// width = exp(log_width). Gaussian basis rows are cached for backward.
template <typename T>
Tensor<T> phi_rbf(const FastKanParams<T>& p, const Tensor<T>& x) {
  check(x.rank() == 2, "phi_rbf expects [n,d]");
  const int n = x.shape()[0], d = x.shape()[1];
  const int channels = p.centers.shape()[0], C = p.centers.shape()[1];
  check(channels % d == 0, "phi channel count must be a multiple of input dim");
  const int mult = channels / d;
  auto xn = x.node();
  auto cn = p.centers.node();
  auto ln = p.log_widths.node();
  auto wn = p.weights.node();

  // width reciprocals are parameter-sized; precompute once per call
  auto inv_w = std::make_shared<std::vector<T>>(static_cast<size_t>(channels) * C);
  for (size_t i = 0; i < inv_w->size(); ++i) (*inv_w)[i] = std::exp(-ln->value[i]);

  std::vector<T> out(static_cast<size_t>(n) * channels, T(0));
  auto basis = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * channels * C);
  T* B = basis->data();
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c) {
      T xv = xn->value[static_cast<size_t>(i) * d + c / mult];
      size_t base = (static_cast<size_t>(i) * channels + c) * C;
      T acc = T(0);
      for (int r = 0; r < C; ++r) {
        T u = (xv - cn->value[c * C + r]) * (*inv_w)[c * C + r];
        T b = std::exp(-u * u);
        B[base + r] = b;
        acc += wn->value[c * C + r] * b;
      }
      out[static_cast<size_t>(i) * channels + c] = acc;
    }

  auto backward = [xn, cn, ln, wn, inv_w, basis, n, d, channels, C, mult](Node<T>& self) {
    const T* B = basis->data();
    const T* G = self.grad.data();
    auto& dx = grad_ref(*xn);
    auto& dc = grad_ref(*cn);
    auto& dl = grad_ref(*ln);
    auto& dw = grad_ref(*wn);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        T g = G[static_cast<size_t>(i) * channels + c];
        if (g == T(0)) continue;
        T xv = xn->value[static_cast<size_t>(i) * d + c / mult];
        size_t base = (static_cast<size_t>(i) * channels + c) * C;
        T dxi = T(0);
        for (int r = 0; r < C; ++r) {
          T iw = (*inv_w)[c * C + r];
          T u = (xv - cn->value[c * C + r]) * iw;
          T b = B[base + r];
          T w = wn->value[c * C + r];
          dw[c * C + r] += g * b;
          T common = g * w * b * T(2) * u;
          dc[c * C + r] += common * iw;        // d/dcenter = +2u/width * b * w
          dl[c * C + r] += common * u;         // d/dlog_width = +2u^2 * b * w
          dxi -= common * iw;                  // d/dx = -2u/width * b * w
        }
        dx[static_cast<size_t>(i) * d + c / mult] += dxi;
      }
  };
  return Tensor<T>(
      detail::make_op<T>({n, channels}, std::move(out), {xn, cn, ln, wn}, backward));
}

enum class SplineEval {
  Local,          // nonzero-support de Boor (VanillaKAN)
  BatchedMatrix,  // full basis matrix per call (EfficientKAN)
};

// out[i,c] = sum_b coeff[c,b] * B_b(x[i,j(c)])  (+ base_weight[c] * silu(x))
template <typename T>
Tensor<T> phi_spline(const SplineKanParams<T>& p, const Tensor<T>& x, bool with_base,
                     SplineEval strategy) {
  check(x.rank() == 2, "phi_spline expects [n,d]");
  const int n = x.shape()[0], d = x.shape()[1];
  const int channels = p.coeff.shape()[0];
  const int nb = p.grid.basis_count();
  check(p.coeff.shape()[1] == nb, "spline coefficient count does not match basis count");
  check(channels % d == 0, "phi channel count must be a multiple of input dim");
  const int mult = channels / d;
  const BsplineGrid grid = p.grid;
  const int deg = grid.degree;
  auto xn = x.node();
  auto kn = p.coeff.node();
  std::shared_ptr<Node<T>> bwn = with_base ? p.base_weight.node() : nullptr;

  std::vector<T> out(static_cast<size_t>(n) * channels, T(0));

  struct LocalCache {
    std::vector<T> vals;    // [n*d, deg+1]
    std::vector<T> derivs;  // [n*d, deg+1]
    std::vector<int> first; // [n*d]; -1 for extension/outside rows
    std::vector<T> full;    // sweep results for fallback rows, 2*nb each
    std::vector<int> full_at;
  };
  auto cache = std::make_shared<LocalCache>();

  if (strategy == SplineEval::Local) {
    cache->vals.resize(static_cast<size_t>(n) * d * (deg + 1));
    cache->derivs.resize(static_cast<size_t>(n) * d * (deg + 1));
    cache->first.assign(static_cast<size_t>(n) * d, -1);
    std::vector<T> work(static_cast<size_t>(grid.num_knots() - 1));
    std::vector<T> fv(static_cast<size_t>(nb)), fd(static_cast<size_t>(nb));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        size_t e = static_cast<size_t>(i) * d + j;
        T xv = xn->value[e];
        int first = bspline_local(grid, xv, cache->vals.data() + e * (deg + 1),
                                  cache->derivs.data() + e * (deg + 1));
        cache->first[e] = first;
        if (first < 0) {
          // extension cells: evaluate the full family once and stash it
          bspline_basis_deriv_sweep(grid, xv, fv.data(), fd.data(), work.data());
          cache->full_at.push_back(static_cast<int>(e));
          cache->full.insert(cache->full.end(), fv.begin(), fv.end());
          cache->full.insert(cache->full.end(), fd.begin(), fd.end());
        }
      }
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        size_t e = static_cast<size_t>(i) * d + c / mult;
        T acc = T(0);
        int first = cache->first[e];
        if (first >= 0) {
          const T* v = cache->vals.data() + e * (deg + 1);
          for (int r = 0; r <= deg; ++r) acc += kn->value[c * nb + first + r] * v[r];
        } else {
          // find stashed full row
          for (size_t q = 0; q < cache->full_at.size(); ++q)
            if (cache->full_at[q] == static_cast<int>(e)) {
              const T* v = cache->full.data() + q * 2 * nb;
              for (int b = 0; b < nb; ++b) acc += kn->value[c * nb + b] * v[b];
              break;
            }
        }
        out[static_cast<size_t>(i) * channels + c] = acc;
      }
  } else {
    // full basis + derivative matrices for every element
    cache->vals.resize(static_cast<size_t>(n) * d * nb);
    cache->derivs.resize(static_cast<size_t>(n) * d * nb);
    std::vector<T> work(static_cast<size_t>(grid.num_knots() - 1));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        size_t e = static_cast<size_t>(i) * d + j;
        bspline_basis_deriv_sweep(grid, xn->value[e], cache->vals.data() + e * nb,
                                  cache->derivs.data() + e * nb, work.data());
      }
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        size_t e = static_cast<size_t>(i) * d + c / mult;
        const T* v = cache->vals.data() + e * nb;
        T acc = T(0);
        for (int b = 0; b < nb; ++b) acc += kn->value[c * nb + b] * v[b];
        out[static_cast<size_t>(i) * channels + c] = acc;
      }
  }

  if (with_base) {
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        T xv = xn->value[static_cast<size_t>(i) * d + c / mult];
        T sig = T(1) / (T(1) + std::exp(-xv));
        out[static_cast<size_t>(i) * channels + c] += bwn->value[c] * xv * sig;
      }
  }

  std::vector<std::shared_ptr<Node<T>>> inputs = {xn, kn};
  if (with_base) inputs.push_back(bwn);

  auto backward = [xn, kn, bwn, cache, strategy, n, d, channels, nb, deg, mult,
                   with_base](Node<T>& self) {
    const T* G = self.grad.data();
    auto& dx = grad_ref(*xn);
    auto& dk = grad_ref(*kn);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        T g = G[static_cast<size_t>(i) * channels + c];
        if (g == T(0)) continue;
        size_t e = static_cast<size_t>(i) * d + c / mult;
        T dxi = T(0);
        if (strategy == SplineEval::Local) {
          int first = cache->first[e];
          if (first >= 0) {
            const T* v = cache->vals.data() + e * (deg + 1);
            const T* dv = cache->derivs.data() + e * (deg + 1);
            for (int r = 0; r <= deg; ++r) {
              dk[c * nb + first + r] += g * v[r];
              dxi += kn->value[c * nb + first + r] * dv[r];
            }
          } else {
            for (size_t q = 0; q < cache->full_at.size(); ++q)
              if (cache->full_at[q] == static_cast<int>(e)) {
                const T* v = cache->full.data() + q * 2 * nb;
                const T* dv = v + nb;
                for (int b = 0; b < nb; ++b) {
                  dk[c * nb + b] += g * v[b];
                  dxi += kn->value[c * nb + b] * dv[b];
                }
                break;
              }
          }
        } else {
          const T* v = cache->vals.data() + e * nb;
          const T* dv = cache->derivs.data() + e * nb;
          for (int b = 0; b < nb; ++b) {
            dk[c * nb + b] += g * v[b];
            dxi += kn->value[c * nb + b] * dv[b];
          }
        }
        if (with_base) {
          T xv = xn->value[e];
          T sig = T(1) / (T(1) + std::exp(-xv));
          auto& dbw = grad_ref(*bwn);
          dbw[c] += g * xv * sig;
          dxi += bwn->value[c] * sig * (T(1) + xv * (T(1) - sig));
        }
        dx[e] += g * dxi;
      }
  };
  return Tensor<T>(detail::make_op<T>({n, channels}, std::move(out), std::move(inputs), backward));
}

// ---------------------------------------------------------------------------
// Initialization and the full feed-forward block

template <typename T>
ExpansionParams<T> init_expansion(const ExpansionConfig& cfg, int d, Rng& rng) {
  cfg.validate();
  ExpansionParams<T> p;
  p.variant = cfg.variant;
  p.dim = d;
  p.channels = d * cfg.hidden_multiplier;
  const int ch = p.channels;

  switch (cfg.variant) {
    case ExpansionVariant::SineKAN: {
      T amp = static_cast<T>(1.0 / cfg.M);
      p.sine.omega = Tensor<T>::uniform({ch, cfg.M}, T(-1), T(1), rng).set_requires_grad(true);
      p.sine.phase = Tensor<T>::uniform({ch, cfg.M}, T(-1), T(1), rng).set_requires_grad(true);
      p.sine.alpha = Tensor<T>::uniform({ch, cfg.M}, -amp, amp, rng).set_requires_grad(true);
      break;
    }
    case ExpansionVariant::FourierKAN: {
      T amp = static_cast<T>(1.0 / cfg.M);
      p.fourier.a_sin = Tensor<T>::uniform({ch, cfg.M}, -amp, amp, rng).set_requires_grad(true);
      p.fourier.a_cos = Tensor<T>::uniform({ch, cfg.M}, -amp, amp, rng).set_requires_grad(true);
      break;
    }
    case ExpansionVariant::FastKAN: {
      p.rbf.centers =
          Tensor<T>::uniform({ch, cfg.centers}, T(0), T(1), rng).set_requires_grad(true);
      std::vector<T> lw(static_cast<size_t>(ch) * cfg.centers);
      for (auto& v : lw) {
        double w = rng.uniform(0.0, 1.0);
        v = static_cast<T>(std::log(std::max(w, 1e-4)));  // floor keeps widths sane
      }
      p.rbf.log_widths =
          Tensor<T>::from_data({ch, cfg.centers}, std::move(lw)).set_requires_grad(true);
      p.rbf.weights =
          Tensor<T>::uniform({ch, cfg.centers}, T(-1), T(1), rng).set_requires_grad(true);
      break;
    }
    case ExpansionVariant::VanillaKAN:
    case ExpansionVariant::EfficientKAN: {
      p.spline.grid = make_bspline_grid(cfg.knots, cfg.order, cfg.grid_lo, cfg.grid_hi);
      int nb = p.spline.grid.basis_count();
      T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(nb)));
      p.spline.coeff = Tensor<T>::uniform({ch, nb}, -scale, scale, rng).set_requires_grad(true);
      if (cfg.variant == ExpansionVariant::VanillaKAN)
        p.spline.base_weight = Tensor<T>::full({ch}, T(1)).set_requires_grad(true);
      break;
    }
    case ExpansionVariant::MLP: {
      p.mlp_in = make_linear<T>(d, cfg.hidden, rng);
      p.mlp_out = make_linear<T>(cfg.hidden, d, rng);
      break;
    }
  }
  if (cfg.variant != ExpansionVariant::MLP) p.mixer = make_linear<T>(ch, d, rng);
  return p;
}

// Exact learnable scalar count for one feed-forward block.
inline int64_t expansion_param_count(const ExpansionConfig& cfg, int d) {
  int64_t ch = static_cast<int64_t>(d) * cfg.hidden_multiplier;
  int64_t mixer = static_cast<int64_t>(d) * ch + d;
  switch (cfg.variant) {
    case ExpansionVariant::SineKAN: return 3 * ch * cfg.M + mixer;
    case ExpansionVariant::FourierKAN: return 2 * ch * cfg.M + mixer;
    case ExpansionVariant::FastKAN: return 3 * ch * cfg.centers + mixer;
    case ExpansionVariant::EfficientKAN: return ch * cfg.spline_basis_count() + mixer;
    case ExpansionVariant::VanillaKAN: return ch * (cfg.spline_basis_count() + 1) + mixer;
    case ExpansionVariant::MLP:
      return static_cast<int64_t>(cfg.hidden) * d + cfg.hidden +
             static_cast<int64_t>(d) * cfg.hidden + d;
  }
  return 0;
}

// The drop-in feed-forward: phi per channel, then the mixing linear map.
template <typename T>
Tensor<T> kan_ffn(const ExpansionParams<T>& p, const Tensor<T>& x) {
  switch (p.variant) {
    case ExpansionVariant::SineKAN: return linear(p.mixer, phi_sine(p.sine, x));
    case ExpansionVariant::FourierKAN: return linear(p.mixer, phi_fourier(p.fourier, x));
    case ExpansionVariant::FastKAN: return linear(p.mixer, phi_rbf(p.rbf, x));
    case ExpansionVariant::VanillaKAN:
      return linear(p.mixer, phi_spline(p.spline, x, true, SplineEval::Local));
    case ExpansionVariant::EfficientKAN:
      return linear(p.mixer, phi_spline(p.spline, x, false, SplineEval::BatchedMatrix));
    case ExpansionVariant::MLP: return linear(p.mlp_out, gelu(linear(p.mlp_in, x)));
  }
  throw Error("kan_ffn: unknown variant");
}

// Parameter listing in a fixed traversal order (optimizer / checkpoints).
template <typename T>
void collect_expansion_params(const ExpansionParams<T>& p, const std::string& prefix,
                              std::vector<std::pair<std::string, Tensor<T>>>& out) {
  switch (p.variant) {
    case ExpansionVariant::SineKAN:
      out.push_back({prefix + ".alpha", p.sine.alpha});
      out.push_back({prefix + ".omega", p.sine.omega});
      out.push_back({prefix + ".phase", p.sine.phase});
      break;
    case ExpansionVariant::FourierKAN:
      out.push_back({prefix + ".a_sin", p.fourier.a_sin});
      out.push_back({prefix + ".a_cos", p.fourier.a_cos});
      break;
    case ExpansionVariant::FastKAN:
      out.push_back({prefix + ".centers", p.rbf.centers});
      out.push_back({prefix + ".log_widths", p.rbf.log_widths});
      out.push_back({prefix + ".weights", p.rbf.weights});
      break;
    case ExpansionVariant::VanillaKAN:
      out.push_back({prefix + ".coeff", p.spline.coeff});
      out.push_back({prefix + ".base_weight", p.spline.base_weight});
      break;
    case ExpansionVariant::EfficientKAN:
      out.push_back({prefix + ".coeff", p.spline.coeff});
      break;
    case ExpansionVariant::MLP:
      out.push_back({prefix + ".fc1.weight", p.mlp_in.weight});
      out.push_back({prefix + ".fc1.bias", p.mlp_in.bias});
      out.push_back({prefix + ".fc2.weight", p.mlp_out.weight});
      out.push_back({prefix + ".fc2.bias", p.mlp_out.bias});
      break;
  }
  if (p.variant != ExpansionVariant::MLP) {
    out.push_back({prefix + ".mixer.weight", p.mixer.weight});
    out.push_back({prefix + ".mixer.bias", p.mixer.bias});
  }
}

}  // namespace vikan
