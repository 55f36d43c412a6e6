#pragma once

// Uniform B-spline bases via the Cox-de Boor recursion. The knot vector is a
// uniform grid over [lo, hi] extended by `degree` knots on each side, so the
// bases form a partition of unity inside [lo, hi] and decay to zero outside
// the extension without clamping.
//
// Two evaluation routes are provided on purpose: a local nonzero-support
// route (de Boor's triangular scheme) and a full sweep across all knot
// spans. They compute the same family and cross-check each other.

#include <cmath>
#include <vector>

#include "vikan/tensor.hpp"

namespace vikan {

struct BsplineGrid {
  int degree = 3;
  int points = 6;  // knot points across [lo, hi]
  double lo = -2.0;
  double hi = 2.0;
  double h = 0.8;              // spacing
  std::vector<double> knots;   // points + 2*degree values, strictly increasing

  int basis_count() const { return points + degree - 1; }
  int num_knots() const { return static_cast<int>(knots.size()); }
};

inline BsplineGrid make_bspline_grid(int points, int degree, double lo, double hi) {
  check(degree >= 0, "spline degree must be non-negative");
  check(points >= degree + 1, "need at least degree+1 knot points for a valid basis");
  check(lo < hi, "grid range must satisfy lo < hi");
  BsplineGrid g;
  g.degree = degree;
  g.points = points;
  g.lo = lo;
  g.hi = hi;
  g.h = (hi - lo) / (points - 1);
  int total = points + 2 * degree;
  g.knots.resize(total);
  for (int i = 0; i < total; ++i) g.knots[i] = lo + (i - degree) * g.h;
  return g;
}

// All basis_count() values at x by sweeping the recursion from degree 0.
// Handles any x; values are zero outside the extended knot range.
// `work` must hold at least num_knots()-1 entries.
template <typename T>
void bspline_basis_sweep(const BsplineGrid& g, T x, T* out, T* work) {
  const int nk = g.num_knots();
  const auto& t = g.knots;
  for (int i = 0; i < nk - 1; ++i)
    work[i] = (x >= static_cast<T>(t[i]) && x < static_cast<T>(t[i + 1])) ? T(1) : T(0);
  for (int k = 1; k <= g.degree; ++k) {
    for (int i = 0; i < nk - 1 - k; ++i) {
      T left = (x - static_cast<T>(t[i])) / static_cast<T>(t[i + k] - t[i]);
      T right = (static_cast<T>(t[i + k + 1]) - x) / static_cast<T>(t[i + k + 1] - t[i + 1]);
      work[i] = left * work[i] + right * work[i + 1];
    }
  }
  for (int b = 0; b < g.basis_count(); ++b) out[b] = work[b];
}

template <typename T>
std::vector<T> bspline_basis(const BsplineGrid& g, T x) {
  std::vector<T> out(static_cast<size_t>(g.basis_count()));
  std::vector<T> work(static_cast<size_t>(g.num_knots() - 1));
  bspline_basis_sweep(g, x, out.data(), work.data());
  return out;
}

// Values and x-derivatives of all bases. Derivatives come from the standard
// difference of degree-1 lower bases. `work` as in bspline_basis_sweep.
template <typename T>
void bspline_basis_deriv_sweep(const BsplineGrid& g, T x, T* val, T* deriv, T* work) {
  const int nk = g.num_knots();
  const int p = g.degree;
  const auto& t = g.knots;
  const int nb = g.basis_count();
  if (p == 0) {
    bspline_basis_sweep(g, x, val, work);
    for (int b = 0; b < nb; ++b) deriv[b] = T(0);
    return;
  }
  for (int i = 0; i < nk - 1; ++i)
    work[i] = (x >= static_cast<T>(t[i]) && x < static_cast<T>(t[i + 1])) ? T(1) : T(0);
  for (int k = 1; k <= p - 1; ++k)
    for (int i = 0; i < nk - 1 - k; ++i) {
      T left = (x - static_cast<T>(t[i])) / static_cast<T>(t[i + k] - t[i]);
      T right = (static_cast<T>(t[i + k + 1]) - x) / static_cast<T>(t[i + k + 1] - t[i + 1]);
      work[i] = left * work[i] + right * work[i + 1];
    }
  // work now holds the degree-(p-1) bases; combine before overwriting.
  for (int b = 0; b < nb; ++b) {
    T lower_l = work[b] / static_cast<T>(t[b + p] - t[b]);
    T lower_r = work[b + 1] / static_cast<T>(t[b + p + 1] - t[b + 1]);
    deriv[b] = static_cast<T>(p) * (lower_l - lower_r);
  }
  for (int i = 0; i < nk - 1 - p; ++i) {
    T left = (x - static_cast<T>(t[i])) / static_cast<T>(t[i + p] - t[i]);
    T right = (static_cast<T>(t[i + p + 1]) - x) / static_cast<T>(t[i + p + 1] - t[i + 1]);
    work[i] = left * work[i] + right * work[i + 1];
  }
  for (int b = 0; b < nb; ++b) val[b] = work[b];
}

// Local evaluation: only the degree+1 bases covering x are nonzero.
// Returns the first nonzero global basis index, or -1 when x lies in the
// extension cells or outside the knots (callers fall back to the sweep).
// vals/derivs must hold degree+1 entries.
template <typename T>
int bspline_local(const BsplineGrid& g, T x, T* vals, T* derivs) {
  const int p = g.degree;
  const auto& t = g.knots;
  if (!(x >= static_cast<T>(g.lo) && x < static_cast<T>(g.hi))) return -1;
  int cell = p + static_cast<int>((static_cast<double>(x) - g.lo) / g.h);
  cell = std::min(cell, p + g.points - 2);  // x just below hi can round up
  if (!(x >= static_cast<T>(t[cell]) && x < static_cast<T>(t[cell + 1]))) {
    // rounding at a knot: nudge the cell
    if (x < static_cast<T>(t[cell]) && cell > p) --cell;
    else if (x >= static_cast<T>(t[cell + 1]) && cell < p + g.points - 2) ++cell;
  }

  // de Boor triangular scheme (NURBS-book basisfuns)
  T left[16], right[16], n_lower[16];
  vals[0] = T(1);
  for (int j = 1; j <= p; ++j) {
    if (j == p) {
      for (int r = 0; r < p; ++r) n_lower[r] = vals[r];  // degree p-1 values
    }
    left[j] = x - static_cast<T>(t[cell + 1 - j]);
    right[j] = static_cast<T>(t[cell + j]) - x;
    T saved = T(0);
    for (int r = 0; r < j; ++r) {
      T tmp = vals[r] / (right[r + 1] + left[j - r]);
      vals[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    vals[j] = saved;
  }

  const int first = cell - p;
  if (derivs) {
    if (p == 0) {
      derivs[0] = T(0);
    } else {
      // B'_{first+r} from the degree-(p-1) locals (global first+1 .. first+p)
      for (int r = 0; r <= p; ++r) {
        T a = (r >= 1) ? n_lower[r - 1] / static_cast<T>(t[first + r + p] - t[first + r]) : T(0);
        T b = (r <= p - 1)
                  ? n_lower[r] / static_cast<T>(t[first + r + p + 1] - t[first + r + 1])
                  : T(0);
        derivs[r] = static_cast<T>(p) * (a - b);
      }
    }
  }
  return first;
}

}  // namespace vikan
