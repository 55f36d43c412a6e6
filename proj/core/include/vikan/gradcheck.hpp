#pragma once

// Finite-difference gradient verification. F64 only: central differences at
// h=1e-5 lose too much precision in F32 to be meaningful.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "vikan/tensor.hpp"

namespace vikan {

// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
// NaN anywhere propagates into the result and fails any threshold test.
inline double grad_check(const std::function<TensorD(const TensorD&)>& f, TensorD x,
                         double h = 1e-5) {
  x.set_requires_grad(true);
  x.zero_grad();
  TensorD loss = f(x);
  check(loss.numel() == 1, "grad_check: f must return a scalar");
  loss.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<double> base(x.data().begin(), x.data().end());
  double worst = 0.0;
  NoGradGuard ng;
  for (size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + h;
    double fp = f(TensorD::from_data(x.shape(), probe)).item();
    probe[i] = base[i] - h;
    double fm = f(TensorD::from_data(x.shape(), probe)).item();
    double numeric = (fp - fm) / (2.0 * h);
    double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    double err = std::abs(analytic[i] - numeric) / denom;
    if (std::isnan(err) || std::isnan(worst))
      worst = std::numeric_limits<double>::quiet_NaN();
    else
      worst = std::max(worst, err);
  }
  return worst;
}

// Checks d loss / d p for every tensor in `params` against central differences.
// `f` must rebuild the graph from the current parameter values on every call.
inline double grad_check_params(const std::function<TensorD()>& f,
                                std::vector<TensorD> params, double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  TensorD loss = f();
  check(loss.numel() == 1, "grad_check_params: f must return a scalar");
  loss.backward();

  double worst = 0.0;
  NoGradGuard ng;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      double saved = data[i];
      data[i] = saved + h;
      double fp = f().item();
      data[i] = saved - h;
      double fm = f().item();
      data[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      double err = std::abs(analytic[i] - numeric) / denom;
      if (std::isnan(err) || std::isnan(worst))
        worst = std::numeric_limits<double>::quiet_NaN();
      else
        worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace vikan
