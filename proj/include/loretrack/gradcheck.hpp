#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "loretrack/tensor.hpp"

namespace loretrack {

// Central-difference gradient oracle.
//
// `f` maps `x` (a requires_grad leaf, modified in place during probing) to a
// scalar. The analytic gradient comes from backward(); the numeric one from
// (f(x+eps·e_i) − f(x−eps·e_i)) / 2eps. Returns the maximum over probed
// coordinates of |analytic − numeric| / max(1e-12, |numeric|).
//
// `coords` restricts probing to the listed flat indices; empty means all.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                Tensor& x, double eps,
                                const std::vector<std::size_t>& coords = {}) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  x.zero_grad();
  {
    Tensor loss = f(x);
    backward(loss);
  }
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad())
    std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  x.zero_grad();

  std::vector<std::size_t> probe = coords;
  if (probe.empty()) {
    probe.resize(x.numel());
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
  }
  auto xd = x.data();
  double worst = 0.0;
  for (std::size_t i : probe) {
    const double saved = xd[i];
    xd[i] = saved + eps;
    const double fp = f(x).item();
    xd[i] = saved - eps;
    const double fm = f(x).item();
    xd[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1e-12, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace loretrack
