#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/autograd.hpp"
#include "ldif/numerics/rng.hpp"

namespace ldif {

struct GradCheckOptions {
  double eps = 1e-4;
  // 0 checks every coordinate; otherwise a seeded random subset of this many
  // coordinates per parameter tensor.
  std::size_t coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of the scalar f against central finite
// differences (f(x+eps) - f(x-eps)) / (2 eps). The error per coordinate is
// |analytic - numeric| / max(1, |numeric|); the maximum is returned.
// f must be deterministic (re-seed any randomness inside it).
template <class T>
GradCheckResult grad_check(const std::function<Var<T>()>& f, const std::vector<Var<T>>& params,
                           const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0.0)) throw Error("grad_check: eps must be positive");
  for (const auto& p : params) {
    if (p->has_grad()) p->grad.fill(T{0});
  }
  Var<T> y = f();
  if (y->value.size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  if (!y->value.all_finite()) throw NumericError("grad_check: f is not finite");
  backward(y);
  y.reset();

  auto eval = [&]() {
    NoGradGuard ng;
    const T v = f()->value[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: f is not finite at a perturbed point");
    return static_cast<double>(v);
  };

  GradCheckResult res;
  SeededRng rng(opts.seed, 0x67636b);
  for (const auto& p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords;
    if (opts.coords_per_param == 0 || opts.coords_per_param >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t c = 0; c < opts.coords_per_param; ++c) coords.push_back(rng.uniform_int(0, n - 1));
    }
    for (std::size_t i : coords) {
      const double analytic = p->has_grad() ? static_cast<double>(p->grad[i]) : 0.0;
      const T x0 = p->value[i];
      p->value[i] = static_cast<T>(x0 + opts.eps);
      const double fp = eval();
      p->value[i] = static_cast<T>(x0 - opts.eps);
      const double fm = eval();
      p->value[i] = x0;
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++res.coords_checked;
      if (err >= res.max_error) {
        res.max_error = err;
        res.worst_param = p->name;
        res.worst_index = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace ldif
