#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"
#include "ldif/numerics/rng.hpp"

namespace ldif {

// Basis placement t_i = 1 + (i - 1)(T - 1)/(m - 1): t_1 = 1, t_m = T, equal
// spacing. Requires (m - 1) | (T - 1).
inline std::vector<std::size_t> basis_timesteps(std::size_t m, std::size_t T) {
  if (m < 2) throw ConfigError("basis_timesteps: need at least 2 bases, got " + std::to_string(m));
  if (T < 2 || (T - 1) % (m - 1) != 0) {
    throw ConfigError("basis_timesteps: T - 1 = " + std::to_string(T >= 1 ? T - 1 : 0) +
                      " is not divisible by m - 1 = " + std::to_string(m - 1));
  }
  std::vector<std::size_t> t(m);
  const std::size_t step = (T - 1) / (m - 1);
  for (std::size_t i = 0; i < m; ++i) t[i] = 1 + i * step;
  return t;
}

// Linear-interpolation weights over the two bases bracketing t.
inline std::vector<double> interp_init_weights(std::size_t t, const std::vector<std::size_t>& basis_times) {
  const std::size_t m = basis_times.size();
  if (m == 0) throw ConfigError("interp_init_weights: no basis times");
  for (std::size_t i = 1; i < m; ++i) {
    if (basis_times[i] <= basis_times[i - 1]) throw ConfigError("interp_init_weights: basis times not increasing");
  }
  if (t < basis_times.front() || t > basis_times.back()) {
    throw Error("interp_init_weights: t = " + std::to_string(t) + " outside [" + std::to_string(basis_times.front()) +
                ", " + std::to_string(basis_times.back()) + "]");
  }
  std::vector<double> w(m, 0.0);
  if (t == basis_times.back()) {
    w[m - 1] = 1.0;
    return w;
  }
  std::size_t j = 0;
  while (!(basis_times[j] <= t && t < basis_times[j + 1])) ++j;
  const double span = static_cast<double>(basis_times[j + 1] - basis_times[j]);
  w[j] = static_cast<double>(basis_times[j + 1] - t) / span;
  w[j + 1] = static_cast<double>(t - basis_times[j]) / span;
  return w;
}

enum class TableInit { Interpolation, Random };

// Trainable T x m table of composition weights; row t - 1 holds omega(t).
template <class T>
class TimeWeightTable {
 public:
  TimeWeightTable() = default;
  TimeWeightTable(const Builder<T>& b, const std::string& name, std::size_t steps,
                  std::vector<std::size_t> basis_times, TableInit init = TableInit::Interpolation)
      : steps_(steps), basis_times_(std::move(basis_times)) {
    const std::size_t m = basis_times_.size();
    if (m == 0 || basis_times_.front() < 1 || basis_times_.back() > steps) {
      throw ConfigError(name + ": basis times must lie in [1, T]");
    }
    Tensor<T> omega({steps, m});
    if (init == TableInit::Interpolation) {
      for (std::size_t t = 1; t <= steps; ++t) {
        const auto w = interp_init_weights(t, basis_times_);
        for (std::size_t i = 0; i < m; ++i) omega.at(t - 1, i) = static_cast<T>(w[i]);
      }
    } else {
      auto rng = b.rng_for(name);
      omega = gaussian_sample<T>(rng, {steps, m}, T{0}, static_cast<T>(1.0 / std::sqrt(static_cast<double>(m))));
    }
    table_ = b.store.create(name, std::move(omega));
  }

  std::size_t steps() const noexcept { return steps_; }
  std::size_t bases() const noexcept { return basis_times_.size(); }
  const std::vector<std::size_t>& basis_times() const noexcept { return basis_times_; }
  const Var<T>& table() const { return table_; }

  // Rows for a batch of timesteps, differentiable w.r.t. the table.
  Var<T> weights(const std::vector<std::size_t>& t) const {
    std::vector<std::size_t> rows(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) rows[i] = checked_row(t[i]);
    return ops::gather_rows(table_, rows);
  }

 private:
  std::size_t checked_row(std::size_t t) const {
    if (t < 1 || t > steps_) {
      throw Error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
    }
    return t - 1;
  }

  std::size_t steps_ = 0;
  std::vector<std::size_t> basis_times_;
  Var<T> table_;
};

template <class T>
Var<T> time_lora_weights(const TimeWeightTable<T>& table, std::size_t t) {
  return table.weights({t});
}

}  // namespace ldif
