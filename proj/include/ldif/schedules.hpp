#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "ldif/errors.hpp"

namespace ldif {

// Discrete-time noise schedule indexed t = 1..T (index 0 of the arrays is
// t = 1). alpha_bar[t] = prod_{s <= t} (1 - beta[s]).
class DiscreteSchedule {
 public:
  explicit DiscreteSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
    if (beta_.empty()) throw ConfigError("schedule needs at least one step");
    alpha_bar_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) {
        throw ConfigError("beta[" + std::to_string(i + 1) + "] outside (0, 1)");
      }
      prod *= 1.0 - beta_[i];
      alpha_bar_[i] = prod;
    }
  }

  std::size_t T() const noexcept { return beta_.size(); }
  double beta(std::size_t t) const { return beta_.at(checked(t) - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(checked(t) - 1); }
  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

 private:
  std::size_t checked(std::size_t t) const {
    if (t < 1 || t > beta_.size()) {
      throw Error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(beta_.size()) + "]");
    }
    return t;
  }

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// Cosine schedule: alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
// beta clipped to max_beta.
inline DiscreteSchedule cosine_schedule(std::size_t T, double s = 0.008, double max_beta = 0.999) {
  if (T == 0) throw ConfigError("cosine_schedule: T must be at least 1");
  if (!(s > 0.0)) throw ConfigError("cosine_schedule: offset s must be positive");
  auto f = [&](double t) {
    const double c = std::cos(((t / static_cast<double>(T) + s) / (1.0 + s)) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> beta(T);
  double prev = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double ab = f(static_cast<double>(t)) / f0;
    beta[t - 1] = std::min(1.0 - ab / prev, max_beta);
    prev = ab;
  }
  return DiscreteSchedule(std::move(beta));
}

// Noise levels for the probability-flow ODE, sigma[0] = sigma_max down to
// sigma[N-1] = sigma_min, with a final sigma[N] = 0.
struct SigmaGrid {
  std::size_t N = 0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  double rho = 1.0;
  std::vector<double> sigma;
};

inline SigmaGrid power_sigma_grid(std::size_t N, double sigma_min, double sigma_max, double rho) {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
    throw ConfigError("power_sigma_grid: need 0 < sigma_min < sigma_max");
  }
  if (!(rho >= 1.0)) throw ConfigError("power_sigma_grid: rho must be >= 1");
  if (N < 2) throw ConfigError("power_sigma_grid: N must be >= 2");
  SigmaGrid g{N, sigma_min, sigma_max, rho, std::vector<double>(N + 1, 0.0)};
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  for (std::size_t i = 0; i < N; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(N - 1);
    g.sigma[i] = std::pow(a + frac * (b - a), rho);
  }
  g.sigma[0] = sigma_max;
  g.sigma[N - 1] = sigma_min;
  return g;
}

}  // namespace ldif
