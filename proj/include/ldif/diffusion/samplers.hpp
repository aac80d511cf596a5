#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldif/diffusion/eps_model.hpp"
#include "ldif/numerics/rng.hpp"
#include "ldif/schedules.hpp"

namespace ldif {

enum class SamplerKind { Ancestral, Heun };

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "ancestral") return SamplerKind::Ancestral;
  if (s == "heun" || s == "heun_ode") return SamplerKind::Heun;
  throw ConfigError("unknown sampler '" + s + "' (ancestral | heun_ode)");
}

inline const char* to_string(SamplerKind k) { return k == SamplerKind::Ancestral ? "ancestral" : "heun_ode"; }

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Heun;
  std::size_t steps = 18;  // Heun grid size; ancestral always runs the full schedule
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  std::uint64_t seed = 0;
};

template <class T>
struct SampleResult {
  Tensor<T> images;
  std::size_t nfe = 0;
};

namespace detail {

// Rows [1, K] are repeated for every sample; [n, K] is taken as is.
template <class T>
Tensor<T> expand_rows(const Tensor<T>& v, std::size_t n, const char* what) {
  if (v.empty()) return v;
  if (v.rank() != 2 || (v.dim(0) != 1 && v.dim(0) != n)) {
    throw ShapeError(std::string(what) + " must have 1 or " + std::to_string(n) + " rows, got " +
                     shape_str(v.shape()));
  }
  if (v.dim(0) == n) return v;
  Tensor<T> out({n, v.dim(1)});
  for (std::size_t b = 0; b < n; ++b) std::copy_n(v.ptr(), v.dim(1), out.ptr() + b * v.dim(1));
  return out;
}

template <class T>
Conditions<T> expand_conditions(const Conditions<T>& tmpl, std::size_t n) {
  Conditions<T> c;
  c.class_vec = expand_rows(tmpl.class_vec, n, "class vector");
  c.aux = expand_rows(tmpl.aux, n, "auxiliary condition");
  if (tmpl.class_adapter_weights) c.class_adapter_weights = expand_rows(*tmpl.class_adapter_weights, n, "class weights");
  return c;
}

template <class T>
Tensor<T> eval_eps(const EpsModel<T>& model, const Tensor<T>& x, const Conditions<T>& c, std::size_t* nfe) {
  NoGradGuard ng;
  Tensor<T> out = model.predict(constant(x), c)->value;
  if (out.shape() != x.shape()) throw ShapeError("epsilon prediction shape differs from input");
  if (nfe) ++*nfe;
  return out;
}

}  // namespace detail

// One reverse step x_t -> x_{t-1}: mean (x_t + beta_t s) / sqrt(1 - beta_t)
// with s = -eps / sqrt(1 - abar_t), plus sqrt(beta_t) z for t >= 2.
// `c` carries the shared conditions; its timesteps are overwritten.
template <class T>
Tensor<T> ancestral_step(const EpsModel<T>& model, const Tensor<T>& x, std::size_t t, const DiscreteSchedule& sched,
                         SeededRng& rng, Conditions<T> c = {}, std::size_t* nfe = nullptr) {
  if (t < 1 || t > sched.T()) {
    throw Error("ancestral_step: timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.T()) + "]");
  }
  c.t.assign(x.dim(0), t);
  c.sigma.clear();
  const Tensor<T> eps = detail::eval_eps(model, x, c, nfe);
  const double beta = sched.beta(t);
  const T ks = static_cast<T>(beta * score_scale_discrete(sched, t));
  const T inv = static_cast<T>(1.0 / std::sqrt(1.0 - beta));
  const T noise = static_cast<T>(std::sqrt(beta));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (x[i] + ks * eps[i]) * inv;
    if (t > 1) out[i] += noise * static_cast<T>(rng.normal());
  }
  return out;
}

// x_T ~ N(0, (1 - abar_T) I), then t = T .. 1. NFE = T.
template <class T>
SampleResult<T> sample_ancestral(const EpsModel<T>& model, const DiscreteSchedule& sched, const Shape& sample_shape,
                                 SeededRng& rng, const Conditions<T>& tmpl = {}) {
  if (sample_shape.empty()) throw ShapeError("sample shape is empty");
  const Conditions<T> base = detail::expand_conditions(tmpl, sample_shape[0]);
  SampleResult<T> r;
  r.images = gaussian_sample<T>(rng, sample_shape, T{0}, static_cast<T>(std::sqrt(1.0 - sched.alpha_bar(sched.T()))));
  for (std::size_t t = sched.T(); t >= 1; --t) r.images = ancestral_step(model, r.images, t, sched, rng, base, &r.nfe);
  return r;
}

// Probability-flow ODE in sigma with dx/dsigma = d(x, sigma) = eps(x, sigma).
// Euler predictor, trapezoidal corrector unless sigma_next == 0.
template <class T>
Tensor<T> heun_step(const EpsModel<T>& model, const Tensor<T>& x, double sigma_cur, double sigma_next,
                    Conditions<T> c = {}, std::size_t* nfe = nullptr) {
  if (!(sigma_cur > sigma_next && sigma_next >= 0.0)) {
    throw Error("heun_step: need sigma_cur > sigma_next >= 0");
  }
  const std::size_t n = x.dim(0);
  c.t.clear();
  c.sigma.assign(n, sigma_cur);
  const Tensor<T> d1 = detail::eval_eps(model, x, c, nfe);
  const T h = static_cast<T>(sigma_next - sigma_cur);
  Tensor<T> xe(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) xe[i] = x[i] + h * d1[i];
  if (sigma_next == 0.0) return xe;
  c.sigma.assign(n, sigma_next);
  const Tensor<T> d2 = detail::eval_eps(model, xe, c, nfe);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + h * (T(0.5) * (d1[i] + d2[i]));
  return out;
}

// x ~ N(0, sigma[0]^2 I), then Heun steps along the grid. A grid of N
// positive levels plus the final 0 costs 2N - 1 evaluations.
template <class T>
SampleResult<T> sample_heun(const EpsModel<T>& model, const std::vector<double>& sigmas, const Shape& sample_shape,
                            SeededRng& rng, const Conditions<T>& tmpl = {}) {
  if (sigmas.size() < 2) throw ConfigError("sample_heun: need at least two noise levels");
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i) {
    if (!(sigmas[i] > sigmas[i + 1])) throw ConfigError("sample_heun: noise levels must strictly decrease");
  }
  if (!(sigmas.back() >= 0.0)) throw ConfigError("sample_heun: noise levels must be non-negative");
  if (sample_shape.empty()) throw ShapeError("sample shape is empty");
  const Conditions<T> base = detail::expand_conditions(tmpl, sample_shape[0]);
  SampleResult<T> r;
  r.images = gaussian_sample<T>(rng, sample_shape, T{0}, static_cast<T>(sigmas[0]));
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i) {
    r.images = heun_step(model, r.images, sigmas[i], sigmas[i + 1], base, &r.nfe);
  }
  return r;
}

template <class T>
SampleResult<T> sample_heun(const EpsModel<T>& model, const SigmaGrid& grid, const Shape& sample_shape, SeededRng& rng,
                            const Conditions<T>& tmpl = {}) {
  return sample_heun(model, grid.sigma, sample_shape, rng, tmpl);
}

// Dispatch on the configured sampler; the generator is seeded from cfg.seed.
// Ancestral sampling needs the discrete schedule.
template <class T>
SampleResult<T> sample(const EpsModel<T>& model, const SamplerConfig& cfg, const DiscreteSchedule* sched,
                       const Shape& sample_shape, const Conditions<T>& tmpl = {}) {
  SeededRng rng(cfg.seed, 0x73616d70);
  if (cfg.kind == SamplerKind::Ancestral) {
    if (model.setting() != Setting::Discrete || !sched) {
      throw ConfigError("ancestral sampling needs a discrete-time model and schedule");
    }
    return sample_ancestral(model, *sched, sample_shape, rng, tmpl);
  }
  if (model.setting() != Setting::Continuous) throw ConfigError("Heun sampling needs a continuous-setting model");
  return sample_heun(model, power_sigma_grid(cfg.steps, cfg.sigma_min, cfg.sigma_max, cfg.rho), sample_shape, rng,
                     tmpl);
}

// One batch per sweep value, every batch drawn from the same seed with the
// class vector fixed to vec_fn(value).
template <class T>
std::vector<Tensor<T>> class_sweep_sample(const EpsModel<T>& model, const SamplerConfig& cfg,
                                          const DiscreteSchedule* sched,
                                          const std::function<Tensor<T>(double)>& vec_fn,
                                          const std::vector<double>& values, const Shape& sample_shape,
                                          const Conditions<T>& tmpl = {}) {
  std::vector<Tensor<T>> strips;
  for (double v : values) {
    Conditions<T> c = tmpl;
    c.class_vec = vec_fn(v);
    strips.push_back(sample(model, cfg, sched, sample_shape, c).images);
  }
  return strips;
}

}  // namespace ldif
