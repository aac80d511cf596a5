#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ldif/diffusion/eps_model.hpp"
#include "ldif/numerics/ops.hpp"
#include "ldif/numerics/rng.hpp"
#include "ldif/schedules.hpp"

namespace ldif {

// Clean images in [-1, 1] plus optional per-sample conditions.
template <class T>
struct TrainBatch {
  Tensor<T> x0;         // [B, C, H, W]
  Tensor<T> class_vec;  // [B, classes] or empty
  Tensor<T> aux;        // [B, K] or empty

  std::size_t size() const { return x0.empty() ? 0 : x0.dim(0); }
};

// ln sigma ~ N(mean, std^2) for continuous-setting training.
struct LogNormalSigma {
  double mean = std::log(0.5);
  double std = 1.2;

  double sample(SeededRng& rng) const { return std::exp(mean + std * rng.normal()); }
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one timestep per sample.
template <class T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, const std::vector<std::size_t>& t, const Tensor<T>& eps,
                          const DiscreteSchedule& sched) {
  if (x0.shape() != eps.shape()) throw ShapeError("forward_diffuse: noise shape differs from x0");
  if (x0.empty() || t.size() != x0.dim(0)) throw ShapeError("forward_diffuse: need one timestep per sample");
  const std::size_t per = x0.size() / x0.dim(0);
  Tensor<T> out(x0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double ab = sched.alpha_bar(t[b]);
    const T a = static_cast<T>(std::sqrt(ab)), s = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x0[i] + s * eps[i];
  }
  return out;
}

template <class T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const DiscreteSchedule& sched) {
  if (x0.empty()) throw ShapeError("forward_diffuse: empty input");
  return forward_diffuse(x0, std::vector<std::size_t>(x0.dim(0), t), eps, sched);
}

// x = x0 + sigma eps, one noise level per sample.
template <class T>
Tensor<T> add_noise(const Tensor<T>& x0, const std::vector<double>& sigma, const Tensor<T>& eps) {
  if (x0.shape() != eps.shape()) throw ShapeError("add_noise: noise shape differs from x0");
  if (x0.empty() || sigma.size() != x0.dim(0)) throw ShapeError("add_noise: need one noise level per sample");
  const std::size_t per = x0.size() / x0.dim(0);
  Tensor<T> out(x0.shape());
  for (std::size_t b = 0; b < sigma.size(); ++b) {
    const T s = static_cast<T>(sigma[b]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = x0[i] + s * eps[i];
  }
  return out;
}

namespace detail {

template <class T>
void check_batch(const TrainBatch<T>& batch) {
  if (batch.size() == 0) throw DataError("training_loss: empty batch");
}

template <class T>
Conditions<T> batch_conditions(const TrainBatch<T>& batch) {
  Conditions<T> c;
  c.class_vec = batch.class_vec;
  c.aux = batch.aux;
  return c;
}

}  // namespace detail

// Epsilon-MSE with t ~ U{1..T}.
template <class T>
Var<T> training_loss(const EpsModel<T>& model, const TrainBatch<T>& batch, const DiscreteSchedule& sched,
                     SeededRng& rng) {
  detail::check_batch(batch);
  Conditions<T> c = detail::batch_conditions(batch);
  for (std::size_t b = 0; b < batch.size(); ++b) c.t.push_back(rng.uniform_int(1, sched.T()));
  const Tensor<T> eps = gaussian_sample<T>(rng, batch.x0.shape(), T{0}, T{1});
  const Tensor<T> xt = forward_diffuse(batch.x0, c.t, eps, sched);
  return ops::mse(model.predict(constant(xt), c), eps);
}

// Epsilon-MSE with log-normal noise levels.
template <class T>
Var<T> training_loss(const EpsModel<T>& model, const TrainBatch<T>& batch, const LogNormalSigma& dist,
                     SeededRng& rng) {
  detail::check_batch(batch);
  Conditions<T> c = detail::batch_conditions(batch);
  for (std::size_t b = 0; b < batch.size(); ++b) c.sigma.push_back(dist.sample(rng));
  const Tensor<T> eps = gaussian_sample<T>(rng, batch.x0.shape(), T{0}, T{1});
  const Tensor<T> x = add_noise(batch.x0, c.sigma, eps);
  return ops::mse(model.predict(constant(x), c), eps);
}

}  // namespace ldif
