#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>

#include "ldif/conditioning/embedder.hpp"
#include "ldif/network/model_config.hpp"
#include "ldif/network/unet.hpp"
#include "ldif/numerics/autograd.hpp"
#include "ldif/schedules.hpp"

namespace ldif {

// Anything that predicts the injected noise for a noisy batch. Discrete
// models read Conditions::t, continuous ones Conditions::sigma (x = x0 + sigma eps).
template <class T>
class EpsModel {
 public:
  virtual ~EpsModel() = default;
  virtual Setting setting() const = 0;
  virtual Var<T> predict(const Var<T>& x, const Conditions<T>& c) const = 0;
};

// Score recovered from an epsilon prediction.
inline double score_scale_discrete(const DiscreteSchedule& sched, std::size_t t) {
  return -1.0 / std::sqrt(1.0 - sched.alpha_bar(t));
}
inline double score_scale_continuous(double sigma) { return -1.0 / sigma; }

// The U-Net as an epsilon model. In the continuous setting the input is
// divided by sqrt(1 + sigma^2) so that its scale stays O(1) at every noise
// level (data of unit scale assumed).
template <class T>
class UNetEps final : public EpsModel<T> {
 public:
  explicit UNetEps(const NanoUNet<T>& net) : net_(net) {}

  Setting setting() const override { return net_.config().setting; }

  Var<T> predict(const Var<T>& x, const Conditions<T>& c) const override {
    if (setting() == Setting::Discrete) return net_(x, c);
    const std::size_t batch = x->shape()[0];
    if (c.sigma.size() != batch) throw Error("continuous model needs one noise level per sample");
    return net_(ops::mul(x, constant(input_scale(c.sigma, x->shape()))), c);
  }

  const NanoUNet<T>& net() const noexcept { return net_; }

 private:
  static Tensor<T> input_scale(const std::vector<double>& sigma, const Shape& shape) {
    Tensor<T> s(shape);
    const std::size_t per = s.size() / shape[0];
    for (std::size_t b = 0; b < shape[0]; ++b) {
      if (!(sigma[b] > 0.0)) throw Error("noise level must be positive");
      std::fill_n(s.ptr() + b * per, per, static_cast<T>(1.0 / std::sqrt(1.0 + sigma[b] * sigma[b])));
    }
    return s;
  }

  const NanoUNet<T>& net_;
};

// Exact epsilon for data x0 ~ N(0, s^2 I). The noisy marginal is
// N(0, v I) with v = abar s^2 + 1 - abar (discrete) or s^2 + sigma^2
// (continuous); the score is -x / v.
template <class T>
class GaussianOracle final : public EpsModel<T> {
 public:
  GaussianOracle(double data_std, const DiscreteSchedule& sched) : s2_(data_std * data_std), sched_(&sched) {}
  explicit GaussianOracle(double data_std) : s2_(data_std * data_std) {}

  Setting setting() const override { return sched_ ? Setting::Discrete : Setting::Continuous; }

  Var<T> predict(const Var<T>& x, const Conditions<T>& c) const override {
    const std::size_t batch = x->shape()[0];
    const std::size_t per = x->value.size() / batch;
    Tensor<T> out = x->value;
    for (std::size_t b = 0; b < batch; ++b) {
      double k;
      if (sched_) {
        const double ab = sched_->alpha_bar(c.t.at(b));
        k = std::sqrt(1.0 - ab) / (ab * s2_ + 1.0 - ab);
      } else {
        const double sg = c.sigma.at(b);
        k = sg / (s2_ + sg * sg);
      }
      for (std::size_t i = 0; i < per; ++i) out[b * per + i] *= static_cast<T>(k);
    }
    return constant(std::move(out));
  }

 private:
  double s2_;
  const DiscreteSchedule* sched_ = nullptr;
};

// Stub from a plain function of (x, conditions); used for zero/perfect
// predictors and analytic fields.
template <class T>
class FunctionEps final : public EpsModel<T> {
 public:
  using Fn = std::function<Tensor<T>(const Tensor<T>&, const Conditions<T>&)>;
  FunctionEps(Setting setting, Fn fn) : setting_(setting), fn_(std::move(fn)) {}

  Setting setting() const override { return setting_; }
  Var<T> predict(const Var<T>& x, const Conditions<T>& c) const override { return constant(fn_(x->value, c)); }

 private:
  Setting setting_;
  Fn fn_;
};

}  // namespace ldif
