#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "ldif/numerics/autograd.hpp"
#include "ldif/numerics/ops.hpp"
#include "ldif/numerics/rng.hpp"

namespace ldif {

// Where a module registers its parameters. Every tensor draws its initial
// values from a generator derived from (seed, parameter name), so the value of
// a parameter does not depend on which other modules were built before it.
template <class T>
struct Builder {
  ParamStore<T>& store;
  std::uint64_t seed = 0;

  SeededRng rng_for(const std::string& name) const { return SeededRng(seed).derive(name); }

  Var<T> uniform(const std::string& name, Shape shape, double bound) const {
    auto rng = rng_for(name);
    return store.create(name, uniform_sample<T>(rng, shape, static_cast<T>(-bound), static_cast<T>(bound)));
  }

  Var<T> normal(const std::string& name, Shape shape, double std) const {
    auto rng = rng_for(name);
    return store.create(name, gaussian_sample<T>(rng, shape, T{0}, static_cast<T>(std)));
  }

  Var<T> zeros(const std::string& name, Shape shape) const { return store.create(name, Tensor<T>(std::move(shape))); }

  Var<T> filled(const std::string& name, Shape shape, T value) const {
    return store.create(name, Tensor<T>(std::move(shape), value));
  }
};

// Fully connected layer on rows [N, din]. Default init is U(-1/sqrt(din), 1/sqrt(din))
// for weight and bias; `zero_init` starts both at zero.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const Builder<T>& b, const std::string& name, std::size_t din, std::size_t dout, bool bias = true,
         bool zero_init = false)
      : din_(din), dout_(dout) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(din));
    w_ = zero_init ? b.zeros(name + ".w", {dout, din}) : b.uniform(name + ".w", {dout, din}, bound);
    if (bias) b_ = zero_init ? b.zeros(name + ".b", {dout}) : b.uniform(name + ".b", {dout}, bound);
  }

  Var<T> operator()(const Var<T>& x) const { return ops::dense_rows(x, w_, b_); }

  // Same weights applied per position of a channel-major map [B, din, S].
  Var<T> channels(const Var<T>& x) const { return ops::dense_channels(x, w_, b_); }

  const Var<T>& weight() const { return w_; }
  const Var<T>& bias() const { return b_; }
  std::size_t in_features() const { return din_; }
  std::size_t out_features() const { return dout_; }

 private:
  std::size_t din_ = 0, dout_ = 0;
  Var<T> w_, b_;
};

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Builder<T>& b, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k = 3) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    w_ = b.uniform(name + ".w", {cout, cin, k, k}, bound);
    b_ = b.uniform(name + ".b", {cout}, bound);
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, w_, b_); }

 private:
  Var<T> w_, b_;
};

template <class T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const Builder<T>& b, const std::string& name, std::size_t groups, std::size_t channels,
            double eps = 1e-5)
      : groups_(groups), eps_(static_cast<T>(eps)) {
    if (groups == 0 || channels % groups != 0) {
      throw ConfigError(name + ": " + std::to_string(channels) + " channels not divisible into " +
                        std::to_string(groups) + " groups");
    }
    gamma_ = b.filled(name + ".gamma", {channels}, T{1});
    beta_ = b.zeros(name + ".beta", {channels});
  }

  Var<T> operator()(const Var<T>& x) const { return ops::group_norm(x, groups_, gamma_, beta_, eps_); }

 private:
  std::size_t groups_ = 1;
  T eps_{};
  Var<T> gamma_, beta_;
};

}  // namespace ldif
