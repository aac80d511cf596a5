#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/autograd.hpp"

namespace ldif {

// Exponential moving average of every parameter in a store:
// shadow <- decay * shadow + (1 - decay) * value.
template <class T>
class Ema {
 public:
  Ema() = default;
  Ema(const ParamStore<T>& store, double decay) : decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("EMA decay must lie in [0, 1)");
    for (const auto& p : store.params()) shadow_.push_back(p->value);
  }

  double decay() const noexcept { return decay_; }
  const std::vector<Tensor<T>>& values() const noexcept { return shadow_; }
  std::vector<Tensor<T>>& values() noexcept { return shadow_; }

  void update(const ParamStore<T>& store) {
    check(store);
    const T d = static_cast<T>(decay_), e = static_cast<T>(1.0 - decay_);
    for (std::size_t i = 0; i < shadow_.size(); ++i) {
      auto& s = shadow_[i];
      const auto& v = store.params()[i]->value;
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = d * s[j] + e * v[j];
    }
  }

  // Exchanges the live parameter values with the averages.
  void swap_into(ParamStore<T>& store) {
    check(store);
    for (std::size_t i = 0; i < shadow_.size(); ++i) std::swap(shadow_[i], store.params()[i]->value);
  }

 private:
  void check(const ParamStore<T>& store) const {
    if (store.params().size() != shadow_.size()) throw Error("EMA does not match the parameter store");
  }

  double decay_ = 0.999;
  std::vector<Tensor<T>> shadow_;
};

}  // namespace ldif
