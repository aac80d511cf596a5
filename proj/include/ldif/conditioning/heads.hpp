#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "ldif/errors.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"

namespace ldif {

// SiLU(v) -> Linear(emb -> 2C), zero-initialized; gamma = 1 + first half,
// beta = second half. At init gamma = 1 and beta = 0 exactly.
template <class T>
class ModulationHead {
 public:
  ModulationHead() = default;
  ModulationHead(const Builder<T>& b, const std::string& name, std::size_t emb_dim, std::size_t channels)
      : channels_(channels), proj_(b, name, emb_dim, 2 * channels, true, true) {}

  std::size_t channels() const noexcept { return channels_; }

  std::pair<Var<T>, Var<T>> operator()(const Var<T>& v) const {
    Var<T> out = proj_(ops::silu(v));
    return {ops::add_scalar(ops::slice_cols(out, 0, channels_), T{1}), ops::slice_cols(out, channels_, 2 * channels_)};
  }

 private:
  std::size_t channels_ = 0;
  Linear<T> proj_;
};

// Scale-and-shift on a convolutional feature map.
template <class T>
using ScaleShiftHead = ModulationHead<T>;

// Modulation of the layer-normalized attention input.
template <class T>
using AdaLNHead = ModulationHead<T>;

template <class T>
void check_channels(const Var<T>& h, std::size_t channels, const char* what) {
  if (h->value.rank() < 2 || h->shape()[1] != channels) {
    throw ShapeError(std::string(what) + ": feature map " + shape_str(h->shape()) + " does not have " +
                     std::to_string(channels) + " channels");
  }
}

// gamma(v) * h + beta(v), broadcast over spatial positions.
template <class T>
Var<T> scale_shift_apply(const Var<T>& h, const ScaleShiftHead<T>& head, const Var<T>& v) {
  check_channels(h, head.channels(), "scale_shift_apply");
  auto [gamma, beta] = head(v);
  return ops::modulate(h, gamma, beta);
}

// Layer norm over channels at each position, then gamma(v) * h_hat + beta(v).
template <class T>
Var<T> adaln_apply(const Var<T>& h, const AdaLNHead<T>& head, const Var<T>& v) {
  check_channels(h, head.channels(), "adaln_apply");
  auto [gamma, beta] = head(v);
  return ops::modulate(ops::layer_norm_channels(h), gamma, beta);
}

}  // namespace ldif
