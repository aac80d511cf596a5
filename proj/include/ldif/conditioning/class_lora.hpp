#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ldif/conditioning/lora.hpp"
#include "ldif/errors.hpp"
#include "ldif/numerics/tensor.hpp"

namespace ldif {

// One adapter per class. The composition weights are the class vector
// itself, so a one-hot c_i selects adapter i and any real vector (an
// interpolation a c_i + (1 - a) c_j, a scaled b c_i) mixes adapters linearly.
template <class T>
class ClassAdapterSet {
 public:
  ClassAdapterSet() = default;
  ClassAdapterSet(const Builder<T>& b, const std::string& name, std::size_t classes, std::size_t r, std::size_t din,
                  std::size_t dout)
      : bank_(b, name, classes, r, din, dout) {}

  std::size_t classes() const noexcept { return bank_.bases(); }
  const LoRABank<T>& bank() const noexcept { return bank_; }

 private:
  LoRABank<T> bank_;
};

// class_vec [C] or [batch, C] -> composition weights of the same shape.
template <class T>
Tensor<T> class_lora_weights(std::size_t classes, const Tensor<T>& class_vec) {
  const std::size_t len = class_vec.rank() == 0 ? 0 : class_vec.shape().back();
  if (len != classes) {
    throw ShapeError("class vector length " + std::to_string(len) + " != class count " + std::to_string(classes));
  }
  return class_vec;
}

// Explicit per-adapter weights, e.g. {{i, 0.5}, {j, 0.5}}, as a [1, C] row.
template <class T>
Tensor<T> adapter_weights(std::size_t classes, const std::vector<std::pair<std::size_t, T>>& terms) {
  Tensor<T> w({1, classes});
  for (const auto& [i, v] : terms) {
    if (i >= classes) throw Error("adapter index " + std::to_string(i) + " out of range");
    w[i] += v;
  }
  return w;
}

}  // namespace ldif
