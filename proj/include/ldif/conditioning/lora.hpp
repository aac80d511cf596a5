#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "ldif/errors.hpp"
#include "ldif/numerics/gemm.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"

namespace ldif {

// m rank-r adapter pairs attached to one dout x din dense layer.
// A is stacked [m, r, din] and drawn N(0, 1/r); B is stacked [m, dout, r] and
// starts at zero, so the bank contributes nothing until B is trained.
template <class T>
class LoRABank {
 public:
  LoRABank() = default;
  LoRABank(const Builder<T>& b, const std::string& name, std::size_t m, std::size_t r, std::size_t din,
           std::size_t dout)
      : m_(m), r_(r), din_(din), dout_(dout) {
    if (r == 0) throw ConfigError(name + ": LoRA rank must be >= 1");
    if (m == 0) return;
    a_ = b.normal(name + ".A", {m, r, din}, 1.0 / std::sqrt(static_cast<double>(r)));
    b_ = b.zeros(name + ".B", {m, dout, r});
  }

  std::size_t bases() const noexcept { return m_; }
  std::size_t rank() const noexcept { return r_; }
  std::size_t in_features() const noexcept { return din_; }
  std::size_t out_features() const noexcept { return dout_; }
  bool empty() const noexcept { return m_ == 0; }
  std::size_t param_count() const noexcept { return m_ * r_ * (din_ + dout_); }

  const Var<T>& A() const { return a_; }
  const Var<T>& B() const { return b_; }

  // Weighted composition for channel-major x [batch, din, S], omega [batch, m].
  Var<T> delta(const Var<T>& x, const Var<T>& omega) const { return ops::lora_delta(x, a_, b_, omega); }

  // One adapter per sample (non-compositional form).
  Var<T> delta_selected(const Var<T>& x, const std::vector<std::size_t>& idx) const {
    return ops::lora_delta_selected(x, a_, b_, idx);
  }

 private:
  std::size_t m_ = 0, r_ = 0, din_ = 0, dout_ = 0;
  Var<T> a_, b_;
};

// Single-vector evaluation W x + sum_i omega[i] B_i (A_i x), low-rank first.
template <class T>
Tensor<T> lora_forward(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& A, const Tensor<T>& B,
                       const Tensor<T>& omega) {
  if (W.rank() != 2 || x.rank() != 1 || W.dim(1) != x.dim(0)) {
    throw ShapeError("lora_forward: W " + shape_str(W.shape()) + " does not accept x " + shape_str(x.shape()));
  }
  const std::size_t dout = W.dim(0), din = W.dim(1);
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) || A.dim(1) != B.dim(2) || A.dim(2) != din ||
      B.dim(1) != dout) {
    throw ShapeError("lora_forward: bank shapes " + shape_str(A.shape()) + " / " + shape_str(B.shape()) +
                     " do not fit W " + shape_str(W.shape()));
  }
  const std::size_t m = A.dim(0), r = A.dim(1);
  if (omega.rank() != 1 || omega.dim(0) != m) {
    throw ShapeError("lora_forward: omega length " + std::to_string(omega.size()) + " != bases " + std::to_string(m));
  }
  using kernels::gemm;
  using kernels::Trans;
  Tensor<T> y({dout});
  gemm(Trans::No, Trans::No, dout, 1, din, W.ptr(), din, x.ptr(), 1, y.ptr(), 1);
  Tensor<T> u({r});
  Tensor<T> d({dout});
  for (std::size_t i = 0; i < m; ++i) {
    gemm(Trans::No, Trans::No, r, 1, din, A.ptr() + i * r * din, din, x.ptr(), 1, u.ptr(), 1);
    gemm(Trans::No, Trans::No, dout, 1, r, B.ptr() + i * dout * r, r, u.ptr(), 1, d.ptr(), 1);
    for (std::size_t o = 0; o < dout; ++o) y[o] += omega[i] * d[o];
  }
  return y;
}

}  // namespace ldif
