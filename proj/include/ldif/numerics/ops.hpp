#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/autograd.hpp"
#include "ldif/numerics/gemm.hpp"
#include "ldif/numerics/tensor.hpp"
#include "ldif/numerics/vecmath.hpp"

// Differentiable operations over Var<T>. Feature maps are [B, C, spatial...]
// (channel-major per sample); dense "rows" inputs are [N, features].
namespace ldif::ops {

using kernels::gemm;
using kernels::gemm_indirect;
using kernels::gemm_indirect_t;
using kernels::Trans;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Product of the extents after the first two (1 when there are none).
inline std::size_t spatial_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

template <class T>
bool wants(const Var<T>& v) {
  return v && v->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a->shape() == b->shape(),
                  "add: shape mismatch " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a->shape() == b->shape(), "sub: shape mismatch");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  }, "sub");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require(a->shape() == b->shape(), "mul: shape mismatch");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  }, "mul");
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a->value;
  for (auto& v : out.data()) v *= c;
  return make_result<T>(std::move(out), {a}, [c](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  }, "scale");
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = a->value;
  for (auto& v : out.data()) v = c + v;
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }, "add_scalar");
}

template <class T>
Var<T> silu(const Var<T>& a) {
  const std::size_t n = a->value.size();
  Tensor<T> out(a->shape());
  const T* x = a->value.ptr();
  T* y = out.ptr();
  for (std::size_t i = 0; i < n; ++i) y[i] = -x[i];
  vecmath::exp(y, y, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] / (T{1} + y[i]);
  return make_result<T>(std::move(out), {a}, [n](Node<T>& self) {
    const T* x = self.inputs[0]->value.ptr();
    const T* y = self.value.ptr();
    T* g = self.inputs[0]->grad_buffer().ptr();
    std::vector<T> e(n);
    for (std::size_t i = 0; i < n; ++i) e[i] = -x[i];
    vecmath::exp(e.data(), e.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      const T s = T{1} / (T{1} + e[i]);
      g[i] += self.grad[i] * (s + y[i] * (T{1} - s));
    }
  }, "silu");
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a->value.reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }, "reshape");
}

// Columns [begin, end) of a rank-2 tensor.
template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  detail::require(a->value.rank() == 2 && begin < end && end <= a->shape()[1], "slice_cols: bad range");
  const std::size_t rows = a->shape()[0], cols = a->shape()[1], w = end - begin;
  Tensor<T> out({rows, w});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a->value[i * cols + begin + j];
  }
  return make_result<T>(std::move(out), {a}, [rows, cols, begin, w](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * cols + begin + j] += self.grad[i * w + j];
    }
  }, "slice_cols");
}

// Concatenates [B, C1, ...] and [B, C2, ...] along the channel axis.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a->shape();
  const auto& sb = b->shape();
  detail::require(sa.size() >= 2 && sa.size() == sb.size() && sa[0] == sb[0] &&
                      detail::spatial_size(sa) == detail::spatial_size(sb),
                  "concat_channels: incompatible shapes");
  const std::size_t B = sa[0], ca = sa[1], cb = sb[1], S = detail::spatial_size(sa);
  Shape so = sa;
  so[1] = ca + cb;
  Tensor<T> out(so);
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(a->value.ptr() + n * ca * S, ca * S, out.ptr() + n * (ca + cb) * S);
    std::copy_n(b->value.ptr() + n * cb * S, cb * S, out.ptr() + n * (ca + cb) * S + ca * S);
  }
  return make_result<T>(std::move(out), {a, b}, [B, ca, cb, S](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t i = 0; i < ca * S; ++i) g[n * ca * S + i] += self.grad[n * (ca + cb) * S + i];
      }
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t i = 0; i < cb * S; ++i) g[n * cb * S + i] += self.grad[n * (ca + cb) * S + ca * S + i];
      }
    }
  }, "concat_channels");
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a->value.data()) s += v;
  return make_result<T>(Tensor<T>({1}, s), {a}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g.data()) v += self.grad[0];
  }, "sum");
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a->value.size()));
}

// Mean of squared differences against a constant target.
template <class T>
Var<T> mse(const Var<T>& pred, const Tensor<T>& target) {
  detail::require(pred->shape() == target.shape(), "mse: shape mismatch");
  const std::size_t n = target.size();
  T s{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred->value[i] - target[i];
    s += d * d;
  }
  auto tgt = std::make_shared<Tensor<T>>(target);
  return make_result<T>(Tensor<T>({1}, s / static_cast<T>(n)), {pred}, [tgt, n](Node<T>& self) {
    const auto& p = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    const T c = T{2} * self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += c * (p[i] - (*tgt)[i]);
  }, "mse");
}

// ---------------------------------------------------------------------------
// Dense algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.rank() == 2 && b->value.rank() == 2 && a->shape()[1] == b->shape()[0],
                  "matmul: inner dimensions differ " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  const std::size_t p = a->shape()[0], q = a->shape()[1], s = b->shape()[1];
  Tensor<T> out({p, s});
  gemm(Trans::No, Trans::No, p, s, q, a->value.ptr(), q, b->value.ptr(), s, out.ptr(), s);
  return make_result<T>(std::move(out), {a, b}, [p, q, s](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      gemm(Trans::No, Trans::Yes, p, q, s, self.grad.ptr(), s, bv.ptr(), s, self.inputs[0]->grad_buffer().ptr(), q,
           true);
    }
    if (self.inputs[1]->requires_grad) {
      gemm(Trans::Yes, Trans::No, q, s, p, av.ptr(), q, self.grad.ptr(), s, self.inputs[1]->grad_buffer().ptr(), s,
           true);
    }
  }, "matmul");
}

// Softmax over the last axis.
template <class T>
Var<T> softmax(const Var<T>& a) {
  const std::size_t n = a->shape().back();
  const std::size_t rows = a->value.size() / n;
  Tensor<T> out = a->value;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * n;
    const T mx = *std::max_element(row, row + n);
    for (std::size_t j = 0; j < n; ++j) row[j] -= mx;
    vecmath::exp(row, row, n);
    const T z = vecmath::sum(row, n);
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  }
  return make_result<T>(std::move(out), {a}, [rows, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = self.value.ptr() + r * n;
      const T* dy = self.grad.ptr() + r * n;
      const T dot = vecmath::dot(p, dy, n);
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += p[j] * (dy[j] - dot);
    }
  }, "softmax");
}

// y = x W^T + b for x [N, din], W [dout, din], b [dout] (optional).
template <class T>
Var<T> dense_rows(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require(x->value.rank() == 2 && w->value.rank() == 2 && x->shape()[1] == w->shape()[1],
                  "dense_rows: input " + shape_str(x->shape()) + " vs weight " + shape_str(w->shape()));
  const std::size_t N = x->shape()[0], din = x->shape()[1], dout = w->shape()[0];
  if (b) detail::require(b->value.size() == dout, "dense_rows: bias length");
  Tensor<T> out({N, dout});
  gemm(Trans::No, Trans::Yes, N, dout, din, x->value.ptr(), din, w->value.ptr(), din, out.ptr(), dout);
  if (b) {
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t o = 0; o < dout; ++o) out[i * dout + o] += b->value[o];
    }
  }
  return make_result<T>(std::move(out), {x, w, b}, [N, din, dout](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      gemm(Trans::No, Trans::No, N, din, dout, self.grad.ptr(), dout, wv.ptr(), din,
           self.inputs[0]->grad_buffer().ptr(), din, true);
    }
    if (self.inputs[1]->requires_grad) {
      gemm(Trans::Yes, Trans::No, dout, din, N, self.grad.ptr(), dout, xv.ptr(), din,
           self.inputs[1]->grad_buffer().ptr(), din, true);
    }
    if (detail::wants(self.inputs[2])) {
      auto& gb = self.inputs[2]->grad_buffer();
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t o = 0; o < dout; ++o) gb[o] += self.grad[i * dout + o];
      }
    }
  }, "dense_rows");
}

// Per-sample channel map y_b = W x_b + b for x [B, din, S...]; a 1x1 conv.
template <class T>
Var<T> dense_channels(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x->shape();
  detail::require(xs.size() >= 2 && w->value.rank() == 2 && xs[1] == w->shape()[1],
                  "dense_channels: input " + shape_str(xs) + " vs weight " + shape_str(w->shape()));
  const std::size_t B = xs[0], din = xs[1], dout = w->shape()[0], S = detail::spatial_size(xs);
  if (b) detail::require(b->value.size() == dout, "dense_channels: bias length");
  Shape so = xs;
  so[1] = dout;
  Tensor<T> out(so);
  for (std::size_t n = 0; n < B; ++n) {
    T* y = out.ptr() + n * dout * S;
    gemm(Trans::No, Trans::No, dout, S, din, w->value.ptr(), din, x->value.ptr() + n * din * S, S, y, S);
    if (b) {
      for (std::size_t o = 0; o < dout; ++o) {
        for (std::size_t s = 0; s < S; ++s) y[o * S + s] += b->value[o];
      }
    }
  }
  return make_result<T>(std::move(out), {x, w, b}, [B, din, dout, S](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    for (std::size_t n = 0; n < B; ++n) {
      const T* dy = self.grad.ptr() + n * dout * S;
      if (self.inputs[0]->requires_grad) {
        gemm(Trans::Yes, Trans::No, din, S, dout, wv.ptr(), din, dy, S,
             self.inputs[0]->grad_buffer().ptr() + n * din * S, S, true);
      }
      if (self.inputs[1]->requires_grad) {
        gemm(Trans::No, Trans::Yes, dout, din, S, dy, S, xv.ptr() + n * din * S, S,
             self.inputs[1]->grad_buffer().ptr(), din, true);
      }
      if (detail::wants(self.inputs[2])) {
        auto& gb = self.inputs[2]->grad_buffer();
        for (std::size_t o = 0; o < dout; ++o) {
          gb[o] += vecmath::sum(dy + o * S, S);
        }
      }
    }
  }, "dense_channels");
}

// ---------------------------------------------------------------------------
// Convolution and resampling

namespace detail {

// Zero-padded copy of one image [C, H, W] laid out as C planes of
// (H + 2p) x (W + 2p) values plus 2p slack, so that every shifted window
// row of a same-padded convolution is a contiguous run.
template <class T>
struct PaddedImage {
  std::size_t C, H, W, p, Wp, plane;
  std::vector<T> data;

  PaddedImage(std::size_t c, std::size_t h, std::size_t w, std::size_t pad)
      : C(c), H(h), W(w), p(pad), Wp(w + 2 * pad), plane((h + 2 * pad) * (w + 2 * pad) + 2 * pad),
        data(c * plane, T{0}) {}

  void load(const T* x) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) std::copy_n(x + (c * H + y) * W, W, data.data() + c * plane + (y + p) * Wp + p);
    }
  }

  // Row (c, ky, kx) of the implicit im2col matrix, H * Wp entries wide.
  void window_rows(std::size_t k, std::vector<const T*>& rows) const {
    rows.resize(C * k * k);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) rows[(c * k + ky) * k + kx] = data.data() + c * plane + ky * Wp + kx;
      }
    }
  }
};

}  // namespace detail

// Same-padded, stride-1 convolution: x [B, Ci, H, W], w [Co, Ci, k, k], b [Co].
// Implemented as an indirect GEMM over a padded copy of each image; outputs
// are produced W + 2p wide per row and the padding columns dropped.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x->shape();
  const auto& ws = w->shape();
  detail::require(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3] && ws[2] % 2 == 1,
                  "conv2d: input " + shape_str(xs) + " vs kernel " + shape_str(ws));
  const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3], Co = ws[0], k = ws[2];
  const std::size_t K = Ci * k * k, HW = H * W, p = k / 2, Wp = W + 2 * p, N = H * Wp;
  if (b) detail::require(b->value.size() == Co, "conv2d: bias length");
  Tensor<T> out({B, Co, H, W});
  detail::PaddedImage<T> img(Ci, H, W, p);
  std::vector<const T*> rows;
  img.window_rows(k, rows);
  std::vector<T> wide(Co * N);
  for (std::size_t n = 0; n < B; ++n) {
    img.load(x->value.ptr() + n * Ci * HW);
    gemm_indirect(Co, N, K, w->value.ptr(), K, rows.data(), wide.data(), N);
    T* y = out.ptr() + n * Co * HW;
    for (std::size_t o = 0; o < Co; ++o) {
      const T bias = b ? b->value[o] : T{0};
      for (std::size_t r = 0; r < H; ++r) {
        const T* src = wide.data() + o * N + r * Wp;
        T* dst = y + o * HW + r * W;
        for (std::size_t c = 0; c < W; ++c) dst[c] = src[c] + bias;
      }
    }
  }
  return make_result<T>(std::move(out), {x, w, b}, [B, Ci, H, W, Co, k, K, HW, p, Wp, N](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    const bool gx = self.inputs[0]->requires_grad;
    const bool gw = self.inputs[1]->requires_grad;
    // dy in the W + 2p wide layout with zero padding columns.
    std::vector<T> dyw(Co * N, T{0});
    detail::PaddedImage<T> img(Ci, H, W, p);
    std::vector<const T*> xrows;
    img.window_rows(k, xrows);
    // The input gradient is a same-padded convolution of dy with the
    // spatially flipped, channel-transposed kernel wf [Ci, Co, k, k].
    const std::size_t Kf = Co * k * k;
    std::vector<T> wf(gx ? Ci * Kf : 0), dxw(gx ? Ci * N : 0);
    detail::PaddedImage<T> dimg(gx ? Co : 0, H, W, p);
    std::vector<const T*> dyrows;
    if (gx) {
      dimg.window_rows(k, dyrows);
      for (std::size_t o = 0; o < Co; ++o) {
        for (std::size_t i = 0; i < Ci; ++i) {
          for (std::size_t t = 0; t < k * k; ++t) wf[(i * Co + o) * k * k + (k * k - 1 - t)] = wv[(o * Ci + i) * k * k + t];
        }
      }
    }
    for (std::size_t n = 0; n < B; ++n) {
      const T* dy = self.grad.ptr() + n * Co * HW;
      if (gw) {
        for (std::size_t o = 0; o < Co; ++o) {
          for (std::size_t r = 0; r < H; ++r) std::copy_n(dy + o * HW + r * W, W, dyw.data() + o * N + r * Wp);
        }
        img.load(xv.ptr() + n * Ci * HW);
        gemm_indirect_t(Co, K, N, dyw.data(), N, xrows.data(), self.inputs[1]->grad_buffer().ptr(), K, true);
      }
      if (gx) {
        dimg.load(dy);
        gemm_indirect(Ci, N, Kf, wf.data(), Kf, dyrows.data(), dxw.data(), N);
        T* g = self.inputs[0]->grad_buffer().ptr() + n * Ci * HW;
        for (std::size_t i = 0; i < Ci; ++i) {
          for (std::size_t r = 0; r < H; ++r) {
            const T* src = dxw.data() + i * N + r * Wp;
            T* dst = g + i * HW + r * W;
            for (std::size_t c = 0; c < W; ++c) dst[c] += src[c];
          }
        }
      }
      if (detail::wants(self.inputs[2])) {
        auto& gb = self.inputs[2]->grad_buffer();
        for (std::size_t o = 0; o < Co; ++o) gb[o] += vecmath::sum(dy + o * HW, HW);
      }
    }
  }, "conv2d");
}

// 2x2 average pooling, [B, C, H, W] -> [B, C, H/2, W/2]; H and W even.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  const auto& s = x->shape();
  detail::require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2: needs even spatial extents");
  const std::size_t BC = s[0] * s[1], H = s[2], W = s[3], h = H / 2, w = W / 2;
  Tensor<T> out({s[0], s[1], h, w});
  for (std::size_t p = 0; p < BC; ++p) {
    const T* src = x->value.ptr() + p * H * W;
    T* dst = out.ptr() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const T* q = src + 2 * y * W + 2 * xx;
        dst[y * w + xx] = T(0.25) * (q[0] + q[1] + q[W] + q[W + 1]);
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [BC, H, W, h, w](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < BC; ++p) {
      T* dst = g.ptr() + p * H * W;
      const T* dy = self.grad.ptr() + p * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T v = T(0.25) * dy[y * w + xx];
          T* q = dst + 2 * y * W + 2 * xx;
          q[0] += v;
          q[1] += v;
          q[W] += v;
          q[W + 1] += v;
        }
      }
    }
  }, "avg_pool2");
}

// Nearest-neighbour 2x upsampling.
template <class T>
Var<T> upsample2(const Var<T>& x) {
  const auto& s = x->shape();
  detail::require(s.size() == 4, "upsample2: needs [B, C, H, W]");
  const std::size_t BC = s[0] * s[1], h = s[2], w = s[3], H = 2 * h, W = 2 * w;
  Tensor<T> out({s[0], s[1], H, W});
  for (std::size_t p = 0; p < BC; ++p) {
    const T* src = x->value.ptr() + p * h * w;
    T* dst = out.ptr() + p * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) dst[y * W + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_result<T>(std::move(out), {x}, [BC, H, W, h, w](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < BC; ++p) {
      T* dst = g.ptr() + p * h * w;
      const T* dy = self.grad.ptr() + p * H * W;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) dst[(y / 2) * w + xx / 2] += dy[y * W + xx];
      }
    }
  }, "upsample2");
}

// ---------------------------------------------------------------------------
// Normalization

// Group normalization over x [B, C, S...] with per-channel affine gamma/beta
// (either may be null for a plain normalization).
template <class T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const auto& xs = x->shape();
  detail::require(xs.size() >= 2 && groups >= 1 && xs[1] % groups == 0,
                  "group_norm: channels " + std::to_string(xs.size() >= 2 ? xs[1] : 0) + " not divisible by " +
                      std::to_string(groups));
  const std::size_t B = xs[0], C = xs[1], S = detail::spatial_size(xs), cpg = C / groups, n = cpg * S;
  if (gamma) detail::require(gamma->value.size() == C, "group_norm: gamma length");
  if (beta) detail::require(beta->value.size() == C, "group_norm: beta length");
  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto rstd = std::make_shared<std::vector<T>>(B * groups);
  Tensor<T> out(xs);
  for (std::size_t bg = 0; bg < B * groups; ++bg) {
    const T* src = x->value.ptr() + bg * n;
    const T mu = vecmath::sum(src, n) / static_cast<T>(n);
    const T var = vecmath::sum_sq_dev(src, n, mu) / static_cast<T>(n);
    const T r = T{1} / std::sqrt(var + eps);
    (*rstd)[bg] = r;
    T* xh = xhat->ptr() + bg * n;
    T* y = out.ptr() + bg * n;
    const std::size_t c0 = (bg % groups) * cpg;
    for (std::size_t c = 0; c < cpg; ++c) {
      const T gm = gamma ? gamma->value[c0 + c] : T{1};
      const T bt = beta ? beta->value[c0 + c] : T{0};
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = c * S + s;
        xh[i] = (src[i] - mu) * r;
        y[i] = gamma || beta ? xh[i] * gm + bt : xh[i];
      }
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [B, C, S, groups, cpg, n, xhat, rstd](Node<T>& self) {
    const Var<T>& gamma = self.inputs[1];
    const Var<T>& beta = self.inputs[2];
    std::vector<T> dxh(n);
    for (std::size_t bg = 0; bg < B * groups; ++bg) {
      const std::size_t c0 = (bg % groups) * cpg;
      const T* xh = xhat->ptr() + bg * n;
      const T* dy = self.grad.ptr() + bg * n;
      for (std::size_t c = 0; c < cpg; ++c) {
        const T gm = gamma ? gamma->value[c0 + c] : T{1};
        for (std::size_t s = 0; s < S; ++s) dxh[c * S + s] = dy[c * S + s] * gm;
        const T dg = vecmath::dot(dy + c * S, xh + c * S, S);
        const T db = vecmath::sum(dy + c * S, S);
        if (detail::wants(gamma)) gamma->grad_buffer()[c0 + c] += dg;
        if (detail::wants(beta)) beta->grad_buffer()[c0 + c] += db;
      }
      if (!self.inputs[0]->requires_grad) continue;
      const T m1 = vecmath::sum(dxh.data(), n) / static_cast<T>(n);
      const T m2 = vecmath::dot(dxh.data(), xh, n) / static_cast<T>(n);
      const T r = (*rstd)[bg];
      T* g = self.inputs[0]->grad_buffer().ptr() + bg * n;
      for (std::size_t i = 0; i < n; ++i) g[i] += r * (dxh[i] - m1 - xh[i] * m2);
    }
    (void)C;
  }, "group_norm");
}

// Layer normalization across channels at every position of x [B, C, S...];
// no affine parameters.
template <class T>
Var<T> layer_norm_channels(const Var<T>& x, T eps = T(1e-5)) {
  const auto& xs = x->shape();
  detail::require(xs.size() >= 2, "layer_norm_channels: needs [B, C, ...]");
  const std::size_t B = xs[0], C = xs[1], S = detail::spatial_size(xs);
  auto rstd = std::make_shared<std::vector<T>>(B * S);
  Tensor<T> out(xs);
  std::vector<T> mu(S), var(S);
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = x->value.ptr() + b * C * S;
    T* y = out.ptr() + b * C * S;
    std::fill(mu.begin(), mu.end(), T{0});
    std::fill(var.begin(), var.end(), T{0});
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < S; ++s) mu[s] += src[c * S + s];
    }
    for (std::size_t s = 0; s < S; ++s) mu[s] /= static_cast<T>(C);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < S; ++s) {
        const T d = src[c * S + s] - mu[s];
        var[s] += d * d;
      }
    }
    for (std::size_t s = 0; s < S; ++s) (*rstd)[b * S + s] = T{1} / std::sqrt(var[s] / static_cast<T>(C) + eps);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < S; ++s) y[c * S + s] = (src[c * S + s] - mu[s]) * (*rstd)[b * S + s];
    }
  }
  return make_result<T>(std::move(out), {x}, [B, C, S, rstd](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    std::vector<T> m1(S), m2(S);
    for (std::size_t b = 0; b < B; ++b) {
      const T* xh = self.value.ptr() + b * C * S;
      const T* dy = self.grad.ptr() + b * C * S;
      std::fill(m1.begin(), m1.end(), T{0});
      std::fill(m2.begin(), m2.end(), T{0});
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t s = 0; s < S; ++s) {
          m1[s] += dy[c * S + s];
          m2[s] += dy[c * S + s] * xh[c * S + s];
        }
      }
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t i = c * S + s;
          g[b * C * S + i] += (*rstd)[b * S + s] *
                              (dy[i] - m1[s] / static_cast<T>(C) - xh[i] * m2[s] / static_cast<T>(C));
        }
      }
    }
  }, "layer_norm_channels");
}

// Feature-wise modulation gamma * h + beta with gamma, beta [B, C] broadcast
// over the spatial extent of h [B, C, S...].
template <class T>
Var<T> modulate(const Var<T>& h, const Var<T>& gamma, const Var<T>& beta) {
  const auto& hs = h->shape();
  detail::require(hs.size() >= 2 && gamma->value.rank() == 2 && gamma->shape()[0] == hs[0] &&
                      gamma->shape()[1] == hs[1] && beta->shape() == gamma->shape(),
                  "modulate: feature map " + shape_str(hs) + " vs modulation " + shape_str(gamma->shape()));
  const std::size_t BC = hs[0] * hs[1], S = detail::spatial_size(hs);
  Tensor<T> out(hs);
  for (std::size_t p = 0; p < BC; ++p) {
    const T gm = gamma->value[p], bt = beta->value[p];
    for (std::size_t s = 0; s < S; ++s) out[p * S + s] = gm * h->value[p * S + s] + bt;
  }
  return make_result<T>(std::move(out), {h, gamma, beta}, [BC, S](Node<T>& self) {
    const auto& hv = self.inputs[0]->value;
    const auto& gv = self.inputs[1]->value;
    for (std::size_t p = 0; p < BC; ++p) {
      const T dg = vecmath::dot(self.grad.ptr() + p * S, hv.ptr() + p * S, S);
      const T db = vecmath::sum(self.grad.ptr() + p * S, S);
      if (self.inputs[0]->requires_grad) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t s = 0; s < S; ++s) g[p * S + s] += gv[p] * self.grad[p * S + s];
      }
      if (self.inputs[1]->requires_grad) self.inputs[1]->grad_buffer()[p] += dg;
      if (self.inputs[2]->requires_grad) self.inputs[2]->grad_buffer()[p] += db;
    }
  }, "modulate");
}

// ---------------------------------------------------------------------------
// Attention and low-rank adaptation

// Multi-head scaled dot-product self-attention on channel-major q, k, v
// [B, d, S]; head h owns channels [h*d/H, (h+1)*d/H).
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads) {
  const auto& qs = q->shape();
  detail::require(qs.size() == 3 && k->shape() == qs && v->shape() == qs, "attention: q/k/v must share [B, d, S]");
  detail::require(heads >= 1 && qs[1] % heads == 0, "attention: channels not divisible by heads");
  const std::size_t B = qs[0], d = qs[1], S = qs[2], dh = d / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<Tensor<T>>(Shape{B, heads, S, S});
  Tensor<T> out(qs);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = (b * d + h * dh) * S;
      T* P = probs->ptr() + (b * heads + h) * S * S;
      gemm(Trans::Yes, Trans::No, S, S, dh, q->value.ptr() + off, S, k->value.ptr() + off, S, P, S);
      for (std::size_t i = 0; i < S; ++i) {
        T* row = P + i * S;
        T mx = row[0] * sc;
        for (std::size_t j = 0; j < S; ++j) mx = std::max(mx, row[j] * sc);
        for (std::size_t j = 0; j < S; ++j) row[j] = row[j] * sc - mx;
        vecmath::exp(row, row, S);
        const T z = vecmath::sum(row, S);
        for (std::size_t j = 0; j < S; ++j) row[j] /= z;
      }
      gemm(Trans::No, Trans::Yes, dh, S, S, v->value.ptr() + off, S, P, S, out.ptr() + off, S);
    }
  }
  return make_result<T>(std::move(out), {q, k, v}, [B, d, S, heads, dh, sc, probs](Node<T>& self) {
    const auto& qv = self.inputs[0]->value;
    const auto& kv = self.inputs[1]->value;
    const auto& vv = self.inputs[2]->value;
    std::vector<T> dP(S * S);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = (b * d + h * dh) * S;
        const T* P = probs->ptr() + (b * heads + h) * S * S;
        const T* dO = self.grad.ptr() + off;
        if (self.inputs[2]->requires_grad) {
          gemm(Trans::No, Trans::No, dh, S, S, dO, S, P, S, self.inputs[2]->grad_buffer().ptr() + off, S, true);
        }
        gemm(Trans::Yes, Trans::No, S, S, dh, dO, S, vv.ptr() + off, S, dP.data(), S);
        for (std::size_t i = 0; i < S; ++i) {
          const T dot = vecmath::dot(dP.data() + i * S, P + i * S, S);
          for (std::size_t j = 0; j < S; ++j) dP[i * S + j] = sc * P[i * S + j] * (dP[i * S + j] - dot);
        }
        if (self.inputs[0]->requires_grad) {
          gemm(Trans::No, Trans::Yes, dh, S, S, kv.ptr() + off, S, dP.data(), S,
               self.inputs[0]->grad_buffer().ptr() + off, S, true);
        }
        if (self.inputs[1]->requires_grad) {
          gemm(Trans::No, Trans::No, dh, S, S, qv.ptr() + off, S, dP.data(), S,
               self.inputs[1]->grad_buffer().ptr() + off, S, true);
        }
      }
    }
  }, "attention");
}

// Low-rank update sum_i omega[b, i] * B_i (A_i x_b) for channel-major
// x [B, din, S], stacked A [m, r, din], B [m, dout, r] and per-sample weights
// omega [B, m]. The product A_i x_b is formed first; no dense dout x din
// matrix is materialized.
template <class T>
Var<T> lora_delta(const Var<T>& x, const Var<T>& a, const Var<T>& bmat, const Var<T>& omega) {
  const auto& xs = x->shape();
  detail::require(xs.size() == 3, "lora_delta: x must be [B, din, S]");
  detail::require(a->value.rank() == 3 && bmat->value.rank() == 3 && a->shape()[0] == bmat->shape()[0] &&
                      a->shape()[1] == bmat->shape()[2] && a->shape()[2] == xs[1],
                  "lora_delta: bank shapes " + shape_str(a->shape()) + " / " + shape_str(bmat->shape()) +
                      " do not fit input " + shape_str(xs));
  const std::size_t Bn = xs[0], din = xs[1], S = xs[2];
  const std::size_t m = a->shape()[0], r = a->shape()[1], dout = bmat->shape()[1], mr = m * r;
  detail::require(omega->value.rank() == 2 && omega->shape()[0] == Bn && omega->shape()[1] == m,
                  "lora_delta: omega must be [B, m], got " + shape_str(omega->shape()));
  // Pack B_i side by side: packed[o, i*r + j] = B[i, o, j].
  auto packed = std::make_shared<std::vector<T>>(dout * mr);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t o = 0; o < dout; ++o) {
      for (std::size_t j = 0; j < r; ++j) (*packed)[o * mr + i * r + j] = bmat->value[(i * dout + o) * r + j];
    }
  }
  auto u = std::make_shared<Tensor<T>>(Shape{Bn, mr, S});
  Tensor<T> out({Bn, dout, S});
  std::vector<T> us(mr * S);
  for (std::size_t b = 0; b < Bn; ++b) {
    T* ub = u->ptr() + b * mr * S;
    gemm(Trans::No, Trans::No, mr, S, din, a->value.ptr(), din, x->value.ptr() + b * din * S, S, ub, S);
    for (std::size_t i = 0; i < m; ++i) {
      const T w = omega->value[b * m + i];
      for (std::size_t t = i * r * S; t < (i + 1) * r * S; ++t) us[t] = w * ub[t];
    }
    gemm(Trans::No, Trans::No, dout, S, mr, packed->data(), mr, us.data(), S, out.ptr() + b * dout * S, S);
  }
  return make_result<T>(std::move(out), {x, a, bmat, omega}, [Bn, din, S, m, r, dout, mr, packed, u](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& av = self.inputs[1]->value;
    const auto& wv = self.inputs[3]->value;
    const bool gx = self.inputs[0]->requires_grad, ga = self.inputs[1]->requires_grad;
    const bool gb = self.inputs[2]->requires_grad, gw = self.inputs[3]->requires_grad;
    std::vector<T> us(mr * S), dus(mr * S);
    std::vector<T> dpacked(gb ? dout * mr : 0, T{0});
    for (std::size_t b = 0; b < Bn; ++b) {
      const T* ub = u->ptr() + b * mr * S;
      const T* dy = self.grad.ptr() + b * dout * S;
      gemm(Trans::Yes, Trans::No, mr, S, dout, packed->data(), mr, dy, S, dus.data(), S);
      if (gb) {
        for (std::size_t i = 0; i < m; ++i) {
          const T w = wv[b * m + i];
          for (std::size_t t = i * r * S; t < (i + 1) * r * S; ++t) us[t] = w * ub[t];
        }
        gemm(Trans::No, Trans::Yes, dout, mr, S, dy, S, us.data(), S, dpacked.data(), mr, true);
      }
      if (gw) {
        auto& gomega = self.inputs[3]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          gomega[b * m + i] += vecmath::dot(dus.data() + i * r * S, ub + i * r * S, r * S);
        }
      }
      if (ga || gx) {
        for (std::size_t i = 0; i < m; ++i) {
          const T w = wv[b * m + i];
          for (std::size_t t = i * r * S; t < (i + 1) * r * S; ++t) dus[t] *= w;
        }
        if (ga) {
          gemm(Trans::No, Trans::Yes, mr, din, S, dus.data(), S, xv.ptr() + b * din * S, S,
               self.inputs[1]->grad_buffer().ptr(), din, true);
        }
        if (gx) {
          gemm(Trans::Yes, Trans::No, din, S, mr, av.ptr(), din, dus.data(), S,
               self.inputs[0]->grad_buffer().ptr() + b * din * S, S, true);
        }
      }
    }
    if (gb) {
      auto& g = self.inputs[2]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t o = 0; o < dout; ++o) {
          for (std::size_t j = 0; j < r; ++j) g[(i * dout + o) * r + j] += dpacked[o * mr + i * r + j];
        }
      }
    }
  }, "lora_delta");
}

// Non-compositional variant: sample b uses only adapter idx[b],
// B_idx (A_idx x_b), with no weighting.
template <class T>
Var<T> lora_delta_selected(const Var<T>& x, const Var<T>& a, const Var<T>& bmat, const std::vector<std::size_t>& idx) {
  const auto& xs = x->shape();
  detail::require(xs.size() == 3 && a->value.rank() == 3 && bmat->value.rank() == 3 &&
                      a->shape()[0] == bmat->shape()[0] && a->shape()[1] == bmat->shape()[2] && a->shape()[2] == xs[1],
                  "lora_delta_selected: bank does not fit input " + shape_str(xs));
  const std::size_t Bn = xs[0], din = xs[1], S = xs[2];
  const std::size_t m = a->shape()[0], r = a->shape()[1], dout = bmat->shape()[1];
  detail::require(idx.size() == Bn, "lora_delta_selected: one adapter index per sample");
  for (std::size_t i : idx) {
    if (i >= m) throw Error("lora_delta_selected: adapter index " + std::to_string(i) + " out of range");
  }
  auto u = std::make_shared<Tensor<T>>(Shape{Bn, r, S});
  Tensor<T> out({Bn, dout, S});
  for (std::size_t b = 0; b < Bn; ++b) {
    const T* ai = a->value.ptr() + idx[b] * r * din;
    const T* bi = bmat->value.ptr() + idx[b] * dout * r;
    T* ub = u->ptr() + b * r * S;
    gemm(Trans::No, Trans::No, r, S, din, ai, din, x->value.ptr() + b * din * S, S, ub, S);
    gemm(Trans::No, Trans::No, dout, S, r, bi, r, ub, S, out.ptr() + b * dout * S, S);
  }
  return make_result<T>(std::move(out), {x, a, bmat}, [Bn, din, S, r, dout, idx, u](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& av = self.inputs[1]->value;
    const auto& bv = self.inputs[2]->value;
    std::vector<T> du(r * S);
    for (std::size_t b = 0; b < Bn; ++b) {
      const T* ai = av.ptr() + idx[b] * r * din;
      const T* bi = bv.ptr() + idx[b] * dout * r;
      const T* ub = u->ptr() + b * r * S;
      const T* dy = self.grad.ptr() + b * dout * S;
      if (self.inputs[2]->requires_grad) {
        gemm(Trans::No, Trans::Yes, dout, r, S, dy, S, ub, S,
             self.inputs[2]->grad_buffer().ptr() + idx[b] * dout * r, r, true);
      }
      gemm(Trans::Yes, Trans::No, r, S, dout, bi, r, dy, S, du.data(), S);
      if (self.inputs[1]->requires_grad) {
        gemm(Trans::No, Trans::Yes, r, din, S, du.data(), S, xv.ptr() + b * din * S, S,
             self.inputs[1]->grad_buffer().ptr() + idx[b] * r * din, din, true);
      }
      if (self.inputs[0]->requires_grad) {
        gemm(Trans::Yes, Trans::No, din, S, r, ai, din, du.data(), S,
             self.inputs[0]->grad_buffer().ptr() + b * din * S, S, true);
      }
    }
  }, "lora_delta_selected");
}

// Rows of table [N, m] picked by index (embedding lookup).
template <class T>
Var<T> gather_rows(const Var<T>& table, const std::vector<std::size_t>& idx) {
  detail::require(table->value.rank() == 2, "gather_rows: table must be rank 2");
  const std::size_t N = table->shape()[0], m = table->shape()[1];
  Tensor<T> out({idx.size(), m});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= N) throw Error("gather_rows: index " + std::to_string(idx[b]) + " out of range");
    std::copy_n(table->value.ptr() + idx[b] * m, m, out.ptr() + b * m);
  }
  return make_result<T>(std::move(out), {table}, [idx, m](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t j = 0; j < m; ++j) g[idx[b] * m + j] += self.grad[b * m + j];
    }
  }, "gather_rows");
}

}  // namespace ldif::ops
