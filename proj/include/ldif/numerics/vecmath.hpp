#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <type_traits>

namespace ldif::vecmath {

template <class T>
struct Simd {
  using Vec [[gnu::vector_size(64)]] = T;
  using Int [[gnu::vector_size(64)]] = std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>;
  static constexpr std::size_t width = 64 / sizeof(T);
};

// exp on one vector: x = k ln2 + r with |r| <= ln2/2, exp(r) by a Taylor
// polynomial (degree 13 for double, 7 for float), scaled by 2^k through the
// exponent bits. Relative error is a few ulp; inputs are clamped to the
// finite range.
template <class T>
inline typename Simd<T>::Vec exp_vec(typename Simd<T>::Vec x) {
  static_assert(std::is_floating_point_v<T>);
  using Vec = typename Simd<T>::Vec;
  using Int = typename Simd<T>::Int;
  constexpr bool dbl = sizeof(T) == 8;
  const Vec lo = Vec{} + (dbl ? T(-708.0) : T(-87.0));
  const Vec hi = Vec{} + (dbl ? T(709.0) : T(88.0));
  x = x < lo ? lo : x;
  x = x > hi ? hi : x;
  constexpr T log2e = T(1.4426950408889634);
  constexpr T ln2_hi = dbl ? T(6.93147180369123816490e-01) : T(0.693359375);
  constexpr T ln2_lo = dbl ? T(1.90821492927058770002e-10) : T(-2.12194440e-4);
  constexpr T shifter = dbl ? T(6755399441055744.0) : T(12582912.0);  // 1.5 * 2^52, 1.5 * 2^23
  const Vec kf = (x * log2e + shifter) - shifter;
  const Vec r = (x - kf * ln2_hi) - kf * ln2_lo;
  Vec p;
  if constexpr (dbl) {
    p = Vec{} + T(1.0 / 6227020800.0);
    p = p * r + T(1.0 / 479001600.0);
    p = p * r + T(1.0 / 39916800.0);
    p = p * r + T(1.0 / 3628800.0);
    p = p * r + T(1.0 / 362880.0);
    p = p * r + T(1.0 / 40320.0);
    p = p * r + T(1.0 / 5040.0);
    p = p * r + T(1.0 / 720.0);
    p = p * r + T(1.0 / 120.0);
    p = p * r + T(1.0 / 24.0);
    p = p * r + T(1.0 / 6.0);
    p = p * r + T(0.5);
    p = p * r + T(1.0);
    p = p * r + T(1.0);
  } else {
    p = Vec{} + T(1.0 / 5040.0);
    p = p * r + T(1.0 / 720.0);
    p = p * r + T(1.0 / 120.0);
    p = p * r + T(1.0 / 24.0);
    p = p * r + T(1.0 / 6.0);
    p = p * r + T(0.5);
    p = p * r + T(1.0);
    p = p * r + T(1.0);
  }
  const Int k = __builtin_convertvector(kf, Int);
  const Int bits = (k + (dbl ? 1023 : 127)) << (dbl ? 52 : 23);
  Vec scale;
  __builtin_memcpy(&scale, &bits, sizeof(Vec));
  return p * scale;
}

// y[i] = exp(x[i]); x and y may alias. The tail goes through the same vector
// code, so every element is computed identically.
template <class T>
inline void exp(const T* x, T* y, std::size_t n) {
  using Vec = typename Simd<T>::Vec;
  constexpr std::size_t W = Simd<T>::width;
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    Vec v;
    __builtin_memcpy(&v, x + i, sizeof(Vec));
    v = exp_vec<T>(v);
    __builtin_memcpy(y + i, &v, sizeof(Vec));
  }
  if (i < n) {
    Vec v{};
    __builtin_memcpy(&v, x + i, (n - i) * sizeof(T));
    v = exp_vec<T>(v);
    __builtin_memcpy(y + i, &v, (n - i) * sizeof(T));
  }
}

template <class T>
inline T exp(T x) {
  T y;
  exp(&x, &y, 1);
  return y;
}

inline constexpr std::size_t lanes = 8;

// Sum with `lanes` interleaved partial accumulators combined in a fixed
// order; deterministic and free of the serial add dependency.
template <class T>
inline T sum(const T* p, std::size_t n) {
  T acc[lanes] = {};
  std::size_t i = 0;
  for (; i + lanes <= n; i += lanes) {
    for (std::size_t l = 0; l < lanes; ++l) acc[l] += p[i + l];
  }
  for (; i < n; ++i) acc[i % lanes] += p[i];
  T s{0};
  for (std::size_t l = 0; l < lanes; ++l) s += acc[l];
  return s;
}

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[lanes] = {};
  std::size_t i = 0;
  for (; i + lanes <= n; i += lanes) {
    for (std::size_t l = 0; l < lanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) acc[i % lanes] += a[i] * b[i];
  T s{0};
  for (std::size_t l = 0; l < lanes; ++l) s += acc[l];
  return s;
}

// Sum of (p[i] - mu)^2.
template <class T>
inline T sum_sq_dev(const T* p, std::size_t n, T mu) {
  T acc[lanes] = {};
  std::size_t i = 0;
  for (; i + lanes <= n; i += lanes) {
    for (std::size_t l = 0; l < lanes; ++l) {
      const T d = p[i + l] - mu;
      acc[l] += d * d;
    }
  }
  for (; i < n; ++i) acc[i % lanes] += (p[i] - mu) * (p[i] - mu);
  T s{0};
  for (std::size_t l = 0; l < lanes; ++l) s += acc[l];
  return s;
}

}  // namespace ldif::vecmath
