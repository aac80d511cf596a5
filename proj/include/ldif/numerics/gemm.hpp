#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace ldif::kernels {

// C[M x N] = (accumulate ? C : 0) + op(A) * op(B), all row-major with explicit
// leading dimensions. Every output element sums its K products in ascending k
// order starting from zero, so results are bitwise reproducible and equal to a
// plain triple loop evaluated in the same order.
enum class Trans { No, Yes };

namespace detail {

template <class T>
struct Tile {
  using Vec [[gnu::vector_size(64)]] = T;
  static constexpr std::size_t VL = 64 / sizeof(T);
  static constexpr std::size_t MR = 6;
  static constexpr std::size_t NR = 2 * VL;
};

template <class T>
inline std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[3];
  return buffers[slot];
}

// Row k of a K x N operand: base + k * ld.
template <class T>
struct StridedRows {
  const T* base;
  std::size_t ld;
  const T* operator[](std::size_t k) const { return base + k * ld; }
};

// Row k of a K x N operand given by pointer (indirect GEMM).
template <class T>
struct PointerRows {
  const T* const* rows;
  const T* operator[](std::size_t k) const { return rows[k]; }
};

// MRows x NR register tile over the whole K extent; row k of the B panel
// starts at b[k] + j0. Only the first nr columns are stored. Every row count
// shares the same per-element arithmetic, so edge tiles round exactly like
// full ones.
template <class T, std::size_t MRows, class Rows>
inline void micro_kernel(std::size_t nr, std::size_t K, const T* a, std::size_t lda, Rows b, std::size_t j0, T* c,
                         std::size_t ldc, bool accumulate) {
  using Tl = Tile<T>;
  using Vec = typename Tl::Vec;
  constexpr std::size_t VL = Tl::VL;
  Vec acc[MRows][2] = {};
  for (std::size_t k = 0; k < K; ++k) {
    const T* bk = b[k] + j0;
    Vec b0, b1;
    __builtin_memcpy(&b0, bk, sizeof(Vec));
    __builtin_memcpy(&b1, bk + VL, sizeof(Vec));
#pragma GCC unroll 6
    for (std::size_t r = 0; r < MRows; ++r) {
      const T v = a[r * lda + k];
      acc[r][0] += v * b0;
      acc[r][1] += v * b1;
    }
  }
  for (std::size_t r = 0; r < MRows; ++r) {
    T* crow = c + r * ldc;
    if (nr == Tl::NR) {
      for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t j = 0; j < VL; ++j) {
          if (accumulate) {
            crow[h * VL + j] += acc[r][h][j];
          } else {
            crow[h * VL + j] = acc[r][h][j];
          }
        }
      }
    } else {
      for (std::size_t j = 0; j < nr; ++j) {
        const T x = acc[r][j / VL][j % VL];
        if (accumulate) {
          crow[j] += x;
        } else {
          crow[j] = x;
        }
      }
    }
  }
}

template <class T, class Rows>
inline void tile_dispatch(std::size_t mr, std::size_t nr, std::size_t K, const T* a, std::size_t lda, Rows b,
                          std::size_t j0, T* c, std::size_t ldc, bool accumulate) {
  switch (mr) {
    case 6: micro_kernel<T, 6>(nr, K, a, lda, b, j0, c, ldc, accumulate); break;
    case 5: micro_kernel<T, 5>(nr, K, a, lda, b, j0, c, ldc, accumulate); break;
    case 4: micro_kernel<T, 4>(nr, K, a, lda, b, j0, c, ldc, accumulate); break;
    case 3: micro_kernel<T, 3>(nr, K, a, lda, b, j0, c, ldc, accumulate); break;
    case 2: micro_kernel<T, 2>(nr, K, a, lda, b, j0, c, ldc, accumulate); break;
    default: micro_kernel<T, 1>(nr, K, a, lda, b, j0, c, ldc, accumulate); break;
  }
}

template <class T>
void clear_or_keep(std::size_t M, std::size_t N, T* C, std::size_t ldc, bool accumulate) {
  if (accumulate) return;
  for (std::size_t i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, T{0});
}

// op(B) rows are given by `rows` (K rows of at least N entries). Full-width
// panels are read in place; the ragged last panel is copied, zero-padded.
template <class T, class Rows>
void gemm_rows(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, Rows rows, T* C,
               std::size_t ldc, bool accumulate) {
  constexpr std::size_t MR = Tile<T>::MR;
  constexpr std::size_t NR = Tile<T>::NR;
  if (M == 0 || N == 0) return;
  if (K == 0) return clear_or_keep(M, N, C, ldc, accumulate);
  for (std::size_t j0 = 0; j0 < N; j0 += NR) {
    const std::size_t nr = std::min(NR, N - j0);
    if (nr == NR) {
      for (std::size_t i0 = 0; i0 < M; i0 += MR) {
        tile_dispatch(std::min(MR, M - i0), nr, K, A + i0 * lda, lda, rows, j0, C + i0 * ldc + j0, ldc, accumulate);
      }
    } else {
      auto& panel = scratch<T>(0);
      panel.assign(K * NR, T{0});
      for (std::size_t k = 0; k < K; ++k) std::copy_n(rows[k] + j0, nr, panel.data() + k * NR);
      const StridedRows<T> packed{panel.data(), NR};
      for (std::size_t i0 = 0; i0 < M; i0 += MR) {
        tile_dispatch(std::min(MR, M - i0), nr, K, A + i0 * lda, lda, packed, 0, C + i0 * ldc + j0, ldc, accumulate);
      }
    }
  }
}

// op(B)[k][j] = cols[j][k]: B is supplied as N rows of length K and packed
// panel by panel into K x NR.
template <class T, class Rows>
void gemm_cols(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, Rows cols, T* C,
               std::size_t ldc, bool accumulate) {
  constexpr std::size_t MR = Tile<T>::MR;
  constexpr std::size_t NR = Tile<T>::NR;
  if (M == 0 || N == 0) return;
  if (K == 0) return clear_or_keep(M, N, C, ldc, accumulate);
  auto& panel = scratch<T>(0);
  for (std::size_t j0 = 0; j0 < N; j0 += NR) {
    const std::size_t nr = std::min(NR, N - j0);
    if (nr < NR) {
      panel.assign(K * NR, T{0});
    } else {
      panel.resize(K * NR);
    }
    constexpr std::size_t kb = 64;
    for (std::size_t k0 = 0; k0 < K; k0 += kb) {
      const std::size_t k1 = std::min(K, k0 + kb);
      for (std::size_t j = 0; j < nr; ++j) {
        const T* src = cols[j0 + j];
        for (std::size_t k = k0; k < k1; ++k) panel[k * NR + j] = src[k];
      }
    }
    const StridedRows<T> packed{panel.data(), NR};
    for (std::size_t i0 = 0; i0 < M; i0 += MR) {
      tile_dispatch(std::min(MR, M - i0), nr, K, A + i0 * lda, lda, packed, 0, C + i0 * ldc + j0, ldc, accumulate);
    }
  }
}

template <class T>
const T* transpose_into(std::vector<T>& buf, std::size_t rows, std::size_t cols, const T* src, std::size_t ld) {
  // src is rows x cols (leading dim ld); buf becomes cols x rows, dense.
  buf.resize(rows * cols);
  constexpr std::size_t blk = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += blk) {
    for (std::size_t j0 = 0; j0 < cols; j0 += blk) {
      const std::size_t i1 = std::min(rows, i0 + blk), j1 = std::min(cols, j0 + blk);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) buf[j * rows + i] = src[i * ld + j];
      }
    }
  }
  return buf.data();
}

}  // namespace detail

// op(A) is M x K, op(B) is K x N. lda/ldb are the leading dimensions of the
// matrices as stored (before the optional transpose).
template <class T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
          std::size_t ldb, T* C, std::size_t ldc, bool accumulate = false) {
  const T* a = A;
  std::size_t la = lda;
  if (ta == Trans::Yes) {
    a = detail::transpose_into(detail::scratch<T>(1), K, M, A, lda);
    la = K;
  }
  const detail::StridedRows<T> b{B, ldb};
  if (tb == Trans::Yes) {
    detail::gemm_cols(M, N, K, a, la, b, C, ldc, accumulate);
  } else {
    detail::gemm_rows(M, N, K, a, la, b, C, ldc, accumulate);
  }
}

// Indirect GEMM: row k of B is b_rows[k][0 .. N).
template <class T>
void gemm_indirect(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* const* b_rows,
                   T* C, std::size_t ldc, bool accumulate = false) {
  detail::gemm_rows(M, N, K, A, lda, detail::PointerRows<T>{b_rows}, C, ldc, accumulate);
}

// Indirect GEMM against a transposed operand: op(B)[k][j] = bt_rows[j][k].
template <class T>
void gemm_indirect_t(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
                     const T* const* bt_rows, T* C, std::size_t ldc, bool accumulate = false) {
  detail::gemm_cols(M, N, K, A, lda, detail::PointerRows<T>{bt_rows}, C, ldc, accumulate);
}

}  // namespace ldif::kernels
