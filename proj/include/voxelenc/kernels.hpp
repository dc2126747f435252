#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "voxelenc/matrix.hpp"
#include "voxelenc/parallel.hpp"

namespace voxelenc {

// Dense products used by the ridge solver and the 2V2 metric.
//
// Every output element C(i, j) is a single left-to-right sum
//   ((0 + a0*b0) + a1*b1) + ...
// over the shared dimension, whatever the blocking or thread count. Tiles
// only change which elements are computed together, never the order inside
// one element. That keeps results bitwise reproducible and lets the metric
// code be checked for exact equality against plain loops.
namespace kernels {

inline constexpr std::size_t kMr = 4;
inline constexpr std::size_t kNr = 8;
inline constexpr std::size_t kKc = 256;

namespace detail {

template <std::size_t R>
inline void micro_tile(const double* a, std::size_t lda, const double* packed,
                       std::size_t kc, double* c, std::size_t ldc,
                       std::size_t nr, bool first) {
  std::array<std::array<double, kNr>, R> acc{};
  if (!first) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] = c[r * ldc + j];
  }
  for (std::size_t k = 0; k < kc; ++k) {
    const double* b = packed + k * kNr;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * lda + k];
      for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += av * b[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] = acc[r][j];
}

inline void micro_dispatch(std::size_t rows, const double* a, std::size_t lda,
                           const double* packed, std::size_t kc, double* c,
                           std::size_t ldc, std::size_t nr, bool first) {
  switch (rows) {
    case 4: micro_tile<4>(a, lda, packed, kc, c, ldc, nr, first); break;
    case 3: micro_tile<3>(a, lda, packed, kc, c, ldc, nr, first); break;
    case 2: micro_tile<2>(a, lda, packed, kc, c, ldc, nr, first); break;
    default: micro_tile<1>(a, lda, packed, kc, c, ldc, nr, first); break;
  }
}

}  // namespace detail

/// C[i*ldc + j] = sum_k A[i*lda + k] * B[j*ldb + k] for i < m, j < n.
///
/// Serial; the building block for the parallel wrappers below.
inline void gemm_abt(const double* A, std::size_t lda, std::size_t m,
                     const double* B, std::size_t ldb, std::size_t n,
                     std::size_t K, double* C, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (K == 0) {
    for (std::size_t i = 0; i < m; ++i)
      std::fill_n(C + i * ldc, n, 0.0);
    return;
  }
  std::vector<double> packed(kKc * kNr);
  for (std::size_t k0 = 0; k0 < K; k0 += kKc) {
    const std::size_t kc = std::min(kKc, K - k0);
    const bool first = k0 == 0;
    for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
      const std::size_t nr = std::min(kNr, n - j0);
      for (std::size_t k = 0; k < kc; ++k) {
        for (std::size_t j = 0; j < nr; ++j)
          packed[k * kNr + j] = B[(j0 + j) * ldb + k0 + k];
        for (std::size_t j = nr; j < kNr; ++j) packed[k * kNr + j] = 0.0;
      }
      for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
        const std::size_t mr = std::min(kMr, m - i0);
        detail::micro_dispatch(mr, A + i0 * lda + k0, lda, packed.data(), kc,
                               C + i0 * ldc + j0, ldc, nr, first);
      }
    }
  }
}

/// A * B^T for row-major A (m x K) and B (n x K), parallel over row blocks.
inline Matrix multiply_abt(const Matrix& a, const Matrix& b) {
  voxelenc::detail::require(a.cols() == b.cols(),
                            "inner dimension mismatch: " + shape_string(a) +
                                " * (" + shape_string(b) + ")^T");
  Matrix c(a.rows(), b.rows());
  constexpr std::size_t block = 64;
  const std::size_t tasks = (a.rows() + block - 1) / block;
  parallel_for(tasks, [&](std::size_t t) {
    const std::size_t i0 = t * block;
    const std::size_t m = std::min(block, a.rows() - i0);
    gemm_abt(a.data() + i0 * a.cols(), a.cols(), m, b.data(), b.cols(),
             b.rows(), a.cols(), c.data() + i0 * c.cols(), c.cols());
  });
  return c;
}

/// A * B for row-major A (m x K) and B (K x n).
inline Matrix multiply(const Matrix& a, const Matrix& b) {
  voxelenc::detail::require(a.cols() == b.rows(),
                            "inner dimension mismatch: " + shape_string(a) +
                                " * " + shape_string(b));
  return multiply_abt(a, b.transposed());
}

/// A^T * B for row-major A (K x m) and B (K x n).
inline Matrix multiply_atb(const Matrix& a, const Matrix& b) {
  voxelenc::detail::require(a.rows() == b.rows(),
                            "row count mismatch: " + shape_string(a) + " vs " +
                                shape_string(b));
  return multiply_abt(a.transposed(), b.transposed());
}

/// A * A^T for row-major A (d x n): lower tiles computed, then mirrored.
inline Matrix syrk(const Matrix& a) {
  const std::size_t d = a.rows();
  const std::size_t n = a.cols();
  Matrix g(d, d);
  constexpr std::size_t block = 32;
  const std::size_t tasks = (d + block - 1) / block;
  parallel_for(tasks, [&](std::size_t t) {
    const std::size_t i0 = t * block;
    const std::size_t m = std::min(block, d - i0);
    // Row block [i0, i0+m) only needs columns [0, i0+m).
    gemm_abt(a.data() + i0 * n, n, m, a.data(), n, i0 + m, n, g.data() + i0 * d, d);
  });
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) g(i, j) = g(j, i);
  return g;
}

/// X^T X.
inline Matrix gram(const Matrix& x) { return syrk(x.transposed()); }

}  // namespace kernels
}  // namespace voxelenc
