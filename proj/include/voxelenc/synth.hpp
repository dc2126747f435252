#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxelenc/error.hpp"
#include "voxelenc/kernels.hpp"
#include "voxelenc/matrix.hpp"
#include "voxelenc/rng.hpp"

namespace voxelenc {

struct SynthSpec {
  std::size_t n = 100;
  std::size_t d = 10;
  std::size_t v = 20;
  double noise_sigma = 0.0;
  std::uint64_t seed = 42;
};

struct SynthData {
  Matrix x;       ///< n x d
  Matrix y;       ///< n x v
  Matrix w_true;  ///< d x v
};

/// n x d matrix of standard normals drawn in row-major order from `rng`.
inline Matrix normal_matrix(std::size_t rows, std::size_t cols, CounterRng& rng,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

/// Linear ground truth Y = X W + sigma * E.
///
/// One CounterRng stream (seeded with spec.seed) supplies, in order: X
/// (row-major), W (row-major, scaled by 1/sqrt(d)), then E.
inline SynthData generate(const SynthSpec& spec) {
  detail::require(spec.n >= 1 && spec.d >= 1 && spec.v >= 1,
                  "synthetic spec counts must be >= 1");
  detail::require(spec.noise_sigma >= 0.0 && std::isfinite(spec.noise_sigma),
                  "noise sigma must be finite and >= 0");
  CounterRng rng(spec.seed);
  SynthData out;
  out.x = normal_matrix(spec.n, spec.d, rng);
  out.w_true = normal_matrix(spec.d, spec.v, rng, 1.0 / std::sqrt(static_cast<double>(spec.d)));
  out.y = kernels::multiply(out.x, out.w_true);
  for (double& value : out.y.values()) value += spec.noise_sigma * rng.normal();
  return out;
}

inline constexpr std::size_t kNaiveTwoVTwoLimit = 4096;
inline constexpr std::size_t kNaiveRidgeLimit = 64;

namespace synth_detail {

inline double cos_d(std::span<const double> a, std::span<const double> b, bool permissive) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) ab += a[k] * b[k];
  for (std::size_t k = 0; k < a.size(); ++k) aa += a[k] * a[k];
  for (std::size_t k = 0; k < b.size(); ++k) bb += b[k] * b[k];
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na == 0.0 || nb == 0.0) {
    if (!permissive) throw ValidationError("zero-norm row in 2V2 input");
    return 1.0;
  }
  return 1.0 - ab / (na * nb);
}

}  // namespace synth_detail

/// Literal double loop over all pairs; the reference for two_v_two().
inline double naive_two_v_two(const Matrix& y, const Matrix& yhat, bool permissive = false) {
  detail::require(y.rows() == yhat.rows() && y.cols() == yhat.cols(), "shape mismatch");
  const std::size_t n = y.rows();
  detail::require(n >= 2, "2V2 needs at least 2 samples");
  detail::require(n <= kNaiveTwoVTwoLimit,
                  "naive 2V2 limited to N <= " + std::to_string(kNaiveTwoVTwoLimit));
  std::uint64_t hits = 0;
  std::uint64_t pairs = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double matched = synth_detail::cos_d(y.row(i), yhat.row(i), permissive) +
                             synth_detail::cos_d(y.row(j), yhat.row(j), permissive);
      const double swapped = synth_detail::cos_d(y.row(i), yhat.row(j), permissive) +
                             synth_detail::cos_d(y.row(j), yhat.row(i), permissive);
      if (matched < swapped) ++hits;
      ++pairs;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(pairs);
}

/// Explicit Gauss-Jordan inverse (partial pivoting).
inline Matrix naive_inverse(const Matrix& a) {
  detail::require(a.rows() == a.cols(), "inverse needs a square matrix");
  const std::size_t n = a.rows();
  Matrix work = a;
  Matrix inv = Matrix::identity(n);
  double scale = 0.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(work(r, col)) > std::abs(work(pivot, col))) pivot = r;
    if (!(std::abs(work(pivot, col)) > scale * 1e-14))
      throw ValidationError("matrix is singular");
    if (pivot != col)
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(work(pivot, c), work(col, c));
        std::swap(inv(pivot, c), inv(col, c));
      }
    const double p = work(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      work(col, c) /= p;
      inv(col, c) /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = work(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        work(r, c) -= f * work(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

/// (X^T X + lambda I)^-1 X^T Y by explicit inverse, no normalization.
inline Matrix naive_ridge(const Matrix& x, const Matrix& y, double lambda) {
  detail::require(x.rows() == y.rows(), "shape mismatch");
  const std::size_t n = x.rows(), d = x.cols(), v = y.cols();
  detail::require(d <= kNaiveRidgeLimit,
                  "naive ridge limited to D <= " + std::to_string(kNaiveRidgeLimit));
  Matrix xtx(d, d), xty(d, v);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x(i, a) * x(i, b);
      xtx(a, b) = s + (a == b ? lambda : 0.0);
    }
    for (std::size_t c = 0; c < v; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x(i, a) * y(i, c);
      xty(a, c) = s;
    }
  }
  const Matrix inv = naive_inverse(xtx);
  Matrix w(d, v);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t c = 0; c < v; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < d; ++b) s += inv(a, b) * xty(b, c);
      w(a, c) = s;
    }
  return w;
}

}  // namespace voxelenc
