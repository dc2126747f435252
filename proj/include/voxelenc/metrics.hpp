#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelenc/error.hpp"
#include "voxelenc/kernels.hpp"
#include "voxelenc/matrix.hpp"
#include "voxelenc/parallel.hpp"

namespace voxelenc {

struct MetricOptions {
  /// Treat cosD(0, x) as 1 instead of rejecting zero-norm rows in 2V2.
  bool permissive_zero_norm = false;
};

namespace metrics_detail {

inline void require_same_shape(const Matrix& y, const Matrix& yhat) {
  detail::require(y.rows() == yhat.rows() && y.cols() == yhat.cols(),
                  "shape mismatch: Y is " + shape_string(y) + ", Yhat is " +
                      shape_string(yhat));
}

// Left-to-right sums; the kernels produce the same bits element by element.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine_distance(double dot_ab, double norm_a, double norm_b,
                              bool permissive) {
  if (norm_a == 0.0 || norm_b == 0.0) {
    if (!permissive) throw ValidationError("zero-norm row in 2V2 input");
    return 1.0;
  }
  return 1.0 - dot_ab / (norm_a * norm_b);
}

}  // namespace metrics_detail

struct TwoVTwoCount {
  std::uint64_t successes = 0;
  std::uint64_t pairs = 0;
  double accuracy() const {
    return pairs == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(pairs);
  }
};

/// Pairwise 2V2 test over all unordered pairs (i < j): a pair passes when
///   cosD(Y_i, Yh_i) + cosD(Y_j, Yh_j) < cosD(Y_i, Yh_j) + cosD(Y_j, Yh_i).
/// Ties fail.
///
/// Cross dot products come from blocked strips Y_I * Yh^T and Yh_I * Y^T
/// restricted to columns j >= start of block I, so memory stays
/// O(block * N). Each dot product is a left-to-right sum, which makes every
/// comparison identical to the plain per-pair loop.
inline TwoVTwoCount two_v_two_count(const Matrix& y, const Matrix& yhat,
                                    const MetricOptions& opts = {}) {
  using namespace metrics_detail;
  require_same_shape(y, yhat);
  const std::size_t n = y.rows();
  const std::size_t v = y.cols();
  detail::require(n >= 2, "2V2 needs at least 2 samples, got " + std::to_string(n));

  std::vector<double> norm_y(n), norm_h(n), matched(n);
  for (std::size_t i = 0; i < n; ++i) {
    norm_y[i] = norm(y.row(i));
    norm_h[i] = norm(yhat.row(i));
    if (!opts.permissive_zero_norm && (norm_y[i] == 0.0 || norm_h[i] == 0.0))
      throw ValidationError("zero-norm row " + std::to_string(i) +
                            " in 2V2 input (permissive mode treats cosD as 1)");
  }
  for (std::size_t i = 0; i < n; ++i)
    matched[i] = cosine_distance(dot(y.row(i), yhat.row(i)), norm_y[i], norm_h[i],
                                 opts.permissive_zero_norm);

  constexpr std::size_t block = 64;
  const std::size_t tasks = (n + block - 1) / block;
  std::vector<std::uint64_t> wins(tasks, 0);
  parallel_for(tasks, [&](std::size_t t) {
    const std::size_t i0 = t * block;
    const std::size_t m = std::min(block, n - i0);
    const std::size_t width = n - i0;
    // yh_dot[r][c] = dot(Y_{i0+r}, Yh_{i0+c}); hy_dot[r][c] = dot(Yh_{i0+r}, Y_{i0+c})
    std::vector<double> yh_dot(m * width), hy_dot(m * width);
    kernels::gemm_abt(y.row(i0).data(), v, m, yhat.row(i0).data(), v, width, v,
                      yh_dot.data(), width);
    kernels::gemm_abt(yhat.row(i0).data(), v, m, y.row(i0).data(), v, width, v,
                      hy_dot.data(), width);
    std::uint64_t count = 0;
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t i = i0 + r;
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::size_t c = j - i0;
        const double d_ij = cosine_distance(yh_dot[r * width + c], norm_y[i], norm_h[j],
                                            opts.permissive_zero_norm);
        // dot(Y_j, Yh_i) == dot(Yh_i, Y_j): same products, same order.
        const double d_ji = cosine_distance(hy_dot[r * width + c], norm_y[j], norm_h[i],
                                            opts.permissive_zero_norm);
        if (matched[i] + matched[j] < d_ij + d_ji) ++count;
      }
    }
    wins[t] = count;
  });

  TwoVTwoCount out;
  for (auto w : wins) out.successes += w;
  out.pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  return out;
}

inline double two_v_two(const Matrix& y, const Matrix& yhat,
                        const MetricOptions& opts = {}) {
  return two_v_two_count(y, yhat, opts).accuracy();
}

/// Pearson correlation of two equal-length vectors. Sets `degenerate` (and
/// returns 0) when either side has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b,
                      bool& degenerate) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double da = a[k] - ma;
    const double db = b[k] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  degenerate = !(saa > 0.0 && sbb > 0.0);
  if (degenerate) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct PearsonResult {
  double mean = 0.0;
  std::size_t degenerate = 0;
};

/// Mean over samples of the across-voxel correlation corr(Y_i, Yh_i).
/// Zero-variance rows contribute 0 and are counted; the divisor stays N.
inline PearsonResult pearson_mean(const Matrix& y, const Matrix& yhat) {
  metrics_detail::require_same_shape(y, yhat);
  detail::require(y.cols() >= 2, "Pearson across voxels needs V >= 2, got " +
                                     std::to_string(y.cols()));
  detail::require(y.rows() >= 1, "Pearson needs at least one sample");
  PearsonResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    bool degenerate = false;
    sum += pearson(y.row(i), yhat.row(i), degenerate);
    if (degenerate) ++out.degenerate;
  }
  out.mean = sum / static_cast<double>(y.rows());
  return out;
}

/// Mean over voxels of the across-sample correlation (the common
/// voxel-wise encoding score; reported alongside the per-sample one).
inline PearsonResult pearson_voxelwise(const Matrix& y, const Matrix& yhat) {
  metrics_detail::require_same_shape(y, yhat);
  detail::require(y.rows() >= 2, "voxel-wise Pearson needs N >= 2, got " +
                                     std::to_string(y.rows()));
  const Matrix yt = y.transposed();
  const Matrix ht = yhat.transposed();
  PearsonResult out;
  double sum = 0.0;
  for (std::size_t v = 0; v < yt.rows(); ++v) {
    bool degenerate = false;
    sum += pearson(yt.row(v), ht.row(v), degenerate);
    if (degenerate) ++out.degenerate;
  }
  out.mean = sum / static_cast<double>(yt.rows());
  return out;
}

/// Per-voxel mean absolute error.
inline std::vector<double> mae(const Matrix& y, const Matrix& yhat) {
  metrics_detail::require_same_shape(y, yhat);
  std::vector<double> out(y.cols(), 0.0);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t v = 0; v < y.cols(); ++v) out[v] += std::abs(y(i, v) - yhat(i, v));
  if (y.rows() > 0)
    for (double& e : out) e /= static_cast<double>(y.rows());
  return out;
}

struct EvalResult {
  double two_v_two = 0.0;
  double pearson = 0.0;
  std::size_t degenerate_sample_count = 0;
  double pearson_voxelwise = 0.0;
  std::size_t degenerate_voxel_count = 0;
  std::vector<double> mae_per_voxel;
  std::size_t n_samples = 0;

  double mean_mae() const {
    if (mae_per_voxel.empty()) return 0.0;
    double s = 0.0;
    for (double e : mae_per_voxel) s += e;
    return s / static_cast<double>(mae_per_voxel.size());
  }
};

/// All metrics on one held-out set.
inline EvalResult evaluate(const Matrix& y, const Matrix& yhat,
                           const MetricOptions& opts = {}) {
  EvalResult r;
  r.n_samples = y.rows();
  r.two_v_two = two_v_two(y, yhat, opts);
  const auto pc = pearson_mean(y, yhat);
  r.pearson = pc.mean;
  r.degenerate_sample_count = pc.degenerate;
  const auto pv = pearson_voxelwise(y, yhat);
  r.pearson_voxelwise = pv.mean;
  r.degenerate_voxel_count = pv.degenerate;
  r.mae_per_voxel = mae(y, yhat);
  return r;
}

inline nlohmann::json to_json(const EvalResult& r, bool with_mae_vector = true) {
  nlohmann::json j;
  j["two_v_two"] = r.two_v_two;
  j["pearson"] = r.pearson;
  j["degenerate_sample_count"] = r.degenerate_sample_count;
  j["pearson_voxelwise"] = r.pearson_voxelwise;
  j["pearson_voxelwise_note"] = "per-voxel across-sample correlation (not the 2V2/PC headline metric)";
  j["degenerate_voxel_count"] = r.degenerate_voxel_count;
  j["mean_mae"] = r.mean_mae();
  j["n_samples"] = r.n_samples;
  if (with_mae_vector) j["mae_per_voxel"] = r.mae_per_voxel;
  return j;
}

/// Two-column CSV `voxel,mae`; voxel is `voxel_offset` + position.
inline void write_mae_csv(std::span<const double> mae_values,
                          const std::filesystem::path& path,
                          std::size_t voxel_offset = 0) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "voxel,mae\n";
  char buf[32];
  for (std::size_t v = 0; v < mae_values.size(); ++v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, mae_values[v]);
    out << voxel_offset + v << ',';
    out.write(buf, res.ptr - buf);
    out << '\n';
  }
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace voxelenc
