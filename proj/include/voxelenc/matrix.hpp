#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "voxelenc/error.hpp"

namespace voxelenc {

/// On-disk element type. Values are always held as double in memory.
enum class Dtype : std::uint8_t { float32 = 0, float64 = 1 };

inline std::string to_string(Dtype dtype) {
  return dtype == Dtype::float32 ? "float32" : "float64";
}

inline std::size_t dtype_size(Dtype dtype) {
  return dtype == Dtype::float32 ? 4 : 8;
}

/// Dense row-major matrix of doubles.
///
/// Carries the dtype it was read with (or should be written with) so that a
/// float32 file survives a read/write cycle unchanged. Every solve and metric
/// works on the double values.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0,
         Dtype dtype = Dtype::float64)
      : rows_(rows), cols_(cols), dtype_(dtype), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
         Dtype dtype = Dtype::float64)
      : rows_(rows), cols_(cols), dtype_(dtype), data_(std::move(values)) {
    detail::require(data_.size() == rows_ * cols_,
                    "matrix data length " + std::to_string(data_.size()) +
                        " does not match shape " + std::to_string(rows_) + "x" +
                        std::to_string(cols_));
  }

  static Matrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      detail::require(row.size() == c, "ragged initializer for matrix");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(values));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  Dtype dtype() const noexcept { return dtype_; }
  void set_dtype(Dtype dtype) noexcept { dtype_ = dtype; }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  /// Rows gathered in the given order.
  Matrix select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_, 0.0, dtype_);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      detail::require(indices[r] < rows_, "row index out of range");
      std::copy_n(data_.data() + indices[r] * cols_, cols_, out.row(r).data());
    }
    return out;
  }

  /// Contiguous column block [start, start + count).
  Matrix col_block(std::size_t start, std::size_t count) const {
    detail::require(start + count <= cols_, "column block out of range");
    Matrix out(rows_, count, 0.0, dtype_);
    for (std::size_t r = 0; r < rows_; ++r)
      std::copy_n(data_.data() + r * cols_ + start, count, out.row(r).data());
    return out;
  }

  Matrix transposed() const {
    Matrix out(cols_, rows_, 0.0, dtype_);
    constexpr std::size_t tile = 32;
    for (std::size_t i0 = 0; i0 < rows_; i0 += tile)
      for (std::size_t j0 = 0; j0 < cols_; j0 += tile)
        for (std::size_t i = i0; i < std::min(i0 + tile, rows_); ++i)
          for (std::size_t j = j0; j < std::min(j0 + tile, cols_); ++j)
            out.data_[j * rows_ + i] = data_[i * cols_ + j];
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  /// Value equality (shape and every element); dtype is ignored.
  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Dtype dtype_ = Dtype::float64;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline double frobenius_norm(const Matrix& m) {
  double sum = 0.0;
  for (double v : m.values()) sum += v * v;
  return std::sqrt(sum);
}

/// max |a - b| / max(1, max |b|) over all elements.
inline double relative_max_diff(const Matrix& a, const Matrix& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  "shape mismatch: " + shape_string(a) + " vs " +
                      shape_string(b));
  double diff = 0.0;
  double scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a.values()[i] - b.values()[i]));
    scale = std::max(scale, std::abs(b.values()[i]));
  }
  return diff / scale;
}

}  // namespace voxelenc
