#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxelenc/error.hpp"
#include "voxelenc/kernels.hpp"
#include "voxelenc/matio.hpp"
#include "voxelenc/matrix.hpp"
#include "voxelenc/metrics.hpp"
#include "voxelenc/parallel.hpp"
#include "voxelenc/rng.hpp"

namespace voxelenc {

inline constexpr double kDefaultLambda = 1.0;
inline constexpr std::size_t kDefaultSolveBlock = 256;

enum class Normalization { none, zscore };

inline std::string to_string(Normalization n) {
  return n == Normalization::zscore ? "zscore" : "none";
}

inline Normalization parse_normalization(const std::string& s) {
  if (s == "zscore") return Normalization::zscore;
  if (s == "none") return Normalization::none;
  throw ValidationError("unknown normalization mode '" + s + "' (zscore|none)");
}

/// Column statistics of a training design matrix.
///
/// zscore: x -> (x - mean) / sd with population sd. Columns that are
/// constant on the training rows get scale 1 and are zeroed outright, so
/// their weights come out exactly 0.
struct FeatureTransform {
  Normalization mode = Normalization::none;
  std::vector<double> means;
  std::vector<double> scales;
  std::vector<bool> constant;

  static FeatureTransform fit(const Matrix& x, Normalization mode) {
    const std::size_t d = x.cols();
    FeatureTransform t;
    t.mode = mode;
    t.means.assign(d, 0.0);
    t.scales.assign(d, 1.0);
    t.constant.assign(d, false);
    if (mode == Normalization::none) return t;
    const auto n = static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) t.means[j] += x(i, j);
    for (double& m : t.means) m /= n;
    std::vector<double> ss(d, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x(i, j) - t.means[j];
        ss[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) {
      bool same = true;
      for (std::size_t i = 1; i < x.rows() && same; ++i) same = x(i, j) == x(0, j);
      if (same) {
        t.constant[j] = true;
        t.means[j] = x(0, j);
        t.scales[j] = 1.0;
      } else {
        const double sd = std::sqrt(ss[j] / n);
        t.scales[j] = sd > 0.0 ? sd : 1.0;
      }
    }
    return t;
  }

  Matrix apply(const Matrix& x) const {
    detail::require(x.cols() == means.size(),
                    "feature count mismatch: got " + std::to_string(x.cols()) +
                        " columns, model expects " + std::to_string(means.size()));
    Matrix out(x.rows(), x.cols());
    if (mode == Normalization::none) {
      std::copy(x.values().begin(), x.values().end(), out.values().begin());
      return out;
    }
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j)
        out(i, j) = constant[j] ? 0.0 : (x(i, j) - means[j]) / scales[j];
    return out;
  }
};

struct SolverInfo {
  std::string method = "cholesky";  ///< "cholesky" or "eigen"
  std::optional<double> condition_number;
};

/// Factorization of (G + lambda I) for a fixed Gram matrix G = Xc^T Xc.
///
/// Cholesky first; if a pivot is not safely positive the matrix is
/// eigendecomposed instead and the solve uses the pseudo-inverse, with the
/// condition number recorded.
class RidgeFactorization {
 public:
  RidgeFactorization(const Matrix& gram_matrix, double lambda,
                     std::size_t block_size = kDefaultSolveBlock)
      : d_(gram_matrix.rows()), block_size_(std::max<std::size_t>(1, block_size)) {
    detail::require(gram_matrix.rows() == gram_matrix.cols(), "Gram matrix must be square");
    detail::require(lambda >= 0.0 && std::isfinite(lambda),
                    "lambda must be finite and >= 0");
    Matrix a = gram_matrix;
    for (std::size_t i = 0; i < d_; ++i) a(i, i) += lambda;
    if (!cholesky(a)) eigen_fallback(gram_matrix, lambda);
  }

  const SolverInfo& info() const noexcept { return info_; }
  std::size_t dim() const noexcept { return d_; }

  /// Solves (G + lambda I) W = B for every column of B (D x V).
  Matrix solve(Matrix b) const {
    detail::require(b.rows() == d_, "right-hand side has " + std::to_string(b.rows()) +
                                        " rows, expected " + std::to_string(d_));
    if (info_.method == "cholesky") {
      triangular_solves(b);
      return b;
    }
    return eigen_solve(b);
  }

 private:
  // Row-oriented Cholesky, lower factor into lower_, upper_ = lower_^T.
  bool cholesky(const Matrix& a) {
    lower_ = Matrix(d_, d_);
    for (std::size_t j = 0; j < d_; ++j) {
      const double* lj = lower_.row(j).data();
      for (std::size_t i = j; i < d_; ++i) {
        const double* li = lower_.row(i).data();
        double s = a(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
        if (i == j) {
          // Relative pivot floor: anything below is numerically singular.
          const double floor = std::abs(a(j, j)) * 1e-13;
          if (!(s > floor) || !std::isfinite(s)) return false;
          lower_(j, j) = std::sqrt(s);
        } else {
          lower_(i, j) = s / lower_(j, j);
        }
      }
    }
    upper_ = lower_.transposed();
    info_ = {"cholesky", std::nullopt};
    return true;
  }

  void triangular_solves(Matrix& b) const {
    const std::size_t v = b.cols();
    const std::size_t tasks = (v + block_size_ - 1) / block_size_;
    parallel_for(tasks, [&](std::size_t t) {
      const std::size_t c0 = t * block_size_;
      const std::size_t c1 = std::min(v, c0 + block_size_);
      // Forward: L z = b.
      for (std::size_t i = 0; i < d_; ++i) {
        double* bi = b.row(i).data();
        const double* li = lower_.row(i).data();
        for (std::size_t k = 0; k < i; ++k) {
          const double l = li[k];
          if (l == 0.0) continue;
          const double* bk = b.row(k).data();
          for (std::size_t c = c0; c < c1; ++c) bi[c] -= l * bk[c];
        }
        const double piv = li[i];
        for (std::size_t c = c0; c < c1; ++c) bi[c] /= piv;
      }
      // Backward: L^T w = z.
      for (std::size_t ii = d_; ii-- > 0;) {
        double* bi = b.row(ii).data();
        const double* ui = upper_.row(ii).data();
        for (std::size_t k = ii + 1; k < d_; ++k) {
          const double u = ui[k];
          if (u == 0.0) continue;
          const double* bk = b.row(k).data();
          for (std::size_t c = c0; c < c1; ++c) bi[c] -= u * bk[c];
        }
        const double piv = ui[ii];
        for (std::size_t c = c0; c < c1; ++c) bi[c] /= piv;
      }
    });
  }

  void eigen_fallback(const Matrix& g, double lambda) {
    Eigen::MatrixXd a(d_, d_);
    for (std::size_t i = 0; i < d_; ++i)
      for (std::size_t j = 0; j < d_; ++j) a(i, j) = g(i, j) + (i == j ? lambda : 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success)
      throw ValidationError("ridge factorization failed: eigendecomposition did not converge");
    eigvecs_ = es.eigenvectors();
    eigvals_ = es.eigenvalues();
    const double top = eigvals_.size() ? eigvals_.maxCoeff() : 0.0;
    const double bottom = eigvals_.size() ? eigvals_.minCoeff() : 0.0;
    const double tol = std::max(top, 0.0) * static_cast<double>(d_) *
                       std::numeric_limits<double>::epsilon();
    inv_eigvals_ = eigvals_.unaryExpr([tol](double mu) { return mu > tol ? 1.0 / mu : 0.0; });
    const double cond = bottom > tol ? top / bottom : std::numeric_limits<double>::infinity();
    info_ = {"eigen", cond};
    std::cerr << "voxelenc: Cholesky failed, solved by eigendecomposition (condition number "
              << cond << ")\n";
  }

  Matrix eigen_solve(const Matrix& b) const {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        bm(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
    const Eigen::MatrixXd proj = eigvecs_.transpose() * bm;
    const Eigen::MatrixXd w = eigvecs_ * (inv_eigvals_.asDiagonal() * proj);
    Matrix out(b.rows(), b.cols());
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j)
        out(i, j) = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
  }

  std::size_t d_;
  std::size_t block_size_;
  SolverInfo info_;
  Matrix lower_;
  Matrix upper_;
  Eigen::MatrixXd eigvecs_;
  Eigen::VectorXd eigvals_;
  Eigen::VectorXd inv_eigvals_;
};

/// Fitted encoder: Yhat = normalize(X) * W + response_means.
struct EncoderModel {
  Matrix weights;  ///< D x V
  double lambda = kDefaultLambda;
  Normalization normalization = Normalization::zscore;
  std::vector<double> feature_means;
  std::vector<double> feature_scales;
  std::vector<bool> constant_features;
  std::vector<double> response_means;
  SolverInfo solver;

  std::size_t feature_count() const { return weights.rows(); }
  std::size_t target_count() const { return weights.cols(); }

  FeatureTransform transform() const {
    return {normalization, feature_means, feature_scales, constant_features};
  }
};

struct FitOptions {
  Normalization normalization = Normalization::zscore;
  std::size_t block_size = kDefaultSolveBlock;
};

/// Training design prepared once and reused for any number of target blocks
/// (all ROIs of a fold share one Gram factorization).
class PreparedDesign {
 public:
  PreparedDesign(const Matrix& x, double lambda, const FitOptions& opts = {})
      : PreparedDesign(x, opts) {
    factorize(lambda);
  }

  /// Normalization and Gram only; call factorize() before fitting.
  PreparedDesign(const Matrix& x, const FitOptions& opts)
      : opts_(opts), transform_(FeatureTransform::fit(x, opts.normalization)) {
    detail::require(x.rows() >= 2, "ridge fit needs N >= 2 rows, got " +
                                       std::to_string(x.rows()));
    xt_ = transform_.apply(x).transposed();
    gram_ = kernels::syrk(xt_);
  }

  void factorize(double lambda) {
    lambda_ = lambda;
    factor_.emplace(gram_, lambda, opts_.block_size);
  }

  std::size_t rows() const { return xt_.cols(); }
  const Matrix& gram() const { return gram_; }

  EncoderModel fit(const Matrix& y) const {
    detail::require(factor_.has_value(), "design not factorized");
    detail::require(y.rows() == rows(),
                    "shape mismatch: X has " + std::to_string(rows()) + " rows, Y has " +
                        std::to_string(y.rows()));
    detail::require(y.cols() >= 1, "Y has no columns");
    EncoderModel m;
    m.lambda = lambda_;
    m.normalization = opts_.normalization;
    m.feature_means = transform_.means;
    m.feature_scales = transform_.scales;
    m.constant_features = transform_.constant;
    m.response_means.assign(y.cols(), 0.0);
    Matrix yc = y;
    if (opts_.normalization == Normalization::zscore) {
      for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t v = 0; v < y.cols(); ++v) m.response_means[v] += y(i, v);
      for (double& mu : m.response_means) mu /= static_cast<double>(y.rows());
      for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t v = 0; v < y.cols(); ++v) yc(i, v) -= m.response_means[v];
    }
    Matrix rhs = kernels::multiply_abt(xt_, yc.transposed());
    m.weights = factor_->solve(std::move(rhs));
    for (std::size_t j = 0; j < m.constant_features.size(); ++j)
      if (m.constant_features[j]) std::fill(m.weights.row(j).begin(), m.weights.row(j).end(), 0.0);
    m.solver = factor_->info();
    detail::require(m.weights.all_finite(), "ridge solve produced non-finite weights");
    return m;
  }

 private:
  FitOptions opts_;
  FeatureTransform transform_;
  Matrix xt_;    ///< normalized X, transposed (D x N)
  Matrix gram_;  ///< Xc^T Xc
  double lambda_ = kDefaultLambda;
  std::optional<RidgeFactorization> factor_;
};

/// Multi-target ridge: W = (Xc^T Xc + lambda I)^-1 Xc^T Yc with a single
/// factorization shared by all V targets.
inline EncoderModel fit(const Matrix& x, const Matrix& y, double lambda = kDefaultLambda,
                        const FitOptions& opts = {}) {
  detail::require(x.rows() == y.rows(), "shape mismatch: X is " + shape_string(x) +
                                            ", Y is " + shape_string(y));
  return PreparedDesign(x, lambda, opts).fit(y);
}

inline EncoderModel fit(const Matrix& x, const Matrix& y, double lambda,
                        Normalization mode) {
  return fit(x, y, lambda, FitOptions{mode, kDefaultSolveBlock});
}

inline Matrix predict(const EncoderModel& model, const Matrix& x) {
  detail::require(x.cols() == model.feature_count(),
                  "shape mismatch: X has " + std::to_string(x.cols()) +
                      " columns, model expects " + std::to_string(model.feature_count()));
  const std::size_t v = model.target_count();
  if (x.rows() == 0) return Matrix(0, v);
  Matrix out = kernels::multiply_abt(model.transform().apply(x), model.weights.transposed());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < v; ++c) out(i, c) += model.response_means[c];
  return out;
}

struct TuneOptions {
  std::vector<double> grid{0.01, 0.1, 1.0, 10.0, 100.0};
  double val_fraction = 0.1;
  std::uint64_t seed = 42;
  FitOptions fit;
};

struct TuneResult {
  double lambda = kDefaultLambda;
  std::vector<std::pair<double, double>> table;  ///< (lambda, validation PC)
  EncoderModel model;                            ///< refit on all rows
};

/// Picks lambda by mean validation PC on a seeded hold-out of the training
/// rows (ties go to the smaller lambda), then refits on every row.
inline TuneResult tune_lambda(const Matrix& x, const Matrix& y, const TuneOptions& opts) {
  detail::require(!opts.grid.empty(), "lambda grid is empty");
  detail::require(opts.val_fraction > 0.0 && opts.val_fraction < 0.5,
                  "val_fraction must be in (0, 0.5)");
  detail::require(x.rows() == y.rows(), "shape mismatch: X is " + shape_string(x) +
                                            ", Y is " + shape_string(y));
  for (double l : opts.grid)
    detail::require(l >= 0.0 && std::isfinite(l), "lambda grid values must be finite and >= 0");
  TuneResult result;
  if (opts.grid.size() == 1) {
    result.lambda = opts.grid.front();
    result.model = fit(x, y, result.lambda, opts.fit);
    return result;
  }

  const std::size_t n = x.rows();
  const auto holdout = static_cast<std::size_t>(
      std::ceil(opts.val_fraction * static_cast<double>(n)));
  detail::require(holdout >= 2 && n - holdout >= 2,
                  "too few rows (" + std::to_string(n) + ") to hold out a validation set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(opts.seed);
  shuffle(order.data(), n, rng);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());

  const Matrix x_train = x.select_rows(train);
  const Matrix y_train = y.select_rows(train);
  const Matrix x_val = x.select_rows(val);
  const Matrix y_val = y.select_rows(val);

  std::vector<double> grid = opts.grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  PreparedDesign design(x_train, opts.fit);
  double best_pc = -std::numeric_limits<double>::infinity();
  for (double l : grid) {
    design.factorize(l);
    const EncoderModel m = design.fit(y_train);
    const double pc = pearson_mean(y_val, predict(m, x_val)).mean;
    result.table.emplace_back(l, pc);
    if (pc > best_pc) {
      best_pc = pc;
      result.lambda = l;
    }
  }
  result.model = fit(x, y, result.lambda, opts.fit);
  return result;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/weights.vemf + <dir>/model.json
// ---------------------------------------------------------------------------

inline nlohmann::json model_sidecar(const EncoderModel& m) {
  nlohmann::json j;
  j["format"] = "voxelenc-model";
  j["version"] = 1;
  j["lambda"] = m.lambda;
  j["normalization"] = to_string(m.normalization);
  j["feature_count"] = m.feature_count();
  j["target_count"] = m.target_count();
  j["feature_means"] = m.feature_means;
  j["feature_scales"] = m.feature_scales;
  j["constant_features"] = m.constant_features;
  j["response_means"] = m.response_means;
  j["solver"] = m.solver.method;
  if (m.solver.condition_number) {
    if (std::isfinite(*m.solver.condition_number))
      j["condition_number"] = *m.solver.condition_number;
    else
      j["condition_number"] = "inf";
  }
  j["weights"] = "weights.vemf";
  return j;
}

inline void save_model(const EncoderModel& m, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  write_matrix(m.weights, dir / "weights.vemf");
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw IoError("cannot write '" + (dir / "model.json").string() + "'");
  out << model_sidecar(m).dump(2) << "\n";
}

inline EncoderModel load_model(const fs::path& dir) {
  const std::string text = detail::read_file_bytes(dir / "model.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("model.json is not valid JSON: " + std::string(e.what()));
  }
  EncoderModel m;
  try {
    m.lambda = j.at("lambda").get<double>();
    m.normalization = parse_normalization(j.at("normalization").get<std::string>());
    m.feature_means = j.at("feature_means").get<std::vector<double>>();
    m.feature_scales = j.at("feature_scales").get<std::vector<double>>();
    m.constant_features = j.at("constant_features").get<std::vector<bool>>();
    m.response_means = j.at("response_means").get<std::vector<double>>();
    m.solver.method = j.value("solver", std::string("cholesky"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model.json: " + std::string(e.what()));
  }
  m.weights = read_matrix(dir / j.value("weights", std::string("weights.vemf")));
  const std::size_t d = m.weights.rows();
  const std::size_t v = m.weights.cols();
  detail::require(m.feature_means.size() == d && m.feature_scales.size() == d &&
                      m.constant_features.size() == d && m.response_means.size() == v,
                  "model.json statistics do not match weights shape " + shape_string(m.weights));
  return m;
}

}  // namespace voxelenc
