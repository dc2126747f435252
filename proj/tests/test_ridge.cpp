#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "support.hpp"

using namespace voxelenc;
using testing_support::random_matrix;
using testing_support::TempDir;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

Matrix from_eigen(const Eigen::MatrixXd& e) {
  Matrix m(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  return m;
}

// Independent oracle: normal equations through Eigen's LDLT.
Matrix normal_equations(const Matrix& x, const Matrix& y, double lambda) {
  const Eigen::MatrixXd ex = to_eigen(x);
  Eigen::MatrixXd a = ex.transpose() * ex;
  a.diagonal().array() += lambda;
  return from_eigen(a.ldlt().solve(ex.transpose() * to_eigen(y)));
}

// Independent oracle: thin SVD of the centred, scaled design.
Matrix svd_ridge(const Matrix& xn, const Matrix& yc, double lambda) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(to_eigen(xn), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  Eigen::VectorXd f(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) f(i) = s(i) / (s(i) * s(i) + lambda);
  return from_eigen(svd.matrixV() * f.asDiagonal() * svd.matrixU().transpose() * to_eigen(yc));
}

}  // namespace

TEST(Ridge, IdentityHandSolve) {
  const Matrix x = Matrix::identity(2);
  const Matrix y = Matrix::from_rows({{2}, {4}});
  const EncoderModel m = fit(x, y, 1.0, Normalization::none);
  // Cholesky goes through sqrt(2), so allow a few ulps.
  EXPECT_NEAR(m.weights(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(m.weights(1, 0), 2.0, 1e-15);
  EXPECT_NEAR(predict(m, Matrix::from_rows({{1, 0}}))(0, 0), 1.0, 1e-15);
}

TEST(Ridge, ExactInterpolationAtLambdaZero) {
  const Matrix x = random_matrix(6, 6, 1);
  const Matrix y = random_matrix(6, 3, 2);
  const EncoderModel m = fit(x, y, 0.0, Normalization::none);
  EXPECT_LT(relative_max_diff(predict(m, x), y), 1e-10);
}

TEST(Ridge, ZeroRowPredict) {
  const EncoderModel m = fit(Matrix::identity(2), Matrix::from_rows({{2}, {4}}), 1.0, Normalization::none);
  const Matrix p = predict(m, Matrix(0, 2));
  EXPECT_EQ(p.rows(), 0u);
  EXPECT_EQ(p.cols(), 1u);
}

TEST(Ridge, MatchesNormalEquationsOracle) {
  const Matrix x = random_matrix(50, 10, 3);
  const Matrix y = random_matrix(50, 5, 4);
  const EncoderModel m = fit(x, y, 1.0, Normalization::none);
  EXPECT_LT(relative_max_diff(m.weights, normal_equations(x, y, 1.0)), 1e-8);
}

TEST(Ridge, ZscoreMatchesSvdPath) {
  for (double lambda : {0.1, 1.0, 10.0}) {
    const Matrix x = random_matrix(80, 12, 5);
    Matrix y = random_matrix(80, 7, 6);
    for (double& v : y.values()) v += 3.0;
    const EncoderModel m = fit(x, y, lambda, Normalization::zscore);
    const Matrix xn = FeatureTransform::fit(x, Normalization::zscore).apply(x);
    Matrix yc = y;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t v = 0; v < y.cols(); ++v) yc(i, v) -= m.response_means[v];
    EXPECT_LT(relative_max_diff(m.weights, svd_ridge(xn, yc, lambda)), 1e-8) << lambda;
  }
}

TEST(Ridge, RowOrderInvariance) {
  const Matrix x = random_matrix(60, 9, 7);
  const Matrix y = random_matrix(60, 4, 8);
  std::vector<std::size_t> perm(60);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng rng(9);
  shuffle(perm.data(), perm.size(), rng);
  const EncoderModel a = fit(x, y, 0.5);
  const EncoderModel b = fit(x.select_rows(perm), y.select_rows(perm), 0.5);
  EXPECT_LT(relative_max_diff(b.weights, a.weights), 1e-10);
}

TEST(Ridge, MonotoneShrinkage) {
  const Matrix x = random_matrix(40, 8, 10);
  const Matrix y = random_matrix(40, 3, 11);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 0.1, 1.0, 10.0, 100.0, 1000.0}) {
    const double norm = frobenius_norm(fit(x, y, lambda).weights);
    EXPECT_LE(norm, prev) << lambda;
    prev = norm;
  }
}

TEST(Ridge, MultiTargetEqualsSingleTargets) {
  const Matrix x = random_matrix(70, 11, 12);
  const Matrix y = random_matrix(70, 6, 13);
  const EncoderModel joint = fit(x, y, 2.0);
  for (std::size_t v = 0; v < y.cols(); ++v) {
    const EncoderModel single = fit(x, y.col_block(v, 1), 2.0);
    for (std::size_t d = 0; d < x.cols(); ++d)
      EXPECT_NEAR(single.weights(d, 0), joint.weights(d, v), 1e-10);
  }
}

TEST(Ridge, BlockSizeDoesNotChangeBits) {
  const Matrix x = random_matrix(90, 20, 14);
  const Matrix y = random_matrix(90, 37, 15);
  set_threads(3);
  const EncoderModel a = fit(x, y, 1.0, FitOptions{Normalization::zscore, 5});
  set_threads(1);
  const EncoderModel b = fit(x, y, 1.0, FitOptions{Normalization::zscore, 5});
  set_threads(0);
  EXPECT_EQ(a.weights, b.weights);
  const EncoderModel c = fit(x, y, 1.0, FitOptions{Normalization::zscore, 256});
  EXPECT_LT(relative_max_diff(c.weights, a.weights), 1e-12);
}

TEST(Ridge, ConstantColumnsGetZeroWeight) {
  Matrix x = random_matrix(30, 4, 16);
  for (std::size_t i = 0; i < x.rows(); ++i) x(i, 2) = 5.0;
  const Matrix y = random_matrix(30, 3, 17);
  const EncoderModel m = fit(x, y, 1.0);
  EXPECT_TRUE(m.constant_features[2]);
  EXPECT_EQ(m.feature_scales[2], 1.0);
  for (std::size_t v = 0; v < 3; ++v) EXPECT_EQ(m.weights(2, v), 0.0);
  for (double s : m.feature_scales) EXPECT_GT(s, 0.0);
  EXPECT_TRUE(predict(m, x).all_finite());
}

TEST(Ridge, SingularSystemFallsBackToEigen) {
  Matrix x = random_matrix(20, 3, 18);
  for (std::size_t i = 0; i < x.rows(); ++i) x(i, 2) = x(i, 1);
  const Matrix y = random_matrix(20, 2, 19);
  const EncoderModel m = fit(x, y, 0.0, Normalization::none);
  EXPECT_EQ(m.solver.method, "eigen");
  ASSERT_TRUE(m.solver.condition_number.has_value());
  EXPECT_GT(*m.solver.condition_number, 1e10);
  for (std::size_t v = 0; v < 2; ++v) EXPECT_NEAR(m.weights(1, v), m.weights(2, v), 1e-8);
  const EncoderModel ok = fit(x, y, 1.0, Normalization::none);
  EXPECT_EQ(ok.solver.method, "cholesky");
}

TEST(Ridge, ShapeErrors) {
  EXPECT_THROW(fit(Matrix(5, 2), Matrix(4, 1), 1.0), ValidationError);
  EXPECT_THROW(fit(random_matrix(5, 2, 1), random_matrix(5, 1, 2), -1.0), ValidationError);
  const EncoderModel m = fit(random_matrix(5, 2, 1), random_matrix(5, 1, 2), 1.0);
  EXPECT_THROW(predict(m, Matrix(3, 3)), ValidationError);
}

TEST(Ridge, SharedDesignMatchesFreshFits) {
  const Matrix x = random_matrix(50, 6, 20);
  const Matrix y = random_matrix(50, 10, 21);
  PreparedDesign design(x, 1.0);
  const EncoderModel a = design.fit(y.col_block(0, 4));
  const EncoderModel b = design.fit(y.col_block(4, 6));
  EXPECT_EQ(a.weights, fit(x, y.col_block(0, 4), 1.0).weights);
  EXPECT_EQ(b.weights, fit(x, y.col_block(4, 6), 1.0).weights);
}

TEST(Tune, SingletonGridSkipsSearch) {
  const Matrix x = random_matrix(10, 2, 22);
  const Matrix y = random_matrix(10, 3, 23);
  const TuneResult r = tune_lambda(x, y, TuneOptions{{1.0}, 0.1, 42, {}});
  EXPECT_EQ(r.lambda, 1.0);
  EXPECT_TRUE(r.table.empty());
}

TEST(Tune, NoiselessPrefersMinimalShrinkage) {
  const SynthData d = generate({200, 10, 20, 0.0, 24});
  const TuneResult r = tune_lambda(d.x, d.y, TuneOptions{{1e3, 1e-6}, 0.1, 42, {}});
  ASSERT_EQ(r.table.size(), 2u);
  EXPECT_EQ(r.lambda, 1e-6);
  EXPECT_GT(r.table[0].second, r.table[1].second);
  EXPECT_EQ(r.model.weights, fit(d.x, d.y, 1e-6).weights);
}

TEST(Tune, TieGoesToSmallerLambda) {
  // One all-ones feature without normalization: the Gram is the train row
  // count (18), so lambda 46 and 238 give pivots 64 and 256. Their square
  // roots are exact, the weights differ by a factor of 4 and the validation
  // correlations agree bit for bit.
  const Matrix x(20, 1, 1.0);
  const Matrix y = random_matrix(20, 5, 25);
  const TuneResult r =
      tune_lambda(x, y, TuneOptions{{238.0, 46.0}, 0.1, 42, {Normalization::none, 256}});
  ASSERT_EQ(r.table.size(), 2u);
  EXPECT_EQ(r.table[0].second, r.table[1].second);
  EXPECT_EQ(r.lambda, 46.0);
}

TEST(Tune, RejectsBadOptions) {
  const Matrix x = random_matrix(10, 2, 26);
  const Matrix y = random_matrix(10, 3, 27);
  EXPECT_THROW(tune_lambda(x, y, TuneOptions{{}, 0.1, 1, {}}), ValidationError);
  EXPECT_THROW(tune_lambda(x, y, TuneOptions{{1, 2}, 0.7, 1, {}}), ValidationError);
  EXPECT_THROW(tune_lambda(x, y, TuneOptions{{1, -2}, 0.1, 1, {}}), ValidationError);
}

TEST(Model, SaveLoadRoundTrip) {
  TempDir tmp;
  Matrix x = random_matrix(30, 5, 28);
  for (std::size_t i = 0; i < 30; ++i) x(i, 4) = 2.0;
  const EncoderModel m = fit(x, random_matrix(30, 4, 29), 0.3);
  save_model(m, tmp / "model");
  const EncoderModel r = load_model(tmp / "model");
  EXPECT_EQ(r.weights, m.weights);
  EXPECT_EQ(r.lambda, m.lambda);
  EXPECT_EQ(r.feature_means, m.feature_means);
  EXPECT_EQ(r.feature_scales, m.feature_scales);
  EXPECT_EQ(r.constant_features, m.constant_features);
  EXPECT_EQ(r.response_means, m.response_means);
  const Matrix probe = random_matrix(3, 5, 30);
  EXPECT_EQ(predict(r, probe), predict(m, probe));
}
