#include <gtest/gtest.h>

#include "support.hpp"

using namespace voxelenc;
using testing_support::random_matrix;

TEST(Synth, DeterministicPerSeed) {
  const SynthData a = generate({50, 5, 7, 0.3, 11});
  const SynthData b = generate({50, 5, 7, 0.3, 11});
  const SynthData c = generate({50, 5, 7, 0.3, 12});
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.w_true, b.w_true);
  EXPECT_NE(a.x, c.x);
}

TEST(Synth, StreamOrder) {
  const SynthData d = generate({4, 3, 2, 0.0, 5});
  CounterRng rng(5);
  const Matrix x = normal_matrix(4, 3, rng);
  const Matrix w = normal_matrix(3, 2, rng, 1.0 / std::sqrt(3.0));
  EXPECT_EQ(d.x, x);
  EXPECT_EQ(d.w_true, w);
  EXPECT_EQ(d.y, kernels::multiply(x, w));
}

TEST(Synth, NoiselessFitRecoversY) {
  const SynthData d = generate({120, 15, 9, 0.0, 6});
  const EncoderModel m = fit(d.x, d.y, 1e-8, Normalization::none);
  const Matrix p = predict(m, d.x);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p.values()[i], d.y.values()[i], 1e-6);
}

TEST(Synth, ColumnMeansNearZero) {
  const SynthData d = generate({100000, 3, 1, 0.0, 8});
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.x.rows(); ++i) s += d.x(i, j);
    EXPECT_NEAR(s / 1e5, 0.0, 0.02);
  }
}

TEST(Synth, RejectsBadSpec) {
  EXPECT_THROW(generate({0, 1, 1, 0.0, 1}), ValidationError);
  EXPECT_THROW(generate({1, 1, 1, -1.0, 1}), ValidationError);
}

TEST(NaiveRidge, IdentityAndShrinkage) {
  EXPECT_EQ(naive_ridge(Matrix::identity(2), Matrix::from_rows({{2}, {4}}), 1.0),
            Matrix::from_rows({{1}, {2}}));
  const Matrix x = random_matrix(30, 8, 9);
  const Matrix y = random_matrix(30, 3, 10);
  double prev = std::numeric_limits<double>::infinity();
  for (double l : {1.0, 10.0, 100.0, 1000.0}) {
    const double n = frobenius_norm(naive_ridge(x, y, l));
    EXPECT_LT(n, prev);
    prev = n;
  }
  EXPECT_LT(prev, 0.05);
}

TEST(NaiveRidge, AgreesWithFit) {
  const Matrix x = random_matrix(30, 8, 11);
  const Matrix y = random_matrix(30, 3, 12);
  EXPECT_LT(relative_max_diff(fit(x, y, 1.0, Normalization::none).weights, naive_ridge(x, y, 1.0)),
            1e-8);
}

TEST(NaiveRidge, SingularAndGuard) {
  Matrix x(4, 2, 0.0);
  for (std::size_t i = 0; i < 4; ++i) x(i, 0) = x(i, 1) = static_cast<double>(i);
  EXPECT_THROW(naive_ridge(x, Matrix(4, 1, 1.0), 0.0), ValidationError);
  EXPECT_THROW(naive_ridge(Matrix(2, kNaiveRidgeLimit + 1), Matrix(2, 1), 1.0), ValidationError);
}

TEST(NaiveTwoVTwo, IdenticalRowsTieLikeFastPath) {
  const Matrix y = Matrix::from_rows({{1, 2}, {1, 2}, {2, 1}});
  const Matrix h = Matrix::from_rows({{1, 2}, {1, 2}, {2, 1}});
  EXPECT_EQ(naive_two_v_two(y, h), two_v_two(y, h));
  EXPECT_NEAR(naive_two_v_two(y, h), 2.0 / 3.0, 1e-15);
}
