#include <gtest/gtest.h>

#include "support.hpp"

using namespace voxelenc;
using testing_support::random_matrix;
using testing_support::read_file;
using testing_support::TempDir;

TEST(TwoVTwo, PerfectPredictionIsOne) {
  const Matrix y = random_matrix(30, 8, 1);
  EXPECT_EQ(two_v_two(y, y), 1.0);
}

TEST(TwoVTwo, ReversedPairIsZero) {
  const Matrix y = Matrix::from_rows({{1, 0, 2}, {0, 3, 1}});
  const Matrix rev = Matrix::from_rows({{0, 3, 1}, {1, 0, 2}});
  EXPECT_EQ(two_v_two(y, rev), 0.0);
}

TEST(TwoVTwo, ThreeRowExampleMatchesNaive) {
  const Matrix y = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const Matrix h = Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}});
  const TwoVTwoCount c = two_v_two_count(y, h);
  EXPECT_EQ(c.pairs, 3u);
  EXPECT_EQ(c.accuracy(), naive_two_v_two(y, h));
}

TEST(TwoVTwo, HandExpandedSinglePair) {
  // Y = [[1,0],[0,1]], Yh = [[1,1],[0,1]]:
  // matched: cosD(y0,h0) = 1 - 1/sqrt2, cosD(y1,h1) = 0
  // swapped: cosD(y0,h1) = 1, cosD(y1,h0) = 1 - 1/sqrt2  -> pass
  const Matrix y = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix h = Matrix::from_rows({{1, 1}, {0, 1}});
  EXPECT_EQ(two_v_two(y, h), 1.0);
  EXPECT_EQ(naive_two_v_two(y, h), 1.0);
}

TEST(TwoVTwo, TiesFail) {
  const Matrix y = Matrix::from_rows({{1, 2}, {3, 1}, {2, 2}});
  const Matrix h = Matrix::from_rows({{1, 1}, {1, 1}, {1, 1}});
  EXPECT_EQ(two_v_two(y, h), 0.0);
  EXPECT_EQ(naive_two_v_two(y, h), 0.0);
}

TEST(TwoVTwo, RandomInstancesMatchNaiveExactly) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Matrix y = random_matrix(32, 16, 1000 + s);
    const Matrix h = random_matrix(32, 16, 2000 + s);
    ASSERT_EQ(two_v_two(y, h), naive_two_v_two(y, h)) << s;
  }
}

TEST(TwoVTwo, LargerThanOneBlockMatchesNaive) {
  const Matrix y = random_matrix(150, 20, 3);
  Matrix h = y;
  CounterRng rng(4);
  for (double& v : h.values()) v += 1.5 * rng.normal();
  set_threads(3);
  const double fast = two_v_two(y, h);
  set_threads(0);
  EXPECT_EQ(fast, naive_two_v_two(y, h));
  EXPECT_GT(fast, 0.6);
}

TEST(TwoVTwo, ScaleInvariance) {
  const Matrix y = random_matrix(40, 10, 5);
  const Matrix h = random_matrix(40, 10, 6);
  Matrix ys = y, hs = h;
  for (double& v : ys.values()) v *= 4.0;
  for (double& v : hs.values()) v *= 4.0;
  EXPECT_EQ(two_v_two(ys, hs), two_v_two(y, h));
}

TEST(TwoVTwo, ZeroNormRows) {
  Matrix y = random_matrix(5, 3, 7);
  Matrix h = random_matrix(5, 3, 8);
  for (double& v : h.row(2)) v = 0.0;
  EXPECT_THROW(two_v_two(y, h), ValidationError);
  EXPECT_THROW(naive_two_v_two(y, h), ValidationError);
  EXPECT_EQ(two_v_two(y, h, {true}), naive_two_v_two(y, h, true));
}

TEST(TwoVTwo, Preconditions) {
  EXPECT_THROW(two_v_two(Matrix(1, 3, 1.0), Matrix(1, 3, 1.0)), ValidationError);
  EXPECT_THROW(two_v_two(Matrix(3, 3, 1.0), Matrix(3, 2, 1.0)), ValidationError);
  EXPECT_THROW(naive_two_v_two(Matrix(kNaiveTwoVTwoLimit + 1, 1, 1.0),
                               Matrix(kNaiveTwoVTwoLimit + 1, 1, 1.0)),
               ValidationError);
}

TEST(Pearson, PerfectAndAnti) {
  const Matrix y = Matrix::from_rows({{1, 2, 3}, {1, 2, 3}});
  EXPECT_EQ(pearson_mean(y, Matrix::from_rows({{2, 4, 6}, {2, 4, 6}})).mean, 1.0);
  EXPECT_EQ(pearson_mean(y, Matrix::from_rows({{3, 2, 1}, {3, 2, 1}})).mean, -1.0);
}

TEST(Pearson, HandValue) {
  const PearsonResult r = pearson_mean(Matrix::from_rows({{1, 2, 4}}), Matrix::from_rows({{1, 3, 3}}));
  // cov = 2/3... by hand: dy = (-4/3, -1/3, 5/3), dh = (-4/3, 2/3, 2/3)
  // sum dy*dh = 16/9 - 2/9 + 10/9 = 24/9; |dy|^2 = 42/9; |dh|^2 = 24/9
  EXPECT_NEAR(r.mean, (24.0 / 9.0) / std::sqrt(42.0 / 9.0 * 24.0 / 9.0), 1e-15);
  EXPECT_NEAR(r.mean, 0.7559289460184544, 1e-12);
}

TEST(Pearson, DegenerateRowsCountButKeepDivisor) {
  const Matrix y = Matrix::from_rows({{1, 2, 3}, {1, 1, 1}});
  const Matrix h = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  const PearsonResult r = pearson_mean(y, h);
  EXPECT_EQ(r.degenerate, 1u);
  EXPECT_EQ(r.mean, 0.5);
}

TEST(Pearson, AffineInvariancePerSample) {
  const Matrix y = random_matrix(20, 15, 9);
  const Matrix h = random_matrix(20, 15, 10);
  Matrix t = h;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (double& v : t.row(i)) v = (1.0 + static_cast<double>(i)) * v + 3.0 * static_cast<double>(i);
  EXPECT_NEAR(pearson_mean(y, t).mean, pearson_mean(y, h).mean, 1e-12);
}

TEST(Pearson, NeedsTwoVoxels) {
  EXPECT_THROW(pearson_mean(Matrix(3, 1, 1.0), Matrix(3, 1, 1.0)), ValidationError);
}

TEST(Pearson, VoxelwiseIsTransposedPerSample) {
  const Matrix y = random_matrix(12, 9, 11);
  const Matrix h = random_matrix(12, 9, 12);
  EXPECT_EQ(pearson_voxelwise(y, h).mean, pearson_mean(y.transposed(), h.transposed()).mean);
}

TEST(Mae, Examples) {
  EXPECT_EQ(mae(Matrix::from_rows({{0}, {2}}), Matrix::from_rows({{1}, {1}})),
            std::vector<double>{1.0});
  const Matrix y = random_matrix(20, 7, 13);
  EXPECT_EQ(mae(y, y), std::vector<double>(7, 0.0));
}

TEST(Mae, MatchesLoopOracleAndPermutes) {
  const Matrix y = random_matrix(20, 7, 14);
  const Matrix h = random_matrix(20, 7, 15);
  const auto m = mae(y, h);
  for (std::size_t v = 0; v < 7; ++v) {
    double s = 0.0;
    for (std::size_t i = 0; i < 20; ++i) s += std::abs(y(i, v) - h(i, v));
    EXPECT_EQ(m[v], s / 20.0);
  }
  const Matrix yt = y.transposed(), ht = h.transposed();
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  const auto mp = mae(yt.select_rows(perm).transposed(), ht.select_rows(perm).transposed());
  for (std::size_t v = 0; v < 7; ++v) EXPECT_EQ(mp[v], m[perm[v]]);
}

TEST(Evaluate, PerfectPredictionFixedPoint) {
  const Matrix y = random_matrix(25, 6, 16);
  const EvalResult r = evaluate(y, y);
  EXPECT_EQ(r.two_v_two, 1.0);
  EXPECT_EQ(r.pearson, 1.0);
  EXPECT_EQ(r.mean_mae(), 0.0);
  EXPECT_EQ(r.degenerate_sample_count, 0u);
  EXPECT_EQ(r.n_samples, 25u);
}

TEST(Evaluate, JsonAndCsv) {
  TempDir tmp;
  const EvalResult r = evaluate(Matrix::from_rows({{0, 1}, {2, 3}, {1, 0}}),
                                Matrix::from_rows({{1, 1}, {1, 3}, {1, 1}}));
  const auto j = to_json(r);
  EXPECT_EQ(j["mae_per_voxel"].size(), 2u);
  EXPECT_FALSE(to_json(r, false).contains("mae_per_voxel"));
  write_mae_csv(r.mae_per_voxel, tmp / "mae.csv", 10);
  EXPECT_EQ(read_file(tmp / "mae.csv"), "voxel,mae\n10,0.6666666666666666\n11,0.3333333333333333\n");
}
