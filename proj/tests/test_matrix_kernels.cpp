#include <gtest/gtest.h>

#include "support.hpp"

using namespace voxelenc;
using testing_support::random_matrix;

namespace {

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Matrix, FromRowsAndAccess) {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.row(1)[0], 4.0);
  EXPECT_THROW(Matrix::from_rows({{1, 2}, {3}}), ValidationError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ValidationError);
}

TEST(Matrix, SelectRowsColBlockTranspose) {
  const Matrix m = random_matrix(37, 45, 1);
  const std::vector<std::size_t> idx{5, 0, 36};
  const Matrix s = m.select_rows(idx);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) EXPECT_EQ(s(r, c), m(idx[r], c));
  const Matrix b = m.col_block(10, 7);
  EXPECT_EQ(b.cols(), 7u);
  EXPECT_EQ(b(3, 2), m(3, 12));
  const Matrix t = m.transposed();
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) EXPECT_EQ(t(c, r), m(r, c));
  EXPECT_EQ(t.transposed(), m);
  const std::vector<std::size_t> bad{37};
  EXPECT_THROW(m.select_rows(bad), ValidationError);
  EXPECT_THROW(m.col_block(40, 6), ValidationError);
}

TEST(Matrix, RelativeMaxDiff) {
  const Matrix a = Matrix::from_rows({{1, 2}});
  const Matrix b = Matrix::from_rows({{1, 4}});
  EXPECT_DOUBLE_EQ(relative_max_diff(a, b), 0.5);
  EXPECT_EQ(relative_max_diff(a, a), 0.0);
}

class KernelShapes : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(KernelShapes, MultiplyMatchesNaiveBitwise) {
  const auto [m, k, n] = GetParam();
  const Matrix a = random_matrix(m, k, 10 + m);
  const Matrix b = random_matrix(k, n, 20 + n);
  EXPECT_EQ(kernels::multiply(a, b), naive_product(a, b));
  EXPECT_EQ(kernels::multiply_abt(a, b.transposed()), naive_product(a, b));
  EXPECT_EQ(kernels::multiply_atb(a.transposed(), b), naive_product(a, b));
}

TEST_P(KernelShapes, SyrkIsSymmetricAndExact) {
  const auto [m, k, n] = GetParam();
  (void)n;
  const Matrix a = random_matrix(m, k, 30 + k);
  const Matrix g = kernels::syrk(a);
  const Matrix ref = naive_product(a, a.transposed());
  EXPECT_EQ(g, ref);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) EXPECT_EQ(g(i, j), g(j, i));
  EXPECT_EQ(kernels::gram(a), naive_product(a.transposed(), a));
}

INSTANTIATE_TEST_SUITE_P(Shapes, KernelShapes,
                         ::testing::Values(std::make_tuple(1, 1, 1), std::make_tuple(3, 5, 2),
                                           std::make_tuple(4, 8, 8), std::make_tuple(17, 300, 9),
                                           std::make_tuple(70, 33, 130),
                                           std::make_tuple(129, 513, 67)));

TEST(Kernels, ThreadCountDoesNotChangeBits) {
  const Matrix a = random_matrix(300, 120, 5);
  const Matrix b = random_matrix(120, 90, 6);
  set_threads(1);
  const Matrix one = kernels::multiply(a, b);
  set_threads(4);
  const Matrix four = kernels::multiply(a, b);
  set_threads(0);
  EXPECT_EQ(one, four);
}

TEST(Kernels, ShapeMismatchThrows) {
  EXPECT_THROW(kernels::multiply(Matrix(2, 3), Matrix(2, 3)), ValidationError);
}
