#include <gtest/gtest.h>

#include "infosculpt/errors.hpp"
#include "infosculpt/matrix.hpp"

using namespace infosculpt;

TEST(Matrix, FromRowsAndShape) {
  const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.shape_string(), "2x3");
}

TEST(Matrix, RaggedRowsRejected) { EXPECT_THROW(Matrix::from_rows({{1, 2}, {3}}), DimensionError); }

TEST(Matrix, MatmulVariantsAgree) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Matrix b = Matrix::from_rows({{1, 0, -1}, {2, 1, 0}});
  const Matrix ab = matmul(a, b);
  EXPECT_EQ(ab, Matrix::from_rows({{5, 2, -1}, {11, 4, -3}, {17, 6, -5}}));
  EXPECT_EQ(matmul_nt(a, transpose(b)), ab);
  EXPECT_EQ(matmul_tn(transpose(a), b), ab);
  EXPECT_THROW(matmul(a, a), DimensionError);
}

TEST(Matrix, Reductions) {
  const Matrix m = Matrix::from_rows({{1, -7}, {2, 3}});
  EXPECT_EQ(sum(m), -1.0);
  EXPECT_EQ(max_abs(m), 7.0);
  EXPECT_TRUE(m.all_finite());
}

TEST(Matrix, IdentityTimesAnything) {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
}
