#include <gtest/gtest.h>

#include <random>

#include "ep2/descriptor.hpp"
#include "oracles.hpp"

using ep2::DescriptorSet;
using ep2::Error;
using ep2::ErrorCode;
using ep2::Matrix;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ep2::Error thrown";
  return ErrorCode::MalformedFile;
}

TEST(Normalize, ThreeFourFive) {
  Matrix m(1, 2);
  m << 3, 4;
  const DescriptorSet d(m);
  EXPECT_DOUBLE_EQ(d.matrix()(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(d.matrix()(0, 1), 0.8);
}

TEST(Normalize, UnitRowsUnchanged) {
  const Matrix m = Matrix::Identity(2, 2);
  EXPECT_EQ(ep2::l2_normalize_rows(m).matrix(), m);
}

TEST(Normalize, RandomRowsBecomeUnit) {
  std::mt19937_64 rng(1);
  const DescriptorSet d(oracle::random_matrix(8, 16, rng, 3.0));
  for (std::size_t r = 0; r < d.rows(); ++r) EXPECT_NEAR(d.row(r).norm(), 1.0, 1e-6);
}

TEST(Normalize, ZeroRowReportsIndex) {
  Matrix m = Matrix::Ones(4, 3);
  m.row(2).setZero();
  try {
    DescriptorSet d(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroRow);
    EXPECT_EQ(e.index(), 2);
  }
}

TEST(Normalize, RejectsDegenerateShapes) {
  EXPECT_EQ(code_of([] { DescriptorSet d(Matrix::Ones(3, 1)); }), ErrorCode::BadDimension);
  EXPECT_EQ(code_of([] { DescriptorSet d(Matrix(0, 4)); }), ErrorCode::BadDimension);
  Matrix nan = Matrix::Ones(2, 2);
  nan(1, 1) = std::nan("");
  EXPECT_EQ(code_of([&] { DescriptorSet d(nan); }), ErrorCode::BadDimension);
}

TEST(Normalize, ValidatedRejectsNonUnitRows) {
  EXPECT_EQ(code_of([] { DescriptorSet::validated(Matrix::Ones(2, 2)); }),
            ErrorCode::NotUnitNorm);
  EXPECT_NO_THROW(DescriptorSet::validated(Matrix::Identity(3, 3)));
}

TEST(Gram, OrthonormalRows) {
  EXPECT_EQ(ep2::gram(Matrix::Identity(2, 2)), Matrix::Identity(2, 2));
}

TEST(Gram, DuplicatedRow) {
  Matrix m(2, 2);
  m << 1, 0, 1, 0;
  EXPECT_EQ(ep2::gram(m), Matrix::Ones(2, 2));
}

TEST(Gram, MatchesDoubleLoop) {
  std::mt19937_64 rng(2);
  const DescriptorSet d(oracle::random_matrix(5, 7, rng));
  EXPECT_LE((ep2::gram(d) - oracle::naive_gram(d.matrix())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gram, ExactlySymmetricWithUnitDiagonal) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const DescriptorSet d(oracle::random_matrix(1 + t, 2 + t % 7, rng));
    const Matrix g = ep2::gram(d);
    EXPECT_EQ(g, g.transpose());
    for (Eigen::Index i = 0; i < g.rows(); ++i) EXPECT_NEAR(g(i, i), 1.0, 1e-12);
    EXPECT_LE(g.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(GramGap, IdenticalSetsAreZero) {
  std::mt19937_64 rng(4);
  const Matrix a = oracle::random_matrix(6, 5, rng);
  EXPECT_EQ(ep2::gram_gap(a, a), 0.0);
}

TEST(GramGap, MatchesElementwiseSum) {
  std::mt19937_64 rng(5);
  const Matrix a = oracle::random_matrix(4, 8, rng);
  const Matrix b = oracle::random_matrix(4, 3, rng);
  EXPECT_NEAR(ep2::gram_gap(a, b), oracle::elementwise_gram_gap(a, b), 1e-9);
}

TEST(GramGap, SymmetricAndNonNegative) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 30; ++t) {
    const Matrix a = oracle::random_matrix(5, 3 + t % 4, rng);
    const Matrix b = oracle::random_matrix(5, 2 + t % 5, rng);
    EXPECT_GE(ep2::gram_gap(a, b), 0.0);
    EXPECT_NEAR(ep2::gram_gap(a, b), ep2::gram_gap(b, a), 1e-12);
  }
}

TEST(GramGap, RowMismatch) {
  EXPECT_EQ(code_of([] { ep2::gram_gap(Matrix::Ones(3, 2), Matrix::Ones(4, 2)); }),
            ErrorCode::RowCountMismatch);
}

TEST(Mnn, SelfMatchIsIdentity) {
  std::mt19937_64 rng(7);
  const DescriptorSet a(oracle::random_matrix(12, 16, rng));
  const auto m = ep2::mnn_match(a, a);
  ASSERT_EQ(m.size(), 12u);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m[i].a, i);
    EXPECT_EQ(m[i].b, i);
    EXPECT_NEAR(m[i].similarity, 1.0, 1e-12);
  }
}

TEST(Mnn, RecoversReversal) {
  const DescriptorSet a(Matrix::Identity(3, 3));
  const DescriptorSet b(Matrix::Identity(3, 3).colwise().reverse());
  const auto m = ep2::mnn_match(a, b);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].b, 2u);
  EXPECT_EQ(m[1].b, 1u);
  EXPECT_EQ(m[2].b, 0u);
}

TEST(Mnn, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const DescriptorSet a(oracle::random_matrix(20, 32, rng));
    const DescriptorSet b(oracle::random_matrix(25, 32, rng));
    const auto got = ep2::mnn_match(a, b);
    const auto want = oracle::mutual_argmax(a.matrix(), b.matrix());
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(static_cast<Eigen::Index>(got[i].a), want[i].a);
      EXPECT_EQ(static_cast<Eigen::Index>(got[i].b), want[i].b);
    }
  }
}

TEST(Mnn, OneToOneAndOrdered) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const DescriptorSet a(oracle::random_matrix(15, 4, rng));
    const DescriptorSet b(oracle::random_matrix(9, 4, rng));
    const auto m = ep2::mnn_match(a, b);
    EXPECT_LE(m.size(), 9u);
    std::vector<bool> used(9, false);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (i > 0) EXPECT_LT(m[i - 1].a, m[i].a);
      EXPECT_FALSE(used[m[i].b]);
      used[m[i].b] = true;
    }
  }
}

TEST(Mnn, TiesGoToLowestIndex) {
  Matrix b(2, 2);
  b << 1, 0, 1, 0;
  const auto m = ep2::mnn_match(DescriptorSet(Matrix::Identity(1, 2)), DescriptorSet(b));
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].b, 0u);
}

TEST(Mnn, DimMismatch) {
  EXPECT_EQ(code_of([] {
              ep2::mnn_match(DescriptorSet(Matrix::Ones(2, 3)), DescriptorSet(Matrix::Ones(2, 4)));
            }),
            ErrorCode::DimMismatch);
}

}  // namespace
