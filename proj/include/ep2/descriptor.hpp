#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ep2/error.hpp"

namespace ep2 {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rows below this norm are treated as zero vectors and cannot be normalized.
inline constexpr double kZeroRowNorm = 1e-12;
/// Tolerance on row norms accepted by DescriptorSet::validated.
inline constexpr double kUnitNormTolerance = 1e-6;

/// A rows x dim matrix whose rows are unit-L2 embedding vectors.
///
/// The default constructor path normalizes. Use `validated` for data that is
/// expected to already be normalized (e.g. read back from a file); it rejects
/// rows whose norm is off by more than `kUnitNormTolerance` and keeps the
/// stored values untouched.
class DescriptorSet {
 public:
  /// Normalizes every row. Throws ZeroRow / BadDimension.
  explicit DescriptorSet(Matrix data) : data_(std::move(data)) {
    check_shape(data_);
    for (Eigen::Index r = 0; r < data_.rows(); ++r) {
      const double norm = data_.row(r).norm();
      if (!(norm > kZeroRowNorm)) {
        throw Error(ErrorCode::ZeroRow, "row " + std::to_string(r) + " has zero norm",
                    static_cast<std::size_t>(r));
      }
      data_.row(r) /= norm;
    }
  }

  static DescriptorSet validated(Matrix data, double tolerance = kUnitNormTolerance) {
    check_shape(data);
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      const double norm = data.row(r).norm();
      if (!std::isfinite(norm) || std::abs(norm - 1.0) > tolerance) {
        throw Error(ErrorCode::NotUnitNorm,
                    "row " + std::to_string(r) + " has norm " + std::to_string(norm),
                    static_cast<std::size_t>(r));
      }
    }
    return DescriptorSet(std::move(data), Trusted{});
  }

  const Matrix& matrix() const noexcept { return data_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  auto row(std::size_t i) const { return data_.row(static_cast<Eigen::Index>(i)); }

 private:
  struct Trusted {};
  DescriptorSet(Matrix data, Trusted) : data_(std::move(data)) {}

  static void check_shape(const Matrix& m) {
    if (m.rows() < 1 || m.cols() < 2) {
      throw Error(ErrorCode::BadDimension,
                  "descriptor set needs rows >= 1 and dim >= 2, got " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    if (!m.allFinite()) {
      throw Error(ErrorCode::BadDimension, "descriptor set contains non-finite values");
    }
  }

  Matrix data_;
};

inline DescriptorSet l2_normalize_rows(Matrix m) { return DescriptorSet(std::move(m)); }

/// M * M^T, made exactly symmetric by mirroring the upper triangle.
inline Matrix gram(const Matrix& m) {
  Matrix g = m * m.transpose();
  g.triangularView<Eigen::StrictlyLower>() = g.transpose();
  return g;
}

inline Matrix gram(const DescriptorSet& d) { return gram(d.matrix()); }

/// Squared Frobenius distance between the Gram matrices of two row sets.
/// Dimensions may differ; row counts must agree.
inline double gram_gap(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::RowCountMismatch, "gram_gap needs equal row counts, got " +
                                                 std::to_string(a.rows()) + " and " +
                                                 std::to_string(b.rows()));
  }
  return (gram(a) - gram(b)).squaredNorm();
}

inline double gram_gap(const DescriptorSet& a, const DescriptorSet& b) {
  return gram_gap(a.matrix(), b.matrix());
}

struct Match {
  std::size_t a = 0;
  std::size_t b = 0;
  double similarity = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

/// One-to-one matches, ordered by index into A.
using MatchList = std::vector<Match>;

/// Mutual nearest neighbours under cosine similarity. No similarity threshold
/// is applied; argmax ties resolve to the lowest index.
inline MatchList mnn_match(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::DimMismatch, "mnn_match needs equal dims, got " +
                                            std::to_string(a.dim()) + " and " +
                                            std::to_string(b.dim()));
  }
  const Matrix sim = a.matrix() * b.matrix().transpose();
  const Eigen::Index na = sim.rows();
  const Eigen::Index nb = sim.cols();

  std::vector<Eigen::Index> best_for_a(static_cast<std::size_t>(na), 0);
  std::vector<Eigen::Index> best_for_b(static_cast<std::size_t>(nb), 0);
  for (Eigen::Index i = 0; i < na; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < nb; ++j) {
      if (sim(i, j) > sim(i, best)) best = j;
    }
    best_for_a[static_cast<std::size_t>(i)] = best;
  }
  for (Eigen::Index j = 0; j < nb; ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < na; ++i) {
      if (sim(i, j) > sim(best, j)) best = i;
    }
    best_for_b[static_cast<std::size_t>(j)] = best;
  }

  MatchList out;
  for (Eigen::Index i = 0; i < na; ++i) {
    const Eigen::Index j = best_for_a[static_cast<std::size_t>(i)];
    if (best_for_b[static_cast<std::size_t>(j)] == i) {
      out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), sim(i, j)});
    }
  }
  return out;
}

}  // namespace ep2
