#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "ep2/descriptor.hpp"
#include "ep2/error.hpp"

namespace ep2 {

/// Tolerance on ||Q Q^T - I||_F for OrthogonalMap.
inline constexpr double kOrthogonalityTolerance = 1e-6;

/// A square orthogonal matrix.
class OrthogonalMap {
 public:
  explicit OrthogonalMap(Matrix q) : q_(std::move(q)) {
    if (q_.rows() != q_.cols() || q_.rows() < 1) {
      throw Error(ErrorCode::ShapeMismatch, "orthogonal map must be square");
    }
    const double defect =
        (q_ * q_.transpose() - Matrix::Identity(q_.rows(), q_.cols())).norm();
    if (!(defect <= kOrthogonalityTolerance)) {
      throw Error(ErrorCode::NotOrthogonal,
                  "||Q Q^T - I||_F = " + std::to_string(defect));
    }
  }

  static OrthogonalMap identity(std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    return OrthogonalMap(Matrix::Identity(n, n));
  }

  const Matrix& matrix() const noexcept { return q_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(q_.rows()); }

 private:
  Matrix q_;
};

namespace detail {

// Flip singular vector pairs so the largest-magnitude entry of each column of
// `lead` is positive. `follow` gets the same flips (may be null).
inline void fix_svd_signs(Matrix& lead, Matrix* follow) {
  for (Eigen::Index c = 0; c < lead.cols(); ++c) {
    Eigen::Index arg = 0;
    lead.col(c).cwiseAbs().maxCoeff(&arg);
    if (lead(arg, c) < 0.0) {
      lead.col(c) *= -1.0;
      if (follow != nullptr && c < follow->cols()) follow->col(c) *= -1.0;
    }
  }
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
}

inline std::vector<Matrix> matrices_of(std::span<const DescriptorSet> sets) {
  std::vector<Matrix> out;
  out.reserve(sets.size());
  for (const auto& s : sets) out.push_back(s.matrix());
  return out;
}

}  // namespace detail

/// Teacher descriptors compressed to C_desc columns by truncated SVD.
///
/// `compressed` rows are not renormalized: when the teacher has more rows than
/// C_desc the compression is lossy and row norms fall below 1.
struct CompressedTeacher {
  Matrix compressed;
  /// Nonincreasing; padded with zeros when the teacher rank is below C_desc.
  Vector singular_values;
};

/// Low-rank compression: column i of the result is sigma_i * u_i from the SVD
/// of the teacher. Lossless in the Gram sense whenever rows <= c_desc.
inline CompressedTeacher lra_compress(const DescriptorSet& teacher, std::size_t c_desc) {
  if (c_desc < 2 || c_desc > teacher.dim()) {
    throw Error(ErrorCode::BadDimension, "lra_compress: c_desc " + std::to_string(c_desc) +
                                             " outside [2, " +
                                             std::to_string(teacher.dim()) + "]");
  }
  const Eigen::BDCSVD<Matrix> svd(teacher.matrix(), Eigen::ComputeThinU);
  Matrix u = svd.matrixU();
  detail::fix_svd_signs(u, nullptr);
  const Vector& sigma = svd.singularValues();

  const auto rows = static_cast<Eigen::Index>(teacher.rows());
  const auto cols = static_cast<Eigen::Index>(c_desc);
  const Eigen::Index kept = std::min<Eigen::Index>(cols, sigma.size());

  CompressedTeacher out{Matrix::Zero(rows, cols), Vector::Zero(cols)};
  for (Eigen::Index i = 0; i < kept; ++i) {
    out.compressed.col(i) = sigma(i) * u.col(i);
    out.singular_values(i) = sigma(i);
  }
  return out;
}

/// Mean-centred projection onto the top c_desc principal directions.
inline Matrix pca_compress(const DescriptorSet& teacher, std::size_t c_desc) {
  if (teacher.rows() < 2 || c_desc < 1 || c_desc > teacher.dim()) {
    throw Error(ErrorCode::BadDimension,
                "pca_compress needs rows >= 2 and 1 <= c_desc <= dim");
  }
  const Matrix& d = teacher.matrix();
  const Matrix centered = d.rowwise() - d.colwise().mean();
  const Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  Matrix v = svd.matrixV();
  detail::fix_svd_signs(v, nullptr);

  const auto cols = static_cast<Eigen::Index>(c_desc);
  const Eigen::Index kept = std::min<Eigen::Index>(cols, v.cols());
  Matrix projection = Matrix::Zero(d.cols(), cols);
  projection.leftCols(kept) = v.leftCols(kept);
  return centered * projection;
}

/// Closed-form orthogonal Procrustes: argmin over orthogonal X of
/// ||target * X - source||_F^2, i.e. V U^T for U S V^T = svd(source^T target).
inline OrthogonalMap procrustes_solve(const Matrix& target, const Matrix& source) {
  detail::require_same_shape(target, source, "procrustes_solve");
  const Matrix cross = source.transpose() * target;
  if (!cross.allFinite()) {
    throw Error(ErrorCode::SvdFailure, "procrustes_solve: non-finite cross product");
  }
  const Eigen::BDCSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix q = svd.matrixV() * svd.matrixU().transpose();
  if (!q.allFinite()) {
    throw Error(ErrorCode::SvdFailure, "procrustes_solve: SVD produced non-finite factors");
  }
  return OrthogonalMap(std::move(q));
}

inline OrthogonalMap procrustes_solve(const Matrix& target, const DescriptorSet& source) {
  return procrustes_solve(target, source.matrix());
}

/// ||target * q - source||_F^2
inline double procrustes_residual(const Matrix& target, const Matrix& source,
                                  const OrthogonalMap& q) {
  detail::require_same_shape(target, source, "procrustes_residual");
  return (target * q.matrix() - source).squaredNorm();
}

struct OpLoss {
  double value = 0.0;
  std::vector<OrthogonalMap> maps;
};

/// Procrustes loss averaged over views, with each view's map solved in
/// closed form.
inline OpLoss op_loss(const Matrix& target, std::span<const Matrix> students) {
  if (students.empty()) {
    throw Error(ErrorCode::BadDimension, "op_loss needs at least one student view");
  }
  OpLoss out;
  out.maps.reserve(students.size());
  double sum = 0.0;
  for (const auto& s : students) {
    out.maps.push_back(procrustes_solve(target, s));
    sum += procrustes_residual(target, s, out.maps.back());
  }
  out.value = sum / static_cast<double>(students.size());
  return out;
}

inline OpLoss op_loss(const Matrix& target, std::span<const DescriptorSet> students) {
  const auto mats = detail::matrices_of(students);
  return op_loss(target, std::span<const Matrix>(mats));
}

/// Gradient of (1/N)||target * q - student||^2 w.r.t. student with q frozen.
inline Matrix op_loss_grad(const Matrix& target, const Matrix& student,
                           const OrthogonalMap& q, std::size_t view_count) {
  detail::require_same_shape(target, student, "op_loss_grad");
  if (q.dim() != static_cast<std::size_t>(target.cols())) {
    throw Error(ErrorCode::ShapeMismatch, "op_loss_grad: map size does not match columns");
  }
  if (view_count < 1) {
    throw Error(ErrorCode::BadDimension, "op_loss_grad: view_count must be >= 1");
  }
  return (2.0 / static_cast<double>(view_count)) * (student - target * q.matrix());
}

inline Matrix op_loss_grad(const Matrix& target, const DescriptorSet& student,
                           const OrthogonalMap& q, std::size_t view_count) {
  return op_loss_grad(target, student.matrix(), q, view_count);
}

namespace detail {

inline void check_views(std::span<const Matrix> views, const char* what) {
  if (views.size() < 2) {
    throw Error(ErrorCode::NeedTwoViews, std::string(what) + " needs N >= 2 views");
  }
  for (const auto& v : views) require_same_shape(views.front(), v, what);
}

}  // namespace detail

/// Pairwise view consistency: sum over i < j of ||D_i - D_j||^2 divided by
/// N(N-1). The divisor is N(N-1) even though only unordered pairs are summed.
inline double sim_loss(std::span<const Matrix> views) {
  detail::check_views(views, "sim_loss");
  const std::size_t n = views.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sum += (views[i] - views[j]).squaredNorm();
  }
  return sum / static_cast<double>(n * (n - 1));
}

inline double sim_loss(std::span<const DescriptorSet> views) {
  const auto mats = detail::matrices_of(views);
  return sim_loss(std::span<const Matrix>(mats));
}

inline std::vector<Matrix> sim_loss_grad(std::span<const Matrix> views) {
  detail::check_views(views, "sim_loss_grad");
  const std::size_t n = views.size();
  const double scale = 2.0 / static_cast<double>(n * (n - 1));

  // sum_{j != i} (D_i - D_j) = N * D_i - sum_j D_j
  Matrix total = Matrix::Zero(views.front().rows(), views.front().cols());
  for (const auto& v : views) total += v;
  std::vector<Matrix> grads;
  grads.reserve(n);
  for (const auto& v : views) {
    grads.push_back(scale * (static_cast<double>(n) * v - total));
  }
  return grads;
}

inline std::vector<Matrix> sim_loss_grad(std::span<const DescriptorSet> views) {
  const auto mats = detail::matrices_of(views);
  return sim_loss_grad(std::span<const Matrix>(mats));
}

struct LossWeights {
  double op = 0.5;
  double sim = 0.1;
  double detect = 1.0;

  void validate() const {
    if (!(op >= 0.0) || !(sim >= 0.0) || !(detect >= 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "loss weights must be nonnegative");
    }
  }
};

inline double total_loss(double l_op, double l_sim, double l_detect, const LossWeights& w) {
  return w.op * l_op + w.sim * l_sim + w.detect * l_detect;
}

}  // namespace ep2
