#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ep2/descriptor.hpp"
#include "ep2/distill.hpp"
#include "ep2/error.hpp"

// Toy distillation harness: a linear "description head" trained by plain
// gradient descent to reproduce the cosine structure of synthetic teacher
// descriptors at a lower dimension.

namespace ep2 {

namespace detail {

// Independent deterministic streams derived from (seed, purpose, index).
enum class Stream : std::uint32_t { Teacher = 1, Basis = 2, Weights = 3, Views = 4 };

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

}  // namespace detail

/// c_desc descriptors drawn uniformly on the unit sphere of R^dim.
inline DescriptorSet gen_teacher_batch(std::size_t c_desc, std::size_t dim, std::uint64_t seed) {
  if (c_desc < 2 || dim < c_desc) {
    throw Error(ErrorCode::BadDimension, "gen_teacher_batch needs 2 <= c_desc <= dim");
  }
  auto rng = detail::make_rng(seed, detail::Stream::Teacher);
  return DescriptorSet(detail::gaussian_matrix(static_cast<Eigen::Index>(c_desc),
                                               static_cast<Eigen::Index>(dim), 1.0, rng));
}

/// Keeps the first c_desc cached rows when at least c_desc of them are
/// co-visible; otherwise the mini-set is discarded (nullopt).
inline std::optional<DescriptorSet> select_top_covisible(const DescriptorSet& cached,
                                                         std::size_t covisible_count,
                                                         std::size_t c_desc) {
  if (covisible_count < c_desc) return std::nullopt;
  if (cached.rows() < c_desc || c_desc < 1) {
    throw Error(ErrorCode::BadDimension, "cache holds " + std::to_string(cached.rows()) +
                                             " rows, need " + std::to_string(c_desc));
  }
  return DescriptorSet::validated(cached.matrix().topRows(static_cast<Eigen::Index>(c_desc)));
}

/// View 0 is the input itself; views 1..N-1 add N(0, sigma^2) noise and
/// renormalize.
inline std::vector<DescriptorSet> gen_views(const DescriptorSet& inputs, std::size_t n,
                                            double sigma, std::uint64_t seed) {
  if (n < 1 || !(sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "gen_views needs N >= 1 and sigma >= 0");
  }
  std::vector<DescriptorSet> views;
  views.reserve(n);
  views.push_back(inputs);
  auto rng = detail::make_rng(seed, detail::Stream::Views);
  const auto rows = static_cast<Eigen::Index>(inputs.rows());
  const auto cols = static_cast<Eigen::Index>(inputs.dim());
  for (std::size_t v = 1; v < n; ++v) {
    if (sigma == 0.0) {
      views.push_back(inputs);
    } else {
      views.emplace_back(inputs.matrix() + detail::gaussian_matrix(rows, cols, sigma, rng));
    }
  }
  return views;
}

/// Linear projection followed by row normalization.
struct ToyStudent {
  Matrix weights;  // d_in x c_desc
};

inline DescriptorSet student_forward(const ToyStudent& student, const Matrix& inputs) {
  if (inputs.cols() != student.weights.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "student_forward: input width " +
                                              std::to_string(inputs.cols()) + " vs " +
                                              std::to_string(student.weights.rows()));
  }
  return l2_normalize_rows(inputs * student.weights);
}

/// Gradient w.r.t. the weights, given dL/dY for each view's normalized output.
/// Each row chains (I - y y^T) / ||v|| with v = x W.
inline Matrix student_backward(const ToyStudent& student, std::span<const Matrix> inputs,
                               std::span<const Matrix> upstream) {
  if (inputs.size() != upstream.size()) {
    throw Error(ErrorCode::ShapeMismatch, "student_backward: one upstream gradient per view");
  }
  const Matrix& w = student.weights;
  Matrix grad = Matrix::Zero(w.rows(), w.cols());
  for (std::size_t v = 0; v < inputs.size(); ++v) {
    const Matrix& x = inputs[v];
    const Matrix& g = upstream[v];
    if (x.cols() != w.rows() || g.rows() != x.rows() || g.cols() != w.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "student_backward: view " + std::to_string(v));
    }
    const Matrix proj = x * w;
    Matrix dproj(proj.rows(), proj.cols());
    for (Eigen::Index r = 0; r < proj.rows(); ++r) {
      const double norm = proj.row(r).norm();
      if (!(norm > kZeroRowNorm)) {
        throw Error(ErrorCode::ZeroRow, "student_backward: projected row " + std::to_string(r),
                    static_cast<std::size_t>(r));
      }
      const Eigen::RowVectorXd y = proj.row(r) / norm;
      dproj.row(r) = (g.row(r) - y.dot(g.row(r)) * y) / norm;
    }
    grad.noalias() += x.transpose() * dproj;
  }
  return grad;
}

inline Matrix student_backward(const ToyStudent& student, const Matrix& inputs,
                               const Matrix& upstream) {
  return student_backward(student, std::span<const Matrix>(&inputs, 1),
                          std::span<const Matrix>(&upstream, 1));
}

enum class Compression { Lra, Pca };

inline const char* to_string(Compression c) { return c == Compression::Lra ? "lra" : "pca"; }

struct DistillConfig {
  std::size_t c_desc = 32;
  std::size_t teacher_dim = 128;
  /// Dimension of the subspace the synthetic teachers live in; 0 means c_desc.
  /// Equal to teacher_dim gives isotropic teachers, which no fixed linear
  /// student can compress without distortion.
  std::size_t teacher_rank = 0;
  std::size_t views = 4;
  double noise_sigma = 0.05;
  std::size_t steps = 2000;
  double learning_rate = 0.05;
  LossWeights weights{};
  Compression compression = Compression::Lra;
  bool use_sim_loss = true;
  /// Draw a new teacher mini-set every step (false reuses the step-0 set).
  bool fresh_batches = true;
  std::uint64_t seed = 0;

  std::size_t effective_teacher_rank() const {
    return teacher_rank == 0 ? c_desc : teacher_rank;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
    if (c_desc < 2 || c_desc > teacher_dim) fail("c_desc must be in [2, teacher_dim]");
    const std::size_t rank = effective_teacher_rank();
    if (rank < c_desc || rank > teacher_dim) fail("teacher_rank must be in [c_desc, teacher_dim]");
    if (views < 1) fail("views must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
    if (steps < 1) fail("steps must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    weights.validate();
  }
};

struct StepRecord {
  std::size_t step = 0;
  double l_op = 0.0;
  double l_sim = 0.0;
  double total = 0.0;
  double gram_gap = 0.0;
  double mean_view_cosine = 1.0;
};

struct TrainReport {
  std::vector<StepRecord> records;
  ToyStudent student;

  const StepRecord& initial() const { return records.front(); }
  const StepRecord& final() const { return records.back(); }
};

/// Divergence is declared when the total loss exceeds this multiple of its
/// step-0 value.
inline constexpr double kDivergenceFactor = 1e3;

/// Mean over rows and views 1..N-1 of the cosine between view 0 and view k.
inline double mean_view_cosine(std::span<const DescriptorSet> outputs) {
  if (outputs.size() < 2) return 1.0;
  double sum = 0.0;
  for (std::size_t v = 1; v < outputs.size(); ++v) {
    sum += outputs[0].matrix().cwiseProduct(outputs[v].matrix()).sum();
  }
  return sum / static_cast<double>((outputs.size() - 1) * outputs[0].rows());
}

/// Everything one training step sees: the teacher mini-set, the student input
/// views and the compressed target.
struct MiniSet {
  DescriptorSet teacher;
  std::vector<DescriptorSet> views;
  Matrix target;
};

namespace detail {

inline Matrix random_orthonormal_columns(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::Basis);
  const Matrix g = gaussian_matrix(static_cast<Eigen::Index>(rows),
                                   static_cast<Eigen::Index>(cols), 1.0, rng);
  const Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
}

}  // namespace detail

/// Builds the mini-set used at `step`. Teachers are unit vectors from a
/// c_desc-point sample of the rank-r sphere embedded in R^teacher_dim by a
/// fixed (per-seed) orthonormal basis.
inline MiniSet make_mini_set(const DistillConfig& cfg, const Matrix& basis, std::size_t step) {
  const std::size_t batch = cfg.fresh_batches ? step : 0;
  const std::uint64_t batch_seed = cfg.seed * 1000003ULL + batch;
  const DescriptorSet latent = gen_teacher_batch(cfg.c_desc, cfg.effective_teacher_rank(),
                                                 batch_seed);
  DescriptorSet teacher(latent.matrix() * basis.transpose());
  std::vector<DescriptorSet> views =
      gen_views(teacher, cfg.views, cfg.noise_sigma, batch_seed ^ 0x5bd1e995ULL);
  Matrix target = cfg.compression == Compression::Lra
                      ? lra_compress(teacher, cfg.c_desc).compressed
                      : pca_compress(teacher, cfg.c_desc);
  return MiniSet{std::move(teacher), std::move(views), std::move(target)};
}

inline Matrix teacher_basis(const DistillConfig& cfg) {
  const std::size_t rank = cfg.effective_teacher_rank();
  if (rank == cfg.teacher_dim) {
    const auto n = static_cast<Eigen::Index>(rank);
    return Matrix::Identity(n, n);
  }
  return detail::random_orthonormal_columns(cfg.teacher_dim, rank, cfg.seed);
}

inline ToyStudent init_student(const DistillConfig& cfg) {
  auto rng = detail::make_rng(cfg.seed, detail::Stream::Weights);
  return ToyStudent{detail::gaussian_matrix(static_cast<Eigen::Index>(cfg.teacher_dim),
                                            static_cast<Eigen::Index>(cfg.c_desc),
                                            1.0 / std::sqrt(static_cast<double>(cfg.c_desc)),
                                            rng)};
}

/// Loss terms and the gradient w.r.t. the student weights for one mini-set,
/// with the per-view orthogonal maps solved first and then held fixed.
struct StepEvaluation {
  StepRecord record;
  std::vector<OrthogonalMap> maps;
  Matrix weight_grad;
};

inline StepEvaluation evaluate_step(const DistillConfig& cfg, const ToyStudent& student,
                                    const MiniSet& mini) {
  std::vector<Matrix> inputs;
  std::vector<DescriptorSet> outputs;
  std::vector<Matrix> out_mats;
  for (const auto& view : mini.views) {
    inputs.push_back(view.matrix());
    outputs.push_back(student_forward(student, view.matrix()));
    out_mats.push_back(outputs.back().matrix());
  }
  const std::size_t n = out_mats.size();

  OpLoss op = op_loss(mini.target, std::span<const Matrix>(out_mats));
  const bool with_sim = cfg.use_sim_loss && n >= 2;
  const double l_sim = with_sim ? sim_loss(std::span<const Matrix>(out_mats)) : 0.0;

  std::vector<Matrix> upstream;
  upstream.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    upstream.push_back(cfg.weights.op * op_loss_grad(mini.target, out_mats[i], op.maps[i], n));
  }
  if (with_sim) {
    const auto sim_grads = sim_loss_grad(std::span<const Matrix>(out_mats));
    for (std::size_t i = 0; i < n; ++i) upstream[i] += cfg.weights.sim * sim_grads[i];
  }

  StepEvaluation eval;
  eval.record.l_op = op.value;
  eval.record.l_sim = l_sim;
  eval.record.total = total_loss(op.value, l_sim, 0.0, cfg.weights);
  eval.record.gram_gap = gram_gap(outputs.front(), mini.teacher);
  eval.record.mean_view_cosine = mean_view_cosine(outputs);
  eval.maps = std::move(op.maps);
  eval.weight_grad = student_backward(student, std::span<const Matrix>(inputs),
                                      std::span<const Matrix>(upstream));
  return eval;
}

/// Plain gradient descent on w_op * L_op + w_sim * L_sim. Metrics in record t
/// are measured before the update of step t. Single-threaded and
/// deterministic for a given config.
inline TrainReport train(const DistillConfig& cfg) {
  cfg.validate();
  const Matrix basis = teacher_basis(cfg);
  TrainReport report{{}, init_student(cfg)};
  report.records.reserve(cfg.steps);

  double initial_total = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const MiniSet mini = make_mini_set(cfg, basis, step);
    StepEvaluation eval = evaluate_step(cfg, report.student, mini);
    eval.record.step = step;
    if (step == 0) initial_total = eval.record.total;
    if (!std::isfinite(eval.record.total) ||
        eval.record.total > kDivergenceFactor * initial_total) {
      throw Error(ErrorCode::DivergenceDetected,
                  "total loss " + std::to_string(eval.record.total) + " at step " +
                      std::to_string(step) + " (initial " + std::to_string(initial_total) + ")");
    }
    report.records.push_back(eval.record);
    report.student.weights -= cfg.learning_rate * eval.weight_grad;
    if (!report.student.weights.allFinite()) {
      throw Error(ErrorCode::DivergenceDetected,
                  "non-finite weights after step " + std::to_string(step));
    }
  }
  return report;
}

}  // namespace ep2
