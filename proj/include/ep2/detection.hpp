#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ep2/descriptor.hpp"
#include "ep2/error.hpp"

namespace ep2 {

/// Single-channel H x W grid of finite reals (logits, score maps, descriptor
/// map channels). Stored with rows = y and cols = x.
class Raster {
 public:
  Raster(std::size_t height, std::size_t width, double fill = 0.0)
      : Raster(Matrix::Constant(static_cast<Eigen::Index>(height),
                                static_cast<Eigen::Index>(width), fill)) {}

  explicit Raster(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1) {
      throw Error(ErrorCode::BadDimension, "raster must be at least 1x1");
    }
    if (!values_.allFinite()) {
      throw Error(ErrorCode::BadDimension, "raster contains non-finite values");
    }
  }

  std::size_t height() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t width() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(std::size_t y, std::size_t x) const {
    return values_(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
  }

 private:
  Matrix values_;
};

using ByteGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// H x W grid of {0, 1} keypoint labels.
class BinaryHeatmap {
 public:
  BinaryHeatmap(std::size_t height, std::size_t width)
      : cells_(ByteGrid::Zero(static_cast<Eigen::Index>(height),
                              static_cast<Eigen::Index>(width))) {
    if (height < 1 || width < 1) {
      throw Error(ErrorCode::BadDimension, "heatmap must be at least 1x1");
    }
  }

  explicit BinaryHeatmap(ByteGrid cells) : cells_(std::move(cells)) {
    if (cells_.rows() < 1 || cells_.cols() < 1) {
      throw Error(ErrorCode::BadDimension, "heatmap must be at least 1x1");
    }
    for (Eigen::Index i = 0; i < cells_.size(); ++i) {
      if (cells_.data()[i] > 1) {
        throw Error(ErrorCode::BadDimension, "heatmap cells must be 0 or 1");
      }
    }
  }

  std::size_t height() const noexcept { return static_cast<std::size_t>(cells_.rows()); }
  std::size_t width() const noexcept { return static_cast<std::size_t>(cells_.cols()); }
  const ByteGrid& cells() const noexcept { return cells_; }

  bool at(std::size_t y, std::size_t x) const {
    return cells_(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) != 0;
  }
  void set(std::size_t y, std::size_t x, bool on = true) {
    cells_(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = on ? 1 : 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < cells_.size(); ++i) n += cells_.data()[i];
    return n;
  }

  friend bool operator==(const BinaryHeatmap& a, const BinaryHeatmap& b) {
    return a.cells_.rows() == b.cells_.rows() && a.cells_.cols() == b.cells_.cols() &&
           a.cells_ == b.cells_;
  }

 private:
  ByteGrid cells_;
};

struct Keypoint {
  double x = 0.0;  // column
  double y = 0.0;  // row
  double score = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

using KeypointList = std::vector<Keypoint>;

/// Logits above this make exp() in the literal two-convolution loss unsafe.
inline constexpr double kMaxFastLogit = 80.0;

namespace detail {

/// Pairwise (tree) summation; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Mean taken around the first element; exact when all values are equal.
inline double shifted_mean(std::span<const double> v) {
  const double ref = v.front();
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = v[i] - ref;
  return ref + pairwise_sum(dev) / static_cast<double>(v.size());
}

inline void check_loss_inputs(const Raster& logits, const BinaryHeatmap& target,
                              std::size_t k) {
  if (logits.height() != target.height() || logits.width() != target.width()) {
    throw Error(ErrorCode::ShapeMismatch, "logits and target differ in shape");
  }
  if (k < 1 || k % 2 == 0) {
    throw Error(ErrorCode::BadDimension, "kernel size must be odd and >= 1");
  }
  if (k > std::min(logits.height(), logits.width())) {
    throw Error(ErrorCode::KernelTooLarge,
                "kernel " + std::to_string(k) + " exceeds raster " +
                    std::to_string(logits.height()) + "x" + std::to_string(logits.width()));
  }
}

/// Valid-only cross-correlation with a k x k kernel of ones.
inline Matrix box_correlate_valid(const Matrix& in, Eigen::Index k) {
  Matrix out(in.rows() - k + 1, in.cols() - k + 1);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      double s = 0.0;
      for (Eigen::Index dr = 0; dr < k; ++dr) {
        for (Eigen::Index dc = 0; dc < k; ++dc) s += in(r + dr, c + dc);
      }
      out(r, c) = s;
    }
  }
  return out;
}

// log(sum_{i in patch} exp(x_i) + 1), shifted for stability.
inline double patch_log_partition(const Matrix& x, Eigen::Index r, Eigen::Index c,
                                  Eigen::Index k) {
  const double shift = std::max(0.0, x.block(r, c, k, k).maxCoeff());
  double s = std::exp(-shift);
  for (Eigen::Index dr = 0; dr < k; ++dr) {
    for (Eigen::Index dc = 0; dc < k; ++dc) s += std::exp(x(r + dr, c + dc) - shift);
  }
  return shift + std::log(s);
}

}  // namespace detail

/// Patch-wise softmax detection loss with a zero "no keypoint" logit appended
/// to every k x k patch; mean over all valid (unpadded) patch positions.
inline double unfold_softmax_naive(const Raster& logits, const BinaryHeatmap& target,
                                   std::size_t k) {
  detail::check_loss_inputs(logits, target, k);
  const Matrix& x = logits.values();
  const auto kk = static_cast<Eigen::Index>(k);
  const Eigen::Index ph = x.rows() - kk + 1;
  const Eigen::Index pw = x.cols() - kk + 1;

  std::vector<double> per_patch;
  per_patch.reserve(static_cast<std::size_t>(ph * pw));
  for (Eigen::Index r = 0; r < ph; ++r) {
    for (Eigen::Index c = 0; c < pw; ++c) {
      double selected = 0.0;
      for (Eigen::Index dr = 0; dr < kk; ++dr) {
        for (Eigen::Index dc = 0; dc < kk; ++dc) {
          if (target.cells()(r + dr, c + dc) != 0) selected += x(r + dr, c + dc);
        }
      }
      per_patch.push_back(-(selected - detail::patch_log_partition(x, r, c, kk)));
    }
  }
  return detail::shifted_mean(per_patch);
}

/// The same loss computed as two box correlations (sum of selected logits and
/// sum of exponentials). Reproduces the unshifted formulation, so logits above
/// kMaxFastLogit are rejected with NumericOverflow.
inline double unfold_softmax_fast(const Raster& logits, const BinaryHeatmap& target,
                                  std::size_t k) {
  detail::check_loss_inputs(logits, target, k);
  const Matrix& x = logits.values();
  if (x.maxCoeff() > kMaxFastLogit) {
    throw Error(ErrorCode::NumericOverflow,
                "logit " + std::to_string(x.maxCoeff()) + " exceeds " +
                    std::to_string(kMaxFastLogit) + " in the two-convolution loss");
  }
  const auto kk = static_cast<Eigen::Index>(k);
  const Matrix masked = x.cwiseProduct(target.cells().cast<double>());
  const Matrix l1 = detail::box_correlate_valid(masked, kk);
  const Matrix l2 = (detail::box_correlate_valid(x.array().exp().matrix(), kk).array() + 1.0)
                        .matrix();
  if (!l2.allFinite()) {
    throw Error(ErrorCode::NumericOverflow, "exp overflow in the two-convolution loss");
  }

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(l1.size()));
  for (Eigen::Index r = 0; r < l1.rows(); ++r) {
    for (Eigen::Index c = 0; c < l1.cols(); ++c) terms.push_back(l1(r, c) - std::log(l2(r, c)));
  }
  return -detail::shifted_mean(terms);
}

/// d(loss)/d(logits) of unfold_softmax_naive.
inline Raster unfold_softmax_grad(const Raster& logits, const BinaryHeatmap& target,
                                  std::size_t k) {
  detail::check_loss_inputs(logits, target, k);
  const Matrix& x = logits.values();
  const auto kk = static_cast<Eigen::Index>(k);
  const Eigen::Index ph = x.rows() - kk + 1;
  const Eigen::Index pw = x.cols() - kk + 1;

  Matrix grad = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < ph; ++r) {
    for (Eigen::Index c = 0; c < pw; ++c) {
      const double log_z = detail::patch_log_partition(x, r, c, kk);
      for (Eigen::Index dr = 0; dr < kk; ++dr) {
        for (Eigen::Index dc = 0; dc < kk; ++dc) {
          const double y = target.cells()(r + dr, c + dc) != 0 ? 1.0 : 0.0;
          grad(r + dr, c + dc) -= y - std::exp(x(r + dr, c + dc) - log_z);
        }
      }
    }
  }
  grad /= static_cast<double>(ph * pw);
  return Raster(std::move(grad));
}

/// Greedy non-maximum suppression with a square (Chebyshev) window.
///
/// Points are visited by descending score, ties by input index; a point
/// survives if no survivor lies within `radius`. Output is in visit order.
inline KeypointList nms(const KeypointList& kps, double radius) {
  if (!(radius >= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "nms radius must be >= 1");
  }
  std::vector<std::size_t> order(kps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return kps[a].score > kps[b].score;
  });

  // Survivors bucketed on a grid with cell size == radius, so any point within
  // the window lives in one of the 3x3 neighbouring buckets.
  auto cell_of = [radius](double v) { return static_cast<std::int64_t>(std::floor(v / radius)); };
  auto key = [](std::int64_t cx, std::int64_t cy) {
    return (static_cast<std::uint64_t>(cx) << 32) ^ static_cast<std::uint64_t>(cy & 0xffffffff);
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;

  KeypointList kept;
  for (std::size_t idx : order) {
    const Keypoint& p = kps[idx];
    const std::int64_t cx = cell_of(p.x);
    const std::int64_t cy = cell_of(p.y);
    bool suppressed = false;
    for (std::int64_t dx = -1; dx <= 1 && !suppressed; ++dx) {
      for (std::int64_t dy = -1; dy <= 1 && !suppressed; ++dy) {
        const auto it = buckets.find(key(cx + dx, cy + dy));
        if (it == buckets.end()) continue;
        for (std::size_t s : it->second) {
          const Keypoint& q = kept[s];
          if (std::max(std::abs(p.x - q.x), std::abs(p.y - q.y)) <= radius) {
            suppressed = true;
            break;
          }
        }
      }
    }
    if (!suppressed) {
      buckets[key(cx, cy)].push_back(kept.size());
      kept.push_back(p);
    }
  }
  return kept;
}

/// Mirror a column index: x -> width - 1 - x.
inline double flip_x(double x, std::size_t width) { return static_cast<double>(width) - 1.0 - x; }

struct KeypointCache {
  KeypointList keypoints;
  BinaryHeatmap heatmap;
};

/// Merges detections from an image and from its horizontal mirror into one
/// keypoint set and its binary heatmap. `flipped` holds coordinates in the
/// mirrored frame; they are mapped back before the merge.
inline KeypointCache merge_flip_cache(const KeypointList& primary, const KeypointList& flipped,
                                      std::size_t width, std::size_t height,
                                      double radius = 2.0) {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::BadDimension, "image must be at least 1x1");
  }
  const auto w = static_cast<double>(width);
  const auto h = static_cast<double>(height);
  KeypointList combined;
  combined.reserve(primary.size() + flipped.size());
  auto check = [&](const Keypoint& p, std::size_t index) {
    if (!(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h) || !std::isfinite(p.score)) {
      throw Error(ErrorCode::OutOfBounds,
                  "keypoint " + std::to_string(index) + " at (" + std::to_string(p.x) + ", " +
                      std::to_string(p.y) + ") outside " + std::to_string(width) + "x" +
                      std::to_string(height),
                  index);
    }
  };
  for (std::size_t i = 0; i < primary.size(); ++i) {
    check(primary[i], i);
    combined.push_back(primary[i]);
  }
  for (std::size_t i = 0; i < flipped.size(); ++i) {
    check(flipped[i], primary.size() + i);
    combined.push_back({flip_x(flipped[i].x, width), flipped[i].y, flipped[i].score});
  }

  KeypointCache out{nms(combined, radius), BinaryHeatmap(height, width)};
  for (const Keypoint& p : out.keypoints) {
    const auto x = std::min<long>(std::lround(p.x), static_cast<long>(width) - 1);
    const auto y = std::min<long>(std::lround(p.y), static_cast<long>(height) - 1);
    out.heatmap.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
  return out;
}

inline constexpr double kDefaultDetectThreshold = -5.0;
inline constexpr std::size_t kDefaultNmsSize = 2;
inline constexpr std::size_t kDefaultTopK = 4096;

/// Strict local maxima of a score map within a (2 * nms_size + 1)^2 window
/// (clipped at the borders) that score above `threshold`; strongest first,
/// ties in raster order, at most `top_k` points.
inline KeypointList extract_keypoints(const Raster& score_map,
                                      double threshold = kDefaultDetectThreshold,
                                      std::size_t nms_size = kDefaultNmsSize,
                                      std::size_t top_k = kDefaultTopK) {
  if (nms_size < 1 || top_k < 1) {
    throw Error(ErrorCode::InvalidConfig, "nms_size and top_k must be >= 1");
  }
  const Matrix& s = score_map.values();
  const Eigen::Index rows = s.rows();
  const Eigen::Index cols = s.cols();
  const auto n = static_cast<Eigen::Index>(nms_size);

  // Separable sliding-window maximum.
  Matrix row_max(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, c - n);
      const Eigen::Index hi = std::min<Eigen::Index>(cols - 1, c + n);
      row_max(r, c) = s.row(r).segment(lo, hi - lo + 1).maxCoeff();
    }
  }
  KeypointList out;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index lo_r = std::max<Eigen::Index>(0, r - n);
    const Eigen::Index hi_r = std::min<Eigen::Index>(rows - 1, r + n);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double v = s(r, c);
      if (!(v > threshold)) continue;
      if (row_max.col(c).segment(lo_r, hi_r - lo_r + 1).maxCoeff() != v) continue;
      // v is a window maximum; reject plateaus.
      const Eigen::Index lo_c = std::max<Eigen::Index>(0, c - n);
      const Eigen::Index hi_c = std::min<Eigen::Index>(cols - 1, c + n);
      bool strict = true;
      for (Eigen::Index rr = lo_r; rr <= hi_r && strict; ++rr) {
        for (Eigen::Index cc = lo_c; cc <= hi_c; ++cc) {
          if ((rr != r || cc != c) && s(rr, cc) == v) {
            strict = false;
            break;
          }
        }
      }
      if (strict) out.push_back({static_cast<double>(c), static_cast<double>(r), v});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

/// Samples a C-channel descriptor map (stored at 1/scale resolution) at
/// full-resolution keypoints. Map cell i holds the value at coordinate i; no
/// half-pixel offset. Out-of-range points throw unless `clamp` is set.
inline DescriptorSet bilinear_sample(std::span<const Raster> channels, const KeypointList& kps,
                                     int scale, bool clamp = false) {
  if (scale != 1 && scale != 2 && scale != 4) {
    throw Error(ErrorCode::BadDimension, "scale must be 1, 2 or 4");
  }
  if (channels.size() < 2) {
    throw Error(ErrorCode::BadDimension, "descriptor map needs at least 2 channels");
  }
  if (kps.empty()) {
    throw Error(ErrorCode::BadDimension, "no keypoints to sample");
  }
  const std::size_t h = channels.front().height();
  const std::size_t w = channels.front().width();
  for (const auto& ch : channels) {
    if (ch.height() != h || ch.width() != w) {
      throw Error(ErrorCode::ShapeMismatch, "descriptor map channels differ in shape");
    }
  }
  const double max_u = static_cast<double>(w) - 1.0;
  const double max_v = static_cast<double>(h) - 1.0;

  Matrix out(static_cast<Eigen::Index>(kps.size()), static_cast<Eigen::Index>(channels.size()));
  for (std::size_t i = 0; i < kps.size(); ++i) {
    double u = kps[i].x / scale;
    double v = kps[i].y / scale;
    if (!(u >= 0.0 && u <= max_u && v >= 0.0 && v <= max_v)) {
      if (!clamp || !std::isfinite(u) || !std::isfinite(v)) {
        throw Error(ErrorCode::OutOfBounds,
                    "keypoint " + std::to_string(i) + " falls outside the descriptor map", i);
      }
      u = std::clamp(u, 0.0, max_u);
      v = std::clamp(v, 0.0, max_v);
    }
    const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(u), w >= 2 ? w - 2 : 0);
    const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(v), h >= 2 ? h - 2 : 0);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fx = u - static_cast<double>(x0);
    const double fy = v - static_cast<double>(y0);
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const Raster& m = channels[c];
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          (1 - fy) * ((1 - fx) * m(y0, x0) + fx * m(y0, x1)) +
          fy * ((1 - fx) * m(y1, x0) + fx * m(y1, x1));
    }
  }
  return DescriptorSet(std::move(out));
}

}  // namespace ep2
