#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ep2 {

enum class ErrorCode {
  ZeroRow,
  RowCountMismatch,
  DimMismatch,
  BadDimension,
  ShapeMismatch,
  SvdFailure,
  NeedTwoViews,
  KernelTooLarge,
  NumericOverflow,
  OutOfBounds,
  BadInputSize,
  InvalidConfig,
  DivergenceDetected,
  MalformedFile,
  NotUnitNorm,
  NotOrthogonal,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::BadDimension: return "BadDimension";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SvdFailure: return "SvdFailure";
    case ErrorCode::NeedTwoViews: return "NeedTwoViews";
    case ErrorCode::KernelTooLarge: return "KernelTooLarge";
    case ErrorCode::NumericOverflow: return "NumericOverflow";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::BadInputSize: return "BadInputSize";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::NotUnitNorm: return "NotUnitNorm";
    case ErrorCode::NotOrthogonal: return "NotOrthogonal";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an `ep2::Error` carrying a
/// machine-readable code. `index` is set for errors that point at a specific
/// row or keypoint (ZeroRow, OutOfBounds).
class Error : public std::runtime_error {
 public:
  static constexpr std::size_t kNoIndex = static_cast<std::size_t>(-1);

  Error(ErrorCode code, const std::string& what, std::size_t index = kNoIndex)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  std::size_t index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::size_t index_;
};

}  // namespace ep2
