#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace defectloop {

/// Machine-readable failure kinds. Names are stable: they appear verbatim in
/// HTTP error bodies and CLI diagnostics.
enum class Errc {
  SumMismatch,
  DegeneratePolygon,
  InvalidAnnotation,
  UnsortedInput,
  UnreadableImage,
  CropOutOfBounds,
  TooFewImages,
  DegenerateRatio,
  EmptyPool,
  MixedImages,
  IllegalTransition,
  ProbabilityOutOfRange,
  MissingScore,
  RateTooSmall,
  InvalidArgument,
  DimensionMismatch,
  AllUndefined,
  NoGroundTruth,
  MissingPrediction,
  ResolutionMismatch,
  BackendUnavailable,
  UntrainedModel,
  EmptyTrainingSet,
  ClassUnrepresented,
  HyperparamOutOfRange,
  Timeout,
  MalformedResponse,
  RemoteError,
  MaxBatchesExceeded,
  UnknownLabeler,
  LeaseExpired,
  ValidationFailed,
  UnknownTask,
  AlreadyRunning,
  NoActiveRun,
  NotFound,
  Aborted,
  Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  explicit Error(Errc code) : Error(code, std::string(to_string(code))) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }
  [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace defectloop
