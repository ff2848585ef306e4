#pragma once

// Canonical label data model: defect classes, run-length encoded masks,
// boxes and per-image annotation sets.

#include "defectloop/error.hpp"
#include "defectloop/grid.hpp"

#include <Eigen/Core>

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace defectloop {

using ImageId = std::string;

enum class DefectClass { PolycrystallineDefect, CenterDefect, EdgeDefect };
enum class TaskKind { Segmentation, Detection };

inline constexpr std::array<DefectClass, 3> kAllClasses = {
    DefectClass::PolycrystallineDefect, DefectClass::CenterDefect, DefectClass::EdgeDefect};
inline constexpr std::array<DefectClass, 1> kSegmentationClasses = {DefectClass::PolycrystallineDefect};
inline constexpr std::array<DefectClass, 2> kDetectionClasses = {DefectClass::CenterDefect,
                                                                 DefectClass::EdgeDefect};

constexpr TaskKind task_of(DefectClass c) noexcept {
  return c == DefectClass::PolycrystallineDefect ? TaskKind::Segmentation : TaskKind::Detection;
}

std::string_view to_string(DefectClass c) noexcept;
DefectClass defect_class_from_string(std::string_view name);

enum class ImageStatus { Raw, Filtered, Preprocessed, Rejected };
enum class RejectReason { Blackout, Noise };

std::string_view to_string(ImageStatus s) noexcept;
std::string_view to_string(RejectReason r) noexcept;

struct ImageRecord {
  ImageId image_id;
  std::string growth_run_id;
  std::int64_t captured_at = 0;  // seconds
  int width = 0;
  int height = 0;
  std::string storage_path;
  ImageStatus status = ImageStatus::Raw;
  std::optional<RejectReason> reject_reason;

  /// Throws InvalidArgument on a zero dimension or a status/reason mismatch.
  void validate() const;
};

using Rle = std::vector<std::uint32_t>;

/// Row-major run lengths, alternating background/foreground, starting with a
/// (possibly zero) background run.
Rle rle_encode(const MaskGrid& mask);

/// Inverse of rle_encode. Throws SumMismatch when the runs do not cover
/// width*height pixels.
MaskGrid rle_decode(std::span<const std::uint32_t> rle, int width, int height);

/// Integer pixel box: top-left corner plus extent. Area is w*h.
struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  [[nodiscard]] long long area() const noexcept { return static_cast<long long>(w) * h; }
  [[nodiscard]] int right() const noexcept { return x + w; }
  [[nodiscard]] int bottom() const noexcept { return y + h; }

  auto operator<=>(const Box&) const = default;
};

/// Tightest box around the foreground, or nullopt for an empty mask.
template <typename Derived>
std::optional<Box> mask_to_bbox(const Eigen::DenseBase<Derived>& mask) {
  const auto rows = mask.rows();
  const auto cols = mask.cols();
  Eigen::Index top = rows, bottom = -1, left = cols, right = -1;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!mask(r, c)) continue;
      top = std::min(top, r);
      bottom = std::max(bottom, r);
      left = std::min(left, c);
      right = std::max(right, c);
    }
  }
  if (bottom < 0) return std::nullopt;
  return Box{static_cast<int>(left), static_cast<int>(top), static_cast<int>(right - left + 1),
             static_cast<int>(bottom - top + 1)};
}

/// Even-odd fill sampled at pixel centres. Throws DegeneratePolygon for fewer
/// than three vertices.
MaskGrid polygon_to_mask(std::span<const Eigen::Vector2d> vertices, int width, int height);

class MaskAnnotation {
 public:
  MaskAnnotation() = default;
  /// Validates the run invariants; throws SumMismatch or InvalidAnnotation.
  MaskAnnotation(DefectClass cls, int width, int height, Rle rle);

  static MaskAnnotation from_grid(DefectClass cls, const MaskGrid& grid);

  [[nodiscard]] DefectClass defect_class() const noexcept { return cls_; }
  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] const Rle& rle() const noexcept { return rle_; }
  [[nodiscard]] MaskGrid to_grid() const { return rle_decode(rle_, width_, height_); }
  [[nodiscard]] std::uint64_t foreground_count() const noexcept;

  bool operator==(const MaskAnnotation&) const = default;

 private:
  DefectClass cls_ = DefectClass::PolycrystallineDefect;
  int width_ = 0;
  int height_ = 0;
  Rle rle_;
};

struct BoxAnnotation {
  DefectClass cls = DefectClass::CenterDefect;
  Box box;
  std::optional<double> score;  // model output only

  bool operator==(const BoxAnnotation&) const = default;
};

struct AnnotationSource {
  enum class Kind { HumanLabeler, Model, Consensus };
  Kind kind = Kind::Consensus;
  std::string id;  // labeler id or model id; empty for Consensus

  static AnnotationSource labeler(std::string id) { return {Kind::HumanLabeler, std::move(id)}; }
  static AnnotationSource model(std::string id) { return {Kind::Model, std::move(id)}; }
  static AnnotationSource consensus() { return {Kind::Consensus, {}}; }

  bool operator==(const AnnotationSource&) const = default;
};

std::string_view to_string(AnnotationSource::Kind k) noexcept;

enum class ReviewState { Draft, CrowdReviewed, ExpertApproved, ReturnedForRelabel };
std::string_view to_string(ReviewState s) noexcept;
ReviewState review_state_from_string(std::string_view s);

struct AnnotationSet {
  ImageId image_id;
  AnnotationSource source;
  std::vector<MaskAnnotation> masks;
  std::vector<BoxAnnotation> boxes;
  ReviewState review_state = ReviewState::Draft;
  std::optional<double> elapsed_labeling_seconds;
  /// Set on drafts pre-filled from a model prediction.
  std::optional<AnnotationSource> seeded_from;

  [[nodiscard]] const MaskAnnotation* mask_for(DefectClass cls) const;
  [[nodiscard]] std::vector<Box> boxes_for(DefectClass cls) const;

  /// Checks every structural invariant. When a frame size is given, boxes
  /// and masks must fit it. Throws InvalidAnnotation with the first problem.
  void validate(std::optional<std::pair<int, int>> frame = std::nullopt) const;

  bool operator==(const AnnotationSet&) const = default;
};

/// Blank mask grid (all background) for a segmentation class lookup that
/// finds nothing.
MaskGrid mask_or_empty(const AnnotationSet& set, DefectClass cls, int width, int height);

}  // namespace defectloop
