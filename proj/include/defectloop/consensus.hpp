#pragma once

// Labeling batches, multi-labeler consensus, the review state machine,
// model pre-annotation and correction-cost accounting.

#include "defectloop/annotation.hpp"

#include "json.hpp"

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace defectloop {

enum class BatchStatus { Open, AwaitingConsensus, AwaitingExpert, Finalized };
std::string_view to_string(BatchStatus s) noexcept;

struct LabelingBatch {
  std::string batch_id;
  std::vector<ImageId> image_ids;
  BatchStatus status = BatchStatus::Open;
  std::set<std::string> assigned_labelers;
  /// Starting point handed to labelers, one per image.
  std::map<ImageId, AnnotationSet> drafts;

  /// Forward-only, except AwaitingExpert -> Open for relabeling. Throws
  /// IllegalTransition.
  void advance(BatchStatus next);
};

inline constexpr std::size_t kDefaultBatchSize = 100;

/// Takes min(size, |pool|) ids from the front of the pool. Throws EmptyPool.
LabelingBatch create_batch(std::vector<ImageId>& pool, std::size_t size, std::string batch_id);

struct MaskConsensus {
  std::optional<MaskAnnotation> merged;  // absent when no input had a mask of the class
  double agreement = 1.0;
};

/// Strict-majority pixel vote (ties go to background). Agreement is the mean
/// per-pixel fraction of labelers siding with the outcome. Sets lacking a mask
/// of the class vote background. Throws MixedImages or DimensionMismatch.
MaskConsensus merge_mask_consensus(std::span<const AnnotationSet> sets, DefectClass cls);

struct BoxConsensusConfig {
  double iou_threshold = 0.5;
  double quorum = 0.5;
};

struct BoxConsensus {
  std::vector<Box> merged;        // sorted
  std::vector<double> support;    // per emitted box: fraction of labelers in its cluster
  double agreement = 1.0;         // mean support over all clusters; 1.0 when nobody drew a box
};

/// Greedy IoU clustering across labelers (labelers by source id, boxes by
/// (x,y,w,h)); a cluster holds at most one box per labeler and is emitted as
/// its coordinate-wise (lower) median when it spans >= quorum * n labelers.
BoxConsensus merge_box_consensus(std::span<const AnnotationSet> sets, DefectClass cls,
                                 const BoxConsensusConfig& config = {});

struct ConsensusResult {
  ImageId image_id;
  AnnotationSet merged;  // source = Consensus, review_state = Draft
  std::map<DefectClass, double> agreement;
  std::set<std::string> contributing_labelers;
};

/// All classes at once. Throws InvalidArgument on an empty input.
ConsensusResult merge_consensus(std::span<const AnnotationSet> sets, const BoxConsensusConfig& config = {});

enum class ReviewDecision { CrowdApprove, ExpertApprove, ReturnForRelabel };
std::string_view to_string(ReviewDecision d) noexcept;

/// Draft -CrowdApprove-> CrowdReviewed -ExpertApprove-> ExpertApproved
///                                     -ReturnForRelabel-> ReturnedForRelabel.
/// Anything else throws IllegalTransition.
AnnotationSet apply_review(const AnnotationSet& set, ReviewDecision decision);

/// Seeds each covered image's draft from the model output and leaves the rest
/// blank. Predictions for images outside the batch are logged and dropped.
LabelingBatch attach_preannotations(LabelingBatch batch, const std::map<ImageId, AnnotationSet>& predictions);

struct CorrectionCost {
  ImageId image_id;
  std::uint64_t pixels_flipped = 0;
  std::uint32_t boxes_added = 0;
  std::uint32_t boxes_removed = 0;
  std::uint32_t boxes_moved = 0;
  std::optional<double> seconds;

  [[nodiscard]] std::uint64_t total_edits() const noexcept {
    return pixels_flipped + boxes_added + boxes_removed + boxes_moved;
  }
  bool operator==(const CorrectionCost&) const = default;
};

/// Edit distance between a starting draft and the finished labels. Boxes
/// are matched per class greedily at IoU >= 0.5. Throws MixedImages.
CorrectionCost correction_cost(const AnnotationSet& pre, const AnnotationSet& final);

nlohmann::json consensus_report_json(const std::string& batch_id, std::span<const ConsensusResult> results);

/// Newline-delimited image ids.
std::string relabel_queue_text(std::span<const ImageId> ids);

}  // namespace defectloop
