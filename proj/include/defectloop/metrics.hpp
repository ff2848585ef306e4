#pragma once

// Segmentation and detection scoring: pixel accuracy, IoU / mIoU, box IoU,
// all-point interpolated AP, and the per-class report laid out like the
// resolution x dataset-size results table.

#include "defectloop/annotation.hpp"
#include "defectloop/prediction.hpp"

#include "json.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace defectloop {

template <typename DA, typename DB>
void require_same_shape(const Eigen::DenseBase<DA>& a, const Eigen::DenseBase<DB>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::DimensionMismatch, std::to_string(a.cols()) + "x" + std::to_string(a.rows()) + " vs " +
                                             std::to_string(b.cols()) + "x" + std::to_string(b.rows()));
  }
}

/// Fraction of pixels where the two masks agree.
template <typename DA, typename DB>
double pixel_accuracy(const Eigen::DenseBase<DA>& pred, const Eigen::DenseBase<DB>& gt) {
  require_same_shape(pred, gt);
  if (pred.size() == 0) throw Error(Errc::DimensionMismatch, "empty masks");
  const auto agree = (pred.derived().array() == gt.derived().array()).count();
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

/// |pred & gt| / |pred | gt|; nullopt (Undefined) when both are empty.
template <typename DA, typename DB>
std::optional<double> class_iou(const Eigen::DenseBase<DA>& pred, const Eigen::DenseBase<DB>& gt) {
  require_same_shape(pred, gt);
  const auto& p = pred.derived().array();
  const auto& g = gt.derived().array();
  const auto uni = (p || g).count();
  if (uni == 0) return std::nullopt;
  return static_cast<double>((p && g).count()) / static_cast<double>(uni);
}

/// Mean of the defined entries. Throws AllUndefined when there are none.
double mean_iou(std::span<const std::optional<double>> ious);

double box_iou(const Box& a, const Box& b) noexcept;

struct ScoredDetection {
  ImageId image_id;
  Box box;
  double score = 0.0;
};

struct GroundTruthBox {
  ImageId image_id;
  Box box;
};

/// Detections ranked by descending score (ties: ascending image id, then box),
/// each greedily matched to the best unmatched same-image ground truth at
/// IoU >= threshold. Returns the area under the precision envelope.
/// Throws NoGroundTruth.
double average_precision(std::span<const ScoredDetection> detections, std::span<const GroundTruthBox> gts,
                         double iou_threshold);

enum class MetricKind { mAP, mIoU };

struct ClassMetric {
  MetricKind kind = MetricKind::mIoU;
  double value = 0.0;
};

struct MetricsReport {
  std::string dataset_id;
  int resolution = 0;
  std::size_t dataset_size = 0;
  std::map<DefectClass, ClassMetric> per_class;  // classes absent on both sides are omitted
  double pixel_accuracy = 1.0;
  double mean_accuracy = 0.0;
};

/// Unweighted mean of whatever per-class values are present (0 if none).
double mean_accuracy(const std::map<DefectClass, ClassMetric>& per_class);

/// Builds a report from per-class values: kinds follow each class's task and
/// mean_accuracy is recomputed.
MetricsReport aggregate_report(const std::map<DefectClass, double>& per_class_values, double pixel_acc = 1.0);

struct EvaluationConfig {
  double iou_threshold = 0.5;
  std::string dataset_id;
  int resolution = 0;
  std::size_t dataset_size = 0;
};

struct Evaluation {
  MetricsReport report;
  /// Mean of the defined per-class terms on each image alone (1.0 when the
  /// image has nothing to find and nothing was predicted).
  std::map<ImageId, double> per_image_accuracy;
};

/// Ground-truth masks define frame size; a missing prediction throws
/// MissingPrediction(image_id). Reduction happens in image-id order.
Evaluation evaluate(const std::map<ImageId, Prediction>& predictions,
                    const std::map<ImageId, AnnotationSet>& ground_truth, const EvaluationConfig& config,
                    std::optional<std::pair<int, int>> frame = std::nullopt);

nlohmann::json report_to_json(const MetricsReport& report);

inline constexpr const char* kGridCsvHeader = "dataset_size,resolution,center_map,poly_miou,edge_map,mean";

/// One CSV row in header order; absent classes print as empty fields.
std::string report_csv_row(const MetricsReport& report);

}  // namespace defectloop
