#include "defectloop/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <tuple>

namespace defectloop {

double mean_iou(std::span<const std::optional<double>> ious) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : ious) {
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) throw Error(Errc::AllUndefined, "no defined IoU among " + std::to_string(ious.size()) + " entries");
  return sum / static_cast<double>(n);
}

double box_iou(const Box& a, const Box& b) noexcept {
  const long long iw = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const long long ih = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const long long inter = iw * ih;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double average_precision(std::span<const ScoredDetection> detections, std::span<const GroundTruthBox> gts,
                         double iou_threshold) {
  if (gts.empty()) throw Error(Errc::NoGroundTruth, "average precision needs at least one ground-truth box");

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = detections[i];
    const auto& b = detections[j];
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.image_id, a.box) < std::tie(b.image_id, b.box);
  });

  std::map<ImageId, std::vector<std::size_t>> gts_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gts_by_image[gts[g].image_id].push_back(g);
  std::vector<bool> matched(gts.size(), false);

  std::vector<double> precision;
  std::vector<double> recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& det = detections[order[rank]];
    double best_iou = -1.0;
    std::size_t best = gts.size();
    if (auto it = gts_by_image.find(det.image_id); it != gts_by_image.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double iou = box_iou(det.box, gts[g].box);
        if (iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
    }
    if (best < gts.size() && best_iou >= iou_threshold) {
      matched[best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }

  // Precision envelope: running max from the tail.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double mean_accuracy(const std::map<DefectClass, ClassMetric>& per_class) {
  if (per_class.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [cls, m] : per_class) sum += m.value;
  return sum / static_cast<double>(per_class.size());
}

MetricsReport aggregate_report(const std::map<DefectClass, double>& per_class_values, double pixel_acc) {
  MetricsReport report;
  for (const auto& [cls, v] : per_class_values) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::InvalidArgument, "metric values must lie in [0,1]");
    report.per_class[cls] =
        ClassMetric{task_of(cls) == TaskKind::Detection ? MetricKind::mAP : MetricKind::mIoU, v};
  }
  report.pixel_accuracy = pixel_acc;
  report.mean_accuracy = mean_accuracy(report.per_class);
  return report;
}

namespace {

// AP with the "absent on both sides" exclusion: nullopt when neither ground
// truth nor detections exist, 0 when only detections exist.
std::optional<double> detection_score(const std::vector<ScoredDetection>& dets, const std::vector<GroundTruthBox>& gts,
                                      double threshold) {
  if (gts.empty()) return dets.empty() ? std::nullopt : std::optional<double>(0.0);
  return average_precision(dets, gts, threshold);
}

}  // namespace

Evaluation evaluate(const std::map<ImageId, Prediction>& predictions,
                    const std::map<ImageId, AnnotationSet>& ground_truth, const EvaluationConfig& config,
                    std::optional<std::pair<int, int>> frame) {
  Evaluation out;
  out.report.dataset_id = config.dataset_id;
  out.report.resolution = config.resolution;
  out.report.dataset_size = config.dataset_size;

  std::vector<std::optional<double>> seg_ious;
  double pixel_acc_sum = 0.0;
  std::size_t pixel_acc_n = 0;
  std::map<DefectClass, std::vector<ScoredDetection>> dets;
  std::map<DefectClass, std::vector<GroundTruthBox>> gts;

  for (const auto& [id, gt] : ground_truth) {
    auto pit = predictions.find(id);
    if (pit == predictions.end()) throw Error(Errc::MissingPrediction, id);
    const Prediction& pred = pit->second;

    std::vector<std::optional<double>> terms;
    for (auto cls : kSegmentationClasses) {
      std::optional<std::pair<int, int>> dims = frame;
      if (const auto* m = gt.mask_for(cls)) dims = std::pair{m->width(), m->height()};
      if (!dims) {
        if (auto mit = pred.probability_maps.find(cls); mit != pred.probability_maps.end()) {
          dims = std::pair{static_cast<int>(mit->second.cols()), static_cast<int>(mit->second.rows())};
        }
      }
      if (!dims) {
        seg_ious.push_back(std::nullopt);
        continue;
      }
      const MaskGrid gt_mask = mask_or_empty(gt, cls, dims->first, dims->second);
      const MaskGrid pred_mask = pred.mask(cls, dims->first, dims->second);
      const auto iou = class_iou(pred_mask, gt_mask);
      seg_ious.push_back(iou);
      terms.push_back(iou);
      pixel_acc_sum += pixel_accuracy(pred_mask, gt_mask);
      ++pixel_acc_n;
    }

    for (auto cls : kDetectionClasses) {
      std::vector<ScoredDetection> image_dets;
      std::vector<GroundTruthBox> image_gts;
      for (const auto& b : pred.boxes) {
        if (b.cls == cls) image_dets.push_back({id, b.box, b.score.value_or(0.0)});
      }
      for (const auto& b : gt.boxes) {
        if (b.cls == cls) image_gts.push_back({id, b.box});
      }
      terms.push_back(detection_score(image_dets, image_gts, config.iou_threshold));
      auto& all_dets = dets[cls];
      all_dets.insert(all_dets.end(), image_dets.begin(), image_dets.end());
      auto& all_gts = gts[cls];
      all_gts.insert(all_gts.end(), image_gts.begin(), image_gts.end());
    }

    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : terms) {
      if (!t) continue;
      sum += *t;
      ++n;
    }
    out.per_image_accuracy[id] = n == 0 ? 1.0 : sum / static_cast<double>(n);
  }

  for (auto cls : kSegmentationClasses) {
    if (std::any_of(seg_ious.begin(), seg_ious.end(), [](const auto& v) { return v.has_value(); })) {
      out.report.per_class[cls] = ClassMetric{MetricKind::mIoU, mean_iou(seg_ious)};
    }
  }
  for (auto cls : kDetectionClasses) {
    if (auto ap = detection_score(dets[cls], gts[cls], config.iou_threshold)) {
      out.report.per_class[cls] = ClassMetric{MetricKind::mAP, *ap};
    }
  }
  out.report.pixel_accuracy = pixel_acc_n ? pixel_acc_sum / static_cast<double>(pixel_acc_n) : 1.0;
  out.report.mean_accuracy = mean_accuracy(out.report.per_class);
  return out;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, m] : report.per_class) {
    per_class[std::string(to_string(cls))] = {{"metric_kind", m.kind == MetricKind::mAP ? "mAP" : "mIoU"},
                                              {"value", m.value}};
  }
  return {{"dataset_id", report.dataset_id},         {"resolution", report.resolution},
          {"dataset_size", report.dataset_size},     {"per_class", per_class},
          {"pixel_accuracy", report.pixel_accuracy}, {"mean_accuracy", report.mean_accuracy}};
}

std::string report_csv_row(const MetricsReport& report) {
  auto field = [&](DefectClass cls) -> std::string {
    auto it = report.per_class.find(cls);
    if (it == report.per_class.end()) return {};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", it->second.value);
    return buf;
  };
  char mean[32];
  std::snprintf(mean, sizeof mean, "%.6f", report.mean_accuracy);
  return std::to_string(report.dataset_size) + "," + std::to_string(report.resolution) + "," +
         field(DefectClass::CenterDefect) + "," + field(DefectClass::PolycrystallineDefect) + "," +
         field(DefectClass::EdgeDefect) + "," + mean;
}

}  // namespace defectloop
