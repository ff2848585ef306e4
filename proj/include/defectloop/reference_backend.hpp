#pragma once

// In-process backend built from classical image operators so the whole loop
// runs without a learning framework.

#include "defectloop/backend.hpp"
#include "defectloop/registry.hpp"

#include <Eigen/Core>

#include <map>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

namespace defectloop {

/// Connected components of a mask. Labels are 1..count in raster order of
/// first appearance, 0 is background.
std::pair<Grid<int>, int> label_components(const MaskGrid& mask, bool eight_connected);

/// Otsu threshold over 256 bins of values clamped to [0,1].
double otsu_threshold(const GridF& values);

struct RimProfile {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  Eigen::VectorXd radius;    // one sample per degree
  Eigen::VectorXd baseline;  // circular moving median of radius
};

/// Largest bright blob (luminance above Otsu) and its radial profile;
/// nullopt when the image is flat or has no blob.
std::optional<std::pair<MaskGrid, RimProfile>> rim_profile(const GridF& lum);

/// Blob pixels sticking out beyond the baseline, with their excess radius.
GridF rim_excess(const MaskGrid& blob, const RimProfile& profile);

struct SegmentationModel {
  Eigen::VectorXd foreground;
  std::vector<Eigen::VectorXd> background;  // k-means centroids
};

struct CenterModel {
  double threshold = 0.0;
  double box_w = 0.0;
  double box_h = 0.0;
};

struct EdgeModel {
  double threshold = 0.0;
  double cut = 0.0;  // boxes cover rim pixels above cut * peak excess
};

struct ReferenceParams {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::map<DefectClass, SegmentationModel> segmentation;
  std::optional<CenterModel> center;
  std::optional<EdgeModel> edge;
};

nlohmann::json params_to_json(const ReferenceParams& p);
ReferenceParams params_from_json(const nlohmann::json& j);

/// One pass over the data. Throws EmptyTrainingSet, ClassUnrepresented,
/// DimensionMismatch.
ReferenceParams fit_reference(const TrainingSource& data, std::span<const DefectClass> classes);

/// Pure function of (params, image). Throws ResolutionMismatch.
Prediction predict_reference(const ReferenceParams& params, const ImageF& image, const ImageId& image_id);

class ReferenceBackend final : public ModelBackend {
 public:
  /// With a registry, trained models are persisted and versions continue
  /// from what is on disk.
  explicit ReferenceBackend(ModelRegistry* registry = nullptr) : registry_(registry) {}

  [[nodiscard]] BackendKind kind() const override { return BackendKind::ReferenceClassical; }
  ModelHandle train(const TrainRequest& request, const TrainingSource& data) override;
  [[nodiscard]] Prediction predict(const ModelHandle& model, const ImageF& image,
                                   const ImageId& image_id) const override;

  /// Serialised parameters of a trained version. Throws UntrainedModel.
  [[nodiscard]] std::string params_text(const ModelHandle& model) const;

 private:
  [[nodiscard]] ReferenceParams lookup(const ModelHandle& model) const;

  ModelRegistry* registry_;
  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> train_locks_;
  std::map<std::string, int> versions_;
  mutable std::map<std::pair<std::string, int>, ReferenceParams> models_;
};

}  // namespace defectloop
