#pragma once

// Model backend contract: hyperparameters, handles, lazily materialised
// training data and the train/predict interface every backend implements.

#include "defectloop/annotation.hpp"
#include "defectloop/grid.hpp"
#include "defectloop/prediction.hpp"
#include "defectloop/preprocess.hpp"

#include "json.hpp"

#include <functional>
#include <string>
#include <vector>

namespace defectloop {

enum class LossKind { SparseCategoricalCrossEntropy, Focal };
std::string_view to_string(LossKind k) noexcept;

struct TrainingHyperparams {
  int epochs = 30;
  int batch_size = 20;
  double learning_rate = 1e-4;
  LossKind loss = LossKind::SparseCategoricalCrossEntropy;

  /// epochs in [30,45], batch_size >= 1, learning_rate in [6e-6, 3e-4].
  /// Throws HyperparamOutOfRange.
  void validate() const;
  bool operator==(const TrainingHyperparams&) const = default;
};

nlohmann::json hyperparams_to_json(const TrainingHyperparams& hp);
/// Validates after parsing.
TrainingHyperparams hyperparams_from_json(const nlohmann::json& j);

enum class BackendKind { ReferenceClassical, External };
std::string_view to_string(BackendKind k) noexcept;

struct ModelHandle {
  std::string model_id;
  BackendKind backend_kind = BackendKind::ReferenceClassical;
  std::string endpoint;  // External only
  int version = 0;
  std::string training_manifest_id;
  int resolution = 0;
  /// Id the remote side knows the model by (External only).
  std::string remote_id;

  bool operator==(const ModelHandle&) const = default;
};

nlohmann::json handle_to_json(const ModelHandle& h);
ModelHandle handle_from_json(const nlohmann::json& j);

struct TrainingExample {
  ImageId image_id;
  ImageF image;
  AnnotationSet labels;
};

/// Random-access view over training examples; implementations may build
/// each example on demand.
class TrainingSource {
 public:
  virtual ~TrainingSource() = default;
  [[nodiscard]] virtual std::size_t size() const = 0;
  [[nodiscard]] virtual TrainingExample get(std::size_t i) const = 0;
};

class VectorTrainingSource final : public TrainingSource {
 public:
  VectorTrainingSource() = default;
  explicit VectorTrainingSource(std::vector<TrainingExample> examples) : examples_(std::move(examples)) {}

  void add(TrainingExample e) { examples_.push_back(std::move(e)); }
  [[nodiscard]] std::size_t size() const override { return examples_.size(); }
  [[nodiscard]] TrainingExample get(std::size_t i) const override { return examples_.at(i); }

 private:
  std::vector<TrainingExample> examples_;
};

using ExampleLoader = std::function<TrainingExample(const ImageId&)>;

/// Train-split entries of a manifest. Originals come straight from the
/// loader; augmented entries load their parent and replay the recorded
/// transform chain.
class ManifestTrainingSource final : public TrainingSource {
 public:
  ManifestTrainingSource(const DatasetManifest& manifest, ExampleLoader loader);

  [[nodiscard]] std::size_t size() const override { return entries_.size(); }
  [[nodiscard]] TrainingExample get(std::size_t i) const override;

 private:
  std::vector<DatasetEntry> entries_;
  ExampleLoader loader_;
};

struct TrainRequest {
  std::string model_id;
  std::string training_manifest_id;
  std::vector<DefectClass> classes{kAllClasses.begin(), kAllClasses.end()};
  TrainingHyperparams hyperparams;
  /// Where an out-of-process trainer can fetch the data (External only).
  std::string dataset_uri;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  [[nodiscard]] virtual BackendKind kind() const = 0;

  /// Throws EmptyTrainingSet, ClassUnrepresented, HyperparamOutOfRange.
  virtual ModelHandle train(const TrainRequest& request, const TrainingSource& data) = 0;

  /// Throws UntrainedModel, ResolutionMismatch, BackendUnavailable.
  [[nodiscard]] virtual Prediction predict(const ModelHandle& model, const ImageF& image,
                                           const ImageId& image_id) const = 0;
};

}  // namespace defectloop
