#include "defectloop/backend.hpp"

#include "defectloop/augmentation.hpp"

#include <cmath>

namespace defectloop {

void Prediction::validate(int width, int height, Errc error) const {
  auto fail = [&](const std::string& what) { throw Error(error, image_id + ": " + what); };
  for (const auto& [cls, map] : probability_maps) {
    if (task_of(cls) != TaskKind::Segmentation) fail("probability map for detection class");
    if (map.rows() != height || map.cols() != width) fail("probability map has the wrong shape");
    if (map.size() > 0 && !((map >= 0.0f) && (map <= 1.0f)).all()) fail("probability outside [0,1]");
  }
  for (const auto& b : boxes) {
    if (task_of(b.cls) != TaskKind::Detection) fail("box for segmentation class");
    if (!b.score || !(*b.score >= 0.0 && *b.score <= 1.0)) fail("box score missing or outside [0,1]");
    if (b.box.w <= 0 || b.box.h <= 0 || b.box.x < 0 || b.box.y < 0 || b.box.right() > width ||
        b.box.bottom() > height) {
      fail("box outside the frame");
    }
  }
}

MaskGrid Prediction::mask(DefectClass cls, int width, int height) const {
  auto it = probability_maps.find(cls);
  if (it == probability_maps.end()) return MaskGrid::Constant(height, width, false);
  if (it->second.rows() != height || it->second.cols() != width) {
    throw Error(Errc::DimensionMismatch, image_id + ": probability map shape");
  }
  return it->second > 0.5f;
}

AnnotationSet to_annotation(const Prediction& prediction, const std::string& model_id) {
  AnnotationSet set;
  set.image_id = prediction.image_id;
  set.source = AnnotationSource::model(model_id);
  for (const auto& [cls, map] : prediction.probability_maps) {
    set.masks.push_back(MaskAnnotation::from_grid(cls, map > 0.5f));
  }
  set.boxes = prediction.boxes;
  return set;
}

std::string_view to_string(LossKind k) noexcept {
  return k == LossKind::Focal ? "Focal" : "SparseCategoricalCrossEntropy";
}

std::string_view to_string(BackendKind k) noexcept {
  return k == BackendKind::External ? "External" : "ReferenceClassical";
}

void TrainingHyperparams::validate() const {
  if (epochs < 30 || epochs > 45) throw Error(Errc::HyperparamOutOfRange, "epochs " + std::to_string(epochs));
  if (batch_size < 1) throw Error(Errc::HyperparamOutOfRange, "batch_size " + std::to_string(batch_size));
  if (!(learning_rate >= 6e-6 && learning_rate <= 3e-4)) {
    throw Error(Errc::HyperparamOutOfRange, "learning_rate " + std::to_string(learning_rate));
  }
}

nlohmann::json hyperparams_to_json(const TrainingHyperparams& hp) {
  return {{"epochs", hp.epochs},
          {"batch_size", hp.batch_size},
          {"learning_rate", hp.learning_rate},
          {"loss", std::string(to_string(hp.loss))}};
}

TrainingHyperparams hyperparams_from_json(const nlohmann::json& j) {
  TrainingHyperparams hp;
  try {
    hp.epochs = j.value("epochs", hp.epochs);
    hp.batch_size = j.value("batch_size", hp.batch_size);
    hp.learning_rate = j.value("learning_rate", hp.learning_rate);
    const std::string loss = j.value("loss", std::string(to_string(hp.loss)));
    if (loss == "Focal") hp.loss = LossKind::Focal;
    else if (loss == "SparseCategoricalCrossEntropy") hp.loss = LossKind::SparseCategoricalCrossEntropy;
    else throw Error(Errc::HyperparamOutOfRange, "unknown loss '" + loss + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::HyperparamOutOfRange, e.what());
  }
  hp.validate();
  return hp;
}

nlohmann::json handle_to_json(const ModelHandle& h) {
  nlohmann::json j{{"model_id", h.model_id},
                   {"backend_kind", std::string(to_string(h.backend_kind))},
                   {"version", h.version},
                   {"training_manifest_id", h.training_manifest_id},
                   {"resolution", h.resolution}};
  if (h.backend_kind == BackendKind::External) {
    j["endpoint"] = h.endpoint;
    j["remote_id"] = h.remote_id;
  }
  return j;
}

ModelHandle handle_from_json(const nlohmann::json& j) {
  try {
    ModelHandle h;
    h.model_id = j.at("model_id").get<std::string>();
    const auto kind = j.at("backend_kind").get<std::string>();
    if (kind == "External") h.backend_kind = BackendKind::External;
    else if (kind == "ReferenceClassical") h.backend_kind = BackendKind::ReferenceClassical;
    else throw Error(Errc::InvalidArgument, "unknown backend kind '" + kind + "'");
    h.version = j.at("version").get<int>();
    h.training_manifest_id = j.value("training_manifest_id", std::string{});
    h.resolution = j.at("resolution").get<int>();
    h.endpoint = j.value("endpoint", std::string{});
    h.remote_id = j.value("remote_id", std::string{});
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("model handle: ") + e.what());
  }
}

ManifestTrainingSource::ManifestTrainingSource(const DatasetManifest& manifest, ExampleLoader loader)
    : loader_(std::move(loader)) {
  for (const auto& e : manifest.entries) {
    auto it = manifest.split.find(e.image_id);
    if (!e.is_original() || (it != manifest.split.end() && it->second == Split::Train)) entries_.push_back(e);
  }
}

TrainingExample ManifestTrainingSource::get(std::size_t i) const {
  const DatasetEntry& e = entries_.at(i);
  if (e.is_original()) return loader_(e.image_id);
  TrainingExample parent = loader_(e.augmented_from->parent);
  auto res = apply_transform(parent.image, parent.labels, e.augmented_from->transforms);
  res.labels.image_id = e.image_id;
  return TrainingExample{e.image_id, std::move(res.image), std::move(res.labels)};
}

}  // namespace defectloop
