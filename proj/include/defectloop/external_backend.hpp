#pragma once

// Client for an out-of-process trainer/predictor speaking JSON over HTTP:
//   POST /train   {dataset_uri, classes, hyperparams} -> {model_id}
//   POST /predict {model_id, image: base64 PNG}      -> {probability_maps, boxes}
//   GET  /health                                     -> {status}

#include "defectloop/backend.hpp"

#include "json.hpp"

#include <chrono>
#include <map>
#include <mutex>
#include <string>

namespace defectloop {

struct ExternalBackendConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:9000
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
};

/// Parses and validates a /predict response body. Throws MalformedResponse.
Prediction prediction_from_response(const nlohmann::json& body, const ImageId& image_id, int width, int height);

/// Inverse of prediction_from_response, used by stubs and tests.
nlohmann::json prediction_to_response(const Prediction& prediction);

class ExternalBackend final : public ModelBackend {
 public:
  explicit ExternalBackend(ExternalBackendConfig config);

  [[nodiscard]] BackendKind kind() const override { return BackendKind::External; }

  /// Needs request.dataset_uri. Throws Timeout, BackendUnavailable,
  /// RemoteError, MalformedResponse.
  ModelHandle train(const TrainRequest& request, const TrainingSource& data) override;

  [[nodiscard]] Prediction predict(const ModelHandle& model, const ImageF& image,
                                   const ImageId& image_id) const override;

  /// GET /health; false when unreachable.
  [[nodiscard]] bool healthy() const;

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json* body) const;

  ExternalBackendConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, int> versions_;
};

}  // namespace defectloop
