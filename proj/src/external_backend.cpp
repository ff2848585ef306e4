#include "defectloop/external_backend.hpp"

#include "defectloop/annotation_json.hpp"
#include "defectloop/image_io.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <thread>

namespace defectloop {

Prediction prediction_from_response(const nlohmann::json& body, const ImageId& image_id, int width, int height) {
  Prediction pred;
  pred.image_id = image_id;
  try {
    if (!body.is_object()) throw Error(Errc::MalformedResponse, "response is not an object");
    const nlohmann::json maps = body.value("probability_maps", nlohmann::json::object());
    if (!maps.is_object()) throw Error(Errc::MalformedResponse, "probability_maps is not an object");
    for (const auto& [name, map] : maps.items()) {
      const DefectClass cls = defect_class_from_string(name);
      const int mw = map.at("width").get<int>(), mh = map.at("height").get<int>();
      const auto& values = map.at("values");
      if (mw != width || mh != height || !values.is_array() ||
          values.size() != static_cast<std::size_t>(mw) * static_cast<std::size_t>(mh)) {
        throw Error(Errc::MalformedResponse, "probability map '" + name + "' has the wrong shape");
      }
      GridF grid(mh, mw);
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i].is_number()) throw Error(Errc::MalformedResponse, "non-numeric probability");
        grid.data()[i] = static_cast<float>(values[i].get<double>());
      }
      pred.probability_maps[cls] = std::move(grid);
    }
    for (const auto& b : body.value("boxes", nlohmann::json::array())) {
      BoxAnnotation box;
      box.cls = defect_class_from_string(b.at("class").get<std::string>());
      box.box = Box{b.at("x").get<int>(), b.at("y").get<int>(), b.at("w").get<int>(), b.at("h").get<int>()};
      if (!b.contains("score")) throw Error(Errc::MalformedResponse, "box without score");
      box.score = b.at("score").get<double>();
      pred.boxes.push_back(box);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedResponse, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::MalformedResponse) throw;
    throw Error(Errc::MalformedResponse, e.what());
  }
  // Probabilities are checked here rather than while parsing so a single
  // bad value reports the same way as a bad box.
  pred.validate(width, height, Errc::MalformedResponse);
  return pred;
}

nlohmann::json prediction_to_response(const Prediction& prediction) {
  nlohmann::json maps = nlohmann::json::object();
  for (const auto& [cls, grid] : prediction.probability_maps) {
    std::vector<double> values(grid.data(), grid.data() + grid.size());
    maps[std::string(to_string(cls))] = {{"width", grid.cols()}, {"height", grid.rows()}, {"values", values}};
  }
  auto boxes = nlohmann::json::array();
  for (const auto& b : prediction.boxes) {
    nlohmann::json jb = b;
    boxes.push_back(jb);
  }
  return {{"probability_maps", maps}, {"boxes", boxes}};
}

ExternalBackend::ExternalBackend(ExternalBackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw Error(Errc::InvalidArgument, "external backend needs an endpoint");
  if (config_.retries < 1) config_.retries = 1;
}

nlohmann::json ExternalBackend::call(const std::string& method, const std::string& path,
                                     const nlohmann::json* body) const {
  httplib::Client client(config_.endpoint);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  Errc last = Errc::BackendUnavailable;
  std::string last_msg;
  for (int attempt = 0; attempt < config_.retries; ++attempt) {
    if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    httplib::Result res = method == "GET" ? client.Get(path)
                                          : client.Post(path, body ? body->dump() : std::string("{}"),
                                                        "application/json");
    if (!res) {
      const auto err = res.error();
      last = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) ? Errc::Timeout
                                                                                      : Errc::BackendUnavailable;
      last_msg = config_.endpoint + path + ": " + httplib::to_string(err);
      spdlog::warn("external backend attempt {} failed: {}", attempt + 1, last_msg);
      continue;
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      if (res->status >= 200 && res->status < 300) throw Error(Errc::MalformedResponse, path + ": body is not JSON");
      parsed = nlohmann::json::object();
    }
    if (res->status >= 500) {
      last = Errc::RemoteError;
      last_msg = path + ": HTTP " + std::to_string(res->status) + " " + parsed.value("error", res->body);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      std::string message = parsed.is_object() ? parsed.value("error", std::string{}) : std::string{};
      if (message.empty()) message = res->body;
      throw Error(Errc::RemoteError, path + ": HTTP " + std::to_string(res->status) + " " + message);
    }
    return parsed;
  }
  throw Error(last, last_msg);
}

ModelHandle ExternalBackend::train(const TrainRequest& request, const TrainingSource& data) {
  request.hyperparams.validate();
  if (data.size() == 0) throw Error(Errc::EmptyTrainingSet, "no training examples");
  if (request.dataset_uri.empty()) throw Error(Errc::InvalidArgument, "external training needs a dataset_uri");
  nlohmann::json classes = nlohmann::json::array();
  for (auto c : request.classes) classes.push_back(std::string(to_string(c)));
  const nlohmann::json body{{"dataset_uri", request.dataset_uri},
                            {"classes", classes},
                            {"hyperparams", hyperparams_to_json(request.hyperparams)}};
  const auto reply = call("POST", "/train", &body);
  if (!reply.is_object() || !reply.contains("model_id") || !reply["model_id"].is_string()) {
    throw Error(Errc::MalformedResponse, "/train reply lacks model_id");
  }
  ModelHandle h;
  h.model_id = request.model_id;
  h.backend_kind = BackendKind::External;
  h.endpoint = config_.endpoint;
  h.training_manifest_id = request.training_manifest_id;
  h.remote_id = reply["model_id"].get<std::string>();
  h.resolution = data.get(0).image.width();
  std::lock_guard lock(mutex_);
  h.version = ++versions_[request.model_id];
  return h;
}

Prediction ExternalBackend::predict(const ModelHandle& model, const ImageF& image, const ImageId& image_id) const {
  if (model.resolution != 0 && image.width() != model.resolution) {
    throw Error(Errc::ResolutionMismatch, image_id + ": model trained at " + std::to_string(model.resolution));
  }
  const auto png = encode_png(to_u8(image));
  const nlohmann::json body{{"model_id", model.remote_id.empty() ? model.model_id : model.remote_id},
                            {"image", base64_encode(png)}};
  const auto reply = call("POST", "/predict", &body);
  return prediction_from_response(reply, image_id, image.width(), image.height());
}

bool ExternalBackend::healthy() const {
  try {
    const auto reply = call("GET", "/health", nullptr);
    return reply.is_object() && reply.value("status", std::string{}) == "ok";
  } catch (const Error&) {
    return false;
  }
}

}  // namespace defectloop
