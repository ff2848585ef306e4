#include "defectloop/registry.hpp"

#include "defectloop/image_io.hpp"

#include <algorithm>

namespace defectloop {

namespace fs = std::filesystem;

ModelRegistry::ModelRegistry(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "models"); }

fs::path ModelRegistry::dir(const std::string& model_id) const {
  if (model_id.empty() || model_id.find_first_of("/\\") != std::string::npos || model_id == "." || model_id == "..") {
    throw Error(Errc::InvalidArgument, "bad model id '" + model_id + "'");
  }
  return root_ / "models" / model_id;
}

void ModelRegistry::save(const ModelHandle& handle, const std::string& params) {
  std::lock_guard lock(mutex_);
  const auto d = dir(handle.model_id);
  fs::create_directories(d);
  write_file_atomic(d / "params", params);
  write_file_atomic(d / "meta.json", handle_to_json(handle).dump(2) + "\n");
}

std::pair<ModelHandle, std::string> ModelRegistry::load(const std::string& model_id) const {
  std::lock_guard lock(mutex_);
  const auto d = dir(model_id);
  if (!fs::exists(d / "meta.json")) throw Error(Errc::NotFound, "model '" + model_id + "'");
  auto meta = nlohmann::json::parse(read_text_file(d / "meta.json"));
  return {handle_from_json(meta), read_text_file(d / "params")};
}

int ModelRegistry::latest_version(const std::string& model_id) const {
  try {
    return load(model_id).first.version;
  } catch (const Error& e) {
    if (e.code() == Errc::NotFound) return 0;
    throw;
  }
}

std::vector<std::string> ModelRegistry::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root_ / "models")) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace defectloop
