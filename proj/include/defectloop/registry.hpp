#pragma once

// On-disk model store: <root>/models/<model_id>/{params,meta.json}.

#include "defectloop/backend.hpp"

#include <filesystem>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace defectloop {

class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root);

  /// Atomic per file; params first so meta.json never points at missing data.
  void save(const ModelHandle& handle, const std::string& params);

  /// Throws NotFound.
  [[nodiscard]] std::pair<ModelHandle, std::string> load(const std::string& model_id) const;

  /// 0 when the model has never been saved.
  [[nodiscard]] int latest_version(const std::string& model_id) const;

  [[nodiscard]] std::vector<std::string> list() const;

  [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path dir(const std::string& model_id) const;

  std::filesystem::path root_;
  mutable std::mutex mutex_;
};

}  // namespace defectloop
