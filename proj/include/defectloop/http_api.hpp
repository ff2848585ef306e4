#pragma once

// JSON-over-HTTP front of the labeling service and pipeline controller.
//
//   POST /labelers                     {labeler_id}
//   GET  /tasks/next?labeler=<id>      envelope, or 204 when there is no work
//   POST /tasks/<id>/annotation        {annotation, elapsed_seconds}
//   GET  /tasks/<id>/annotation        stored annotation
//   GET  /batches/<id>/consensus
//   POST /pipeline/start               pipeline config (+ image_ids, step_mode)
//   GET  /pipeline/status
//   POST /pipeline/advance | /pipeline/abort
//   GET  /reports/grid.csv
//   GET  /images/<id>.png
//
// Failures answer {"error": <Errc name>, "message": ...}.

#include "defectloop/backend.hpp"
#include "defectloop/labeling_service.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace defectloop {

/// DEFECTLOOP_DATA_ROOT when set, else `fallback`.
std::filesystem::path resolve_data_root(const std::filesystem::path& fallback);

/// HTTP status used for an error code.
int http_status_for(Errc code) noexcept;

/// Layout under the data root: images/<id>.png, grid_report.csv,
/// state/ (pipeline output) and ui/ (static assets, optional).
class ApiServer {
 public:
  ApiServer(std::filesystem::path data_root, ModelBackend& backend, LabelingServiceConfig labeling = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Returns the bound port (an ephemeral one when `port` is 0). Throws Io.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();
  void wait_until_ready() const;

  LabelingService& labeling() noexcept;
  PipelineController& pipeline() noexcept;
  [[nodiscard]] const std::filesystem::path& data_root() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace defectloop
