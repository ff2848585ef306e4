#include "defectloop/http_api.hpp"

#include "defectloop/image_io.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>

namespace defectloop {

namespace fs = std::filesystem;

fs::path resolve_data_root(const fs::path& fallback) {
  if (const char* env = std::getenv("DEFECTLOOP_DATA_ROOT"); env && *env) return env;
  return fallback;
}

int http_status_for(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownLabeler:
    case Errc::UnknownTask:
    case Errc::NotFound:
    case Errc::NoActiveRun:
      return 404;
    case Errc::AlreadyRunning:
    case Errc::IllegalTransition:
      return 409;
    case Errc::LeaseExpired:
      return 410;
    case Errc::ValidationFailed:
    case Errc::InvalidAnnotation:
    case Errc::SumMismatch:
    case Errc::DegeneratePolygon:
      return 422;
    case Errc::BackendUnavailable:
    case Errc::Timeout:
    case Errc::RemoteError:
    case Errc::Io:
      return 503;
    default:
      return 400;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, Errc code, const std::string& message) {
  send_json(res, http_status_for(code), {{"error", std::string(to_string(code))}, {"message", message}});
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("body is not JSON: ") + e.what());
  }
}

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." && id.find('/') == std::string::npos &&
         id.find('\\') == std::string::npos;
}

}  // namespace

struct ApiServer::Impl {
  Impl(fs::path root, ModelBackend& backend, LabelingServiceConfig labeling)
      : data_root(std::move(root)),
        service(std::move(labeling)),
        controller(backend, service, [this](const ImageId& id) { return to_float(read_png(image_path(id))); }) {}

  fs::path image_path(const ImageId& id) const {
    if (!safe_id(id)) throw Error(Errc::InvalidArgument, "bad image id '" + id + "'");
    return data_root / "images" / (id + ".png");
  }

  std::vector<ImageId> all_images() const {
    std::vector<ImageId> ids;
    const auto dir = data_root / "images";
    if (!fs::is_directory(dir)) return ids;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  void routes();

  fs::path data_root;
  LabelingService service;
  PipelineController controller;
  httplib::Server server;
};

void ApiServer::Impl::routes() {
  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.detail());
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
      }
    };
  };

  server.Post("/labelers", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                if (!body.contains("labeler_id") || !body["labeler_id"].is_string()) {
                  throw Error(Errc::InvalidArgument, "labeler_id (string) required");
                }
                const std::string id = body["labeler_id"];
                service.register_labeler(id);
                send_json(res, 201, {{"labeler_id", id}});
              }));

  server.Get("/tasks/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("labeler")) throw Error(Errc::InvalidArgument, "labeler query parameter required");
               auto task = service.next_task(req.get_param_value("labeler"));
               if (!task) {
                 res.status = 204;
                 return;
               }
               send_json(res, 200, envelope_to_json(*task));
             }));

  server.Post(R"(/tasks/([^/]+)/annotation)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string task_id = req.matches[1];
                const auto body = parse_body(req);
                if (!body.contains("annotation")) throw Error(Errc::ValidationFailed, "annotation required");
                std::optional<double> elapsed;
                if (body.contains("elapsed_seconds") && !body["elapsed_seconds"].is_null()) {
                  if (!body["elapsed_seconds"].is_number()) {
                    throw Error(Errc::ValidationFailed, "elapsed_seconds must be a number");
                  }
                  elapsed = body["elapsed_seconds"].get<double>();
                }
                service.submit_json(task_id, body["annotation"], elapsed);
                send_json(res, 200, {{"task_id", task_id}, {"status", "stored"}});
              }));

  server.Get(R"(/tasks/([^/]+)/annotation)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               res.set_content(service.submitted_json(req.matches[1]), "application/json");
             }));

  server.Get(R"(/batches/([^/]+)/consensus)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.consensus_report(req.matches[1]));
             }));

  server.Post("/pipeline/start", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                RunRequest run;
                run.config = pipeline_config_from_json(body);
                if (!run.config.state_dir) run.config.state_dir = data_root / "state";
                run.step_mode = body.value("step_mode", false);
                if (body.contains("image_ids")) {
                  for (const auto& id : body["image_ids"]) run.image_ids.push_back(id.get<std::string>());
                } else {
                  run.image_ids = all_images();
                }
                controller.start(std::move(run));
                send_json(res, 202, controller.status());
              }));

  server.Get("/pipeline/status", guarded([this](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, controller.status());
             }));

  server.Post("/pipeline/advance", guarded([this](const httplib::Request&, httplib::Response& res) {
                controller.advance();
                send_json(res, 200, controller.status());
              }));

  server.Post("/pipeline/abort", guarded([this](const httplib::Request&, httplib::Response& res) {
                send_json(res, 200, controller.abort());
              }));

  server.Get("/reports/grid.csv", guarded([this](const httplib::Request&, httplib::Response& res) {
               const auto path = data_root / "grid_report.csv";
               if (!fs::exists(path)) throw Error(Errc::NotFound, "no grid report yet");
               res.set_content(read_text_file(path), "text/csv");
             }));

  server.Get(R"(/images/([^/]+)\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto path = image_path(req.matches[1]);
               if (!fs::exists(path)) throw Error(Errc::NotFound, "image '" + std::string(req.matches[1]) + "'");
               res.set_content(read_text_file(path), "image/png");
             }));

  if (fs::is_directory(data_root / "ui")) server.set_mount_point("/ui", (data_root / "ui").string());

  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

ApiServer::ApiServer(fs::path data_root, ModelBackend& backend, LabelingServiceConfig labeling)
    : impl_(std::make_unique<Impl>(std::move(data_root), backend, std::move(labeling))) {
  impl_->routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
  spdlog::info("listening on {}:{} (data root {})", host, bound, impl_->data_root.string());
  return bound;
}

void ApiServer::serve() { impl_->server.listen_after_bind(); }

void ApiServer::stop() {
  if (impl_) impl_->server.stop();
}

void ApiServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

LabelingService& ApiServer::labeling() noexcept { return impl_->service; }
PipelineController& ApiServer::pipeline() noexcept { return impl_->controller; }
const fs::path& ApiServer::data_root() const noexcept { return impl_->data_root; }

}  // namespace defectloop
