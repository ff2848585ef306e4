// defectloop command line: dataset preparation, training, evaluation, the
// experiment grid and the labeling service.

#include "defectloop/annotation_json.hpp"
#include "defectloop/augmentation.hpp"
#include "defectloop/external_backend.hpp"
#include "defectloop/http_api.hpp"
#include "defectloop/image_io.hpp"
#include "defectloop/metrics.hpp"
#include "defectloop/orchestrator.hpp"
#include "defectloop/preprocess.hpp"
#include "defectloop/reference_backend.hpp"
#include "defectloop/registry.hpp"
#include "defectloop/selection.hpp"
#include "defectloop/synthetic.hpp"

#include "CLI11.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

namespace fs = std::filesystem;
using namespace defectloop;

namespace {

struct Layout {
  fs::path root;

  fs::path manifest() const { return root / "manifest.json"; }
  fs::path image(int res, const ImageId& id) const { return root / "res" / std::to_string(res) / (id + ".png"); }
  fs::path labels(int res, const ImageId& id) const {
    return root / "labels" / std::to_string(res) / (id + ".json");
  }
  fs::path serving_image(const ImageId& id) const { return root / "images" / (id + ".png"); }
};

DatasetManifest load_manifest(const fs::path& path) {
  return manifest_from_json(nlohmann::json::parse(read_text_file(path)));
}

TrainingExample load_example(const Layout& layout, const ImageId& id, int res) {
  return TrainingExample{id, to_float(read_png(layout.image(res, id))),
                         annotation_set_from_json(nlohmann::json::parse(read_text_file(layout.labels(res, id))))};
}

std::unique_ptr<ModelBackend> make_backend(const std::string& endpoint, ModelRegistry* registry) {
  if (endpoint.empty()) return std::make_unique<ReferenceBackend>(registry);
  return std::make_unique<ExternalBackend>(ExternalBackendConfig{endpoint});
}

void write_example(const Layout& layout, int res, const ImageId& id, const ImageF& image, const AnnotationSet& labels) {
  fs::create_directories(layout.image(res, id).parent_path());
  fs::create_directories(layout.labels(res, id).parent_path());
  write_png(layout.image(res, id), to_u8(image));
  write_file_atomic(layout.labels(res, id), Json(labels).dump() + "\n");
}

ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"defect labeling and training loop"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  std::string data_root_opt = ".";
  auto root = [&] { return Layout{resolve_data_root(data_root_opt)}; };
  std::string endpoint;

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic labeled corpus");
  std::size_t synth_count = 60;
  std::uint64_t seed = 0;
  std::vector<int> resolutions{256, 512};
  double split = 0.9;
  synth->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  synth->add_option("--count", synth_count);
  synth->add_option("--seed", seed);
  synth->add_option("--resolution", resolutions)->delimiter(',');
  synth->add_option("--split", split);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "resample and filter a growth run");
  std::string run_dir;
  int window_s = 900;
  ingest->add_option("--run-dir", run_dir, "directory holding run.json")->required();
  ingest->add_option("--window-s", window_s);

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "crop, resize and split filtered frames");
  int pool = 300;
  bool denoise = false;
  prep->add_option("--run-dir", run_dir)->required();
  prep->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  prep->add_option("--resolution", resolutions)->delimiter(',');
  prep->add_option("--pool", pool);
  prep->add_option("--split", split);
  prep->add_option("--seed", seed);
  prep->add_flag("--denoise", denoise);

  // select
  auto* select = app.add_subcommand("select", "most uncertain unlabeled images");
  std::string model_id = "defectloop";
  std::size_t k = kDefaultBatchSize;
  int resolution = 256;
  select->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  select->add_option("--model-id", model_id);
  select->add_option("--k", k);
  select->add_option("--resolution", resolution);

  // augment
  auto* augment = app.add_subcommand("augment", "expand the train split");
  int rate = 2;
  augment->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  augment->add_option("--rate", rate);
  augment->add_option("--seed", seed);

  // train
  auto* train = app.add_subcommand("train", "train a model on the (expanded) train split");
  train->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  train->add_option("--model-id", model_id);
  train->add_option("--resolution", resolution);
  train->add_option("--rate", rate);
  train->add_option("--seed", seed);
  train->add_option("--endpoint", endpoint, "external trainer URL");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a registered model on the test split");
  eval->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  eval->add_option("--model-id", model_id);
  eval->add_option("--endpoint", endpoint);

  // grid
  auto* grid = app.add_subcommand("grid", "resolution x dataset-size experiment grid");
  std::vector<int> rates{2, 5, 10};
  bool serial = false;
  grid->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  grid->add_option("--resolution", resolutions)->delimiter(',');
  grid->add_option("--rates", rates)->delimiter(',');
  grid->add_option("--seed", seed);
  grid->add_flag("--serial", serial);

  // report
  auto* report = app.add_subcommand("report", "print the grid report and pipeline state");
  report->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");

  // serve
  auto* serve = app.add_subcommand("serve", "labeling and pipeline HTTP service");
  int port = 8080;
  std::string host = "0.0.0.0";
  std::size_t redundancy = 1;
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--data-root", data_root_opt, "defaults to ., overridden by DEFECTLOOP_DATA_ROOT");
  serve->add_option("--redundancy", redundancy, "labelers per image");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth) {
      const Layout layout = root();
      const auto corpus = make_corpus(synth_count, seed);
      DatasetManifest m;
      m.dataset_id = "synthetic";
      m.split_seed = seed;
      const auto parts = split_dataset(corpus.ids, split, seed);
      for (const auto& id : parts.train) m.split[id] = Split::Train;
      for (const auto& id : parts.test) m.split[id] = Split::Test;
      for (const auto& id : corpus.ids) {
        const auto& scene = corpus.scenes.at(id);
        for (int res : resolutions) write_example(layout, res, id, render_scene(scene, res), scene_labels(scene, res, id));
        fs::create_directories(layout.serving_image(id).parent_path());
        fs::copy_file(layout.image(resolutions.front(), id), layout.serving_image(id),
                      fs::copy_options::overwrite_existing);
        m.entries.push_back(DatasetEntry{id, resolutions.front(), Box{0, 0, resolutions.front(), resolutions.front()}, {}});
      }
      write_file_atomic(layout.manifest(), manifest_to_json(m).dump(2) + "\n");
      std::cout << corpus.ids.size() << " images (" << parts.train.size() << " train / " << parts.test.size()
                << " test) in " << layout.root.string() << "\n";
    } else if (*ingest) {
      const fs::path dir = run_dir;
      const auto run = run_manifest_from_json(nlohmann::json::parse(read_text_file(dir / "run.json")));
      run.validate();
      PreprocessConfig cfg;
      cfg.window_seconds = window_s;
      cfg.validate();
      const auto sampled = resample_sequence(run.frames, window_s);
      const auto result = filter_frames(sampled, cfg, [&](const ImageRecord& r) { return read_png(dir / r.storage_path); });
      GrowthRunManifest out = run;
      out.frames = result.kept;
      write_file_atomic(dir / "filtered.json", run_manifest_to_json(out).dump(2) + "\n");
      nlohmann::json rejected = nlohmann::json::array();
      for (const auto& r : result.rejected) rejected.push_back(Json(r));
      write_file_atomic(dir / "rejected.json", rejected.dump(2) + "\n");
      std::cout << run.frames.size() << " frames, " << sampled.size() << " after resampling, " << result.kept.size()
                << " kept, " << result.rejected.size() << " rejected\n";
    } else if (*prep) {
      const fs::path dir = run_dir;
      const Layout layout = root();
      const auto run = run_manifest_from_json(nlohmann::json::parse(read_text_file(dir / "filtered.json")));
      PreprocessConfig cfg;
      cfg.target_resolutions = resolutions;
      cfg.pool_size = pool;
      cfg.split_ratio = split;
      cfg.split_seed = seed;
      cfg.validate();
      std::vector<ImageId> ids;
      DatasetManifest m;
      m.dataset_id = run.growth_run_id;
      m.split_seed = seed;
      for (const auto& frame : run.frames) {
        if (ids.size() >= static_cast<std::size_t>(pool)) break;
        const Image8 raw = read_png(dir / frame.storage_path);
        const Box crop = centered_square_crop(static_cast<int>(raw.width()), static_cast<int>(raw.height()));
        for (int res : resolutions) {
          const auto path = layout.image(res, frame.image_id);
          fs::create_directories(path.parent_path());
          write_png(path, to_u8(preprocess_image(raw, crop, res, denoise)));
        }
        fs::create_directories(layout.serving_image(frame.image_id).parent_path());
        fs::copy_file(layout.image(resolutions.front(), frame.image_id), layout.serving_image(frame.image_id),
                      fs::copy_options::overwrite_existing);
        m.entries.push_back(DatasetEntry{frame.image_id, resolutions.front(), crop, {}});
        ids.push_back(frame.image_id);
      }
      const auto parts = split_dataset(ids, split, seed);
      for (const auto& id : parts.train) m.split[id] = Split::Train;
      for (const auto& id : parts.test) m.split[id] = Split::Test;
      write_file_atomic(layout.manifest(), manifest_to_json(m).dump(2) + "\n");
      std::cout << ids.size() << " images (" << parts.train.size() << " train / " << parts.test.size() << " test)\n";
    } else if (*select) {
      const Layout layout = root();
      ModelRegistry registry(layout.root);
      ReferenceBackend backend(&registry);
      const auto handle = registry.load(model_id).first;
      const auto m = load_manifest(layout.manifest());
      std::vector<ImageId> unlabeled;
      for (const auto& id : m.ids_in(Split::Train, true)) {
        if (!fs::exists(layout.labels(resolution, id))) unlabeled.push_back(id);
      }
      std::map<ImageId, double> scores;
      FeatureMap features;
      for (const auto& id : unlabeled) {
        const ImageF img = to_float(read_png(layout.image(resolution, id)));
        scores[id] = score_uncertainty(backend.predict(handle, img, id)).score;
        features[id] = histogram_features(img);
      }
      for (const auto& id : select_batch(unlabeled, scores, &features, k)) std::cout << id << "\n";
    } else if (*augment) {
      const Layout layout = root();
      AugmentationPlan plan;
      plan.rate = rate;
      plan.seed = seed;
      const auto expanded = expand_dataset(load_manifest(layout.manifest()), plan);
      const auto out = layout.root / ("manifest_x" + std::to_string(rate) + ".json");
      write_file_atomic(out, manifest_to_json(expanded).dump(2) + "\n");
      std::cout << expanded.count_entries(Split::Train) << " train entries -> " << out.string() << "\n";
    } else if (*train) {
      const Layout layout = root();
      ModelRegistry registry(layout.root);
      auto backend = make_backend(endpoint, &registry);
      AugmentationPlan plan;
      plan.rate = rate;
      plan.seed = seed;
      auto m = load_manifest(layout.manifest());
      for (auto& e : m.entries) e.resolution = resolution;
      const auto expanded = expand_dataset(m, plan);
      ManifestTrainingSource source(expanded, [&](const ImageId& id) { return load_example(layout, id, resolution); });
      TrainRequest req;
      req.model_id = model_id;
      req.training_manifest_id = expanded.dataset_id;
      req.dataset_uri = fs::absolute(layout.root).string();
      const auto handle = backend->train(req, source);
      if (!endpoint.empty()) registry.save(handle, "{}");
      std::cout << handle_to_json(handle).dump(2) << "\n";
    } else if (*eval) {
      const Layout layout = root();
      ModelRegistry registry(layout.root);
      auto backend = make_backend(endpoint, &registry);
      const auto handle = registry.load(model_id).first;
      const auto m = load_manifest(layout.manifest());
      std::map<ImageId, Prediction> preds;
      std::map<ImageId, AnnotationSet> gt;
      for (const auto& id : m.ids_in(Split::Test, true)) {
        auto ex = load_example(layout, id, handle.resolution);
        preds[id] = backend->predict(handle, ex.image, id);
        gt[id] = std::move(ex.labels);
      }
      EvaluationConfig cfg;
      cfg.dataset_id = m.dataset_id;
      cfg.resolution = handle.resolution;
      cfg.dataset_size = m.count_entries(Split::Train);
      // expanded manifests are named <dataset>_x<rate>
      const auto& trained_on = handle.training_manifest_id;
      if (const auto pos = trained_on.rfind("_x"); pos != std::string::npos && trained_on.substr(0, pos) == m.dataset_id) {
        cfg.dataset_id = trained_on;
        cfg.dataset_size *= static_cast<std::size_t>(std::stoul(trained_on.substr(pos + 2)));
      }
      std::cout << report_to_json(evaluate(preds, gt, cfg).report).dump(2) << "\n";
    } else if (*grid) {
      const Layout layout = root();
      ReferenceBackend backend;
      GridConfig cfg;
      cfg.resolutions = resolutions;
      cfg.rates = rates;
      cfg.seed = seed;
      cfg.parallel = !serial;
      cfg.output_dir = layout.root;
      const auto result = run_experiment_grid(
          load_manifest(layout.manifest()), [&](const ImageId& id, int res) { return load_example(layout, id, res); },
          backend, cfg);
      std::cout << result.csv();
    } else if (*report) {
      const Layout layout = root();
      bool any = false;
      if (fs::exists(layout.root / "grid_report.csv")) {
        std::cout << read_text_file(layout.root / "grid_report.csv");
        any = true;
      }
      const auto state = layout.root / "state" / "pipeline_state.json";
      if (fs::exists(state)) {
        const auto j = nlohmann::json::parse(read_text_file(state));
        std::cout << "phase " << j.at("phase").get<std::string>() << ", accuracy " << j.at("current_accuracy")
                  << ", batches " << j.at("batches_processed") << (j.value("incomplete", false) ? " (incomplete)" : "")
                  << "\n";
        any = true;
      }
      if (!any) {
        std::cerr << "nothing to report in " << layout.root.string() << "\n";
        return 1;
      }
    } else if (*serve) {
      const Layout layout = root();
      ModelRegistry registry(layout.root);
      ReferenceBackend backend(&registry);
      LabelingServiceConfig lcfg;
      lcfg.redundancy = redundancy;
      ApiServer server(layout.root, backend, lcfg);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.bind(host, port);
      server.serve();
      g_server = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
