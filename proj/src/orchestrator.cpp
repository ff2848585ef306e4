#include "defectloop/orchestrator.hpp"

#include "defectloop/annotation_json.hpp"
#include "defectloop/image_io.hpp"
#include "defectloop/selection.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <future>
#include <set>

namespace defectloop {

namespace fs = std::filesystem;

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::BaselineTraining: return "BaselineTraining";
    case Phase::MALAssisted: return "MALAssisted";
    case Phase::Final: return "Final";
    case Phase::Done: return "Done";
  }
  return "Unknown";
}

Phase phase_from_string(std::string_view s) {
  for (auto p : {Phase::BaselineTraining, Phase::MALAssisted, Phase::Final, Phase::Done}) {
    if (to_string(p) == s) return p;
  }
  throw Error(Errc::InvalidArgument, "unknown phase '" + std::string(s) + "'");
}

Phase next_phase(Phase current) {
  switch (current) {
    case Phase::BaselineTraining: return Phase::MALAssisted;
    case Phase::MALAssisted: return Phase::Final;
    case Phase::Final: return Phase::Done;
    case Phase::Done: break;
  }
  throw Error(Errc::IllegalTransition, "no phase after Done");
}

void PipelineConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(baseline_threshold) || !unit(final_threshold) || !unit(sal_threshold)) {
    throw Error(Errc::InvalidArgument, "thresholds must lie in [0,1]");
  }
  if (baseline_threshold > final_threshold) throw Error(Errc::InvalidArgument, "baseline threshold above final");
  if (max_sal_iterations < 0) throw Error(Errc::InvalidArgument, "max_sal_iterations must be >= 0");
  if (max_batches == 0 || batch_size == 0) throw Error(Errc::InvalidArgument, "max_batches and batch_size must be >= 1");
  if (resolution < 1) throw Error(Errc::InvalidArgument, "resolution must be positive");
  if (model_id.empty()) throw Error(Errc::InvalidArgument, "model_id required");
  hyperparams.validate();
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json j{{"baseline_threshold", c.baseline_threshold},
                   {"final_threshold", c.final_threshold},
                   {"sal_threshold", c.sal_threshold},
                   {"max_sal_iterations", c.max_sal_iterations},
                   {"max_batches", c.max_batches},
                   {"batch_size", c.batch_size},
                   {"resolution", c.resolution},
                   {"sal_copies", c.sal_copies},
                   {"split_ratio", c.split_ratio},
                   {"seed", c.seed},
                   {"model_id", c.model_id},
                   {"dataset_id", c.dataset_id},
                   {"hyperparams", hyperparams_to_json(c.hyperparams)}};
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.baseline_threshold = j.value("baseline_threshold", c.baseline_threshold);
    c.final_threshold = j.value("final_threshold", c.final_threshold);
    c.sal_threshold = j.value("sal_threshold", c.sal_threshold);
    c.max_sal_iterations = j.value("max_sal_iterations", c.max_sal_iterations);
    c.max_batches = j.value("max_batches", c.max_batches);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.resolution = j.value("resolution", c.resolution);
    c.sal_copies = j.value("sal_copies", c.sal_copies);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.seed = j.value("seed", c.seed);
    c.model_id = j.value("model_id", c.model_id);
    c.dataset_id = j.value("dataset_id", c.dataset_id);
    if (j.contains("hyperparams")) c.hyperparams = hyperparams_from_json(j.at("hyperparams"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json pipeline_state_to_json(const PipelineState& s) {
  auto log = nlohmann::json::array();
  for (const auto& e : s.log) {
    nlohmann::json row{{"phase", std::string(to_string(e.phase))},
                       {"iteration", e.iteration},
                       {"batch_id", e.batch_id},
                       {"labeled", e.labeled},
                       {"training_size", e.training_size},
                       {"accuracy", e.accuracy}};
    if (e.mean_correction_edits) row["mean_correction_edits"] = *e.mean_correction_edits;
    if (e.mean_labeling_seconds) row["mean_labeling_seconds"] = *e.mean_labeling_seconds;
    log.push_back(row);
  }
  nlohmann::json j{{"phase", std::string(to_string(s.phase))},
                   {"current_accuracy", s.current_accuracy},
                   {"baseline_threshold", s.baseline_threshold},
                   {"final_threshold", s.final_threshold},
                   {"sal_iterations_done", s.sal_iterations_done},
                   {"batches_processed", s.batches_processed},
                   {"max_batches", s.max_batches},
                   {"incomplete", s.incomplete},
                   {"log", log}};
  if (s.incomplete) j["incomplete_reason"] = s.incomplete_reason;
  if (s.model) j["model"] = handle_to_json(*s.model);
  return j;
}

nlohmann::json relabel_report_to_json(const RelabelReport& r) {
  return {{"iteration", r.iteration},
          {"image_ids", r.image_ids},
          {"per_image_accuracy", r.per_image_accuracy},
          {"generated_at", r.generated_at}};
}

Evaluation BackendEvaluator::evaluate(const ModelHandle& model, std::span<const ImageId> ids,
                                      const std::map<ImageId, AnnotationSet>& labels) {
  std::map<ImageId, Prediction> preds;
  std::map<ImageId, AnnotationSet> gt;
  for (const auto& id : ids) {
    auto it = labels.find(id);
    if (it == labels.end()) throw Error(Errc::NotFound, "no labels for '" + id + "'");
    const ImageF img = images_(id);
    preds[id] = backend_.predict(model, img, id);
    gt[id] = it->second;
  }
  EvaluationConfig cfg = config_;
  cfg.dataset_size = ids.size();
  cfg.resolution = model.resolution;
  return defectloop::evaluate(preds, gt, cfg);
}

Pipeline::Pipeline(PipelineConfig config, ModelBackend& backend, LabelingDesk& desk, ImageProvider images,
                   std::span<const ImageId> image_ids, Evaluator* evaluator)
    : config_(std::move(config)), backend_(backend), desk_(desk), images_(std::move(images)) {
  config_.validate();
  if (evaluator) {
    evaluator_ = evaluator;
  } else {
    owned_evaluator_ = std::make_unique<BackendEvaluator>(backend_, images_, config_.evaluation);
    evaluator_ = owned_evaluator_.get();
  }
  auto split = split_dataset(image_ids, config_.split_ratio, config_.seed);
  pool_ = std::move(split.train);
  test_ = std::move(split.test);
  manifest_.dataset_id = config_.dataset_id;
  manifest_.split_seed = config_.seed;
  state_.baseline_threshold = config_.baseline_threshold;
  state_.final_threshold = config_.final_threshold;
  state_.max_batches = config_.max_batches;
  if (config_.state_dir) fs::create_directories(*config_.state_dir);
}

PipelineState Pipeline::state() const { return state_; }

void Pipeline::persist() const {
  if (observer_) observer_(state_);
  if (!config_.state_dir) return;
  auto j = pipeline_state_to_json(state_);
  j["pool"] = pool_;
  j["test_ids"] = test_;
  j["config"] = pipeline_config_to_json(config_);
  write_file_atomic(*config_.state_dir / "pipeline_state.json", j.dump(2) + "\n");
}

void Pipeline::enter(Phase next) {
  if (next_phase(state_.phase) != next) {
    throw Error(Errc::IllegalTransition,
                std::string(to_string(state_.phase)) + " -> " + std::string(to_string(next)));
  }
  spdlog::info("pipeline phase {} -> {}", to_string(state_.phase), to_string(next));
  state_.phase = next;
}

Pipeline::BatchOutcome Pipeline::label_batch(std::vector<ImageId> ids, bool preannotate, bool test_split) {
  BatchOutcome out;
  char name[32];
  std::snprintf(name, sizeof name, "%s%03zu", test_split ? "test-" : "batch-", ++batch_counter_);
  out.batch_id = name;

  LabelingBatch batch;
  batch.batch_id = out.batch_id;
  batch.image_ids = ids;
  std::map<ImageId, AnnotationSet> preds;
  if (preannotate) {
    if (!state_.model) throw Error(Errc::UntrainedModel, "pre-annotation needs a model");
    for (const auto& id : ids) {
      preds[id] = to_annotation(backend_.predict(*state_.model, images_(id), id), state_.model->model_id);
    }
  }
  batch = attach_preannotations(std::move(batch), preds);

  auto submitted = desk_.label(batch);
  batch.advance(BatchStatus::AwaitingConsensus);

  std::vector<ConsensusResult> results;
  std::vector<ImageId> returned;
  double edits = 0.0, seconds = 0.0;
  std::size_t edits_n = 0, seconds_n = 0;
  for (const auto& id : ids) {
    auto it = submitted.find(id);
    if (it == submitted.end() || it->second.empty()) {
      returned.push_back(id);
      continue;
    }
    for (const auto& s : it->second) {
      if (s.elapsed_labeling_seconds) {
        seconds += *s.elapsed_labeling_seconds;
        ++seconds_n;
      }
    }
    results.push_back(merge_consensus(it->second, config_.consensus));
  }
  batch.advance(BatchStatus::AwaitingExpert);

  for (const auto& result : results) {
    const AnnotationSet crowd = apply_review(result.merged, ReviewDecision::CrowdApprove);
    const AnnotationSet verdict = apply_review(crowd, desk_.expert_review(result));
    if (verdict.review_state != ReviewState::ExpertApproved) {
      returned.push_back(result.image_id);
      continue;
    }
    approved_[result.image_id] = verdict;
    ++out.labeled;
    manifest_.split[result.image_id] = test_split ? Split::Test : Split::Train;
    manifest_.entries.push_back(
        DatasetEntry{result.image_id, config_.resolution, Box{0, 0, config_.resolution, config_.resolution}, {}});
    const auto& draft = batch.drafts.at(result.image_id);
    if (draft.seeded_from) {
      CorrectionCost cost = correction_cost(draft, verdict);
      const auto& sets = submitted.at(result.image_id);
      double s = 0.0;
      std::size_t n = 0;
      for (const auto& set : sets) {
        if (set.elapsed_labeling_seconds) {
          s += *set.elapsed_labeling_seconds;
          ++n;
        }
      }
      if (n) cost.seconds = s / static_cast<double>(n);
      edits += static_cast<double>(cost.total_edits());
      ++edits_n;
      costs_.push_back(cost);
    }
    if (config_.state_dir) {
      const auto dir = *config_.state_dir / "annotations";
      fs::create_directories(dir);
      write_file_atomic(dir / (result.image_id + ".json"), Json(verdict).dump() + "\n");
    }
  }
  batch.advance(BatchStatus::Finalized);

  if (config_.state_dir) {
    const auto dir = *config_.state_dir / "consensus";
    fs::create_directories(dir);
    write_file_atomic(dir / (out.batch_id + ".json"), consensus_report_json(out.batch_id, results).dump(2) + "\n");
  }
  for (auto& id : returned) {
    spdlog::info("'{}' returned for relabeling", id);
    if (!test_split) pool_.push_back(std::move(id));
  }
  if (edits_n) out.mean_edits = edits / static_cast<double>(edits_n);
  if (seconds_n) out.mean_seconds = seconds / static_cast<double>(seconds_n);
  return out;
}

void Pipeline::label_test_set() {
  if (test_labeled_) return;
  std::vector<ImageId> pending = test_;
  for (int attempt = 0; attempt < 3 && !pending.empty(); ++attempt) {
    for (std::size_t i = 0; i < pending.size(); i += config_.batch_size) {
      const auto end = std::min(pending.size(), i + config_.batch_size);
      label_batch({pending.begin() + static_cast<std::ptrdiff_t>(i), pending.begin() + static_cast<std::ptrdiff_t>(end)},
                  false, true);
    }
    std::erase_if(pending, [&](const ImageId& id) { return approved_.contains(id); });
  }
  if (!pending.empty()) {
    spdlog::warn("{} test images never approved; evaluating without them", pending.size());
    std::erase_if(test_, [&](const ImageId& id) { return !approved_.contains(id); });
  }
  test_labeled_ = true;
  persist();
}

void Pipeline::set_model(const ModelHandle& model) {
  label_test_set();
  state_.model = model;
  state_.current_accuracy = evaluate_test();
  persist();
}

std::vector<ImageId> Pipeline::approved_train_originals() const {
  std::vector<ImageId> ids;
  for (const auto& e : manifest_.entries) {
    if (e.is_original() && manifest_.split.at(e.image_id) == Split::Train) ids.push_back(e.image_id);
  }
  return ids;
}

std::vector<ImageId> Pipeline::choose_batch() {
  if (pool_.empty()) throw Error(Errc::EmptyPool, "labeling pool is empty");
  std::vector<ImageId> chosen;
  if (!state_.model) {
    std::vector<ImageId> rest = pool_;
    chosen = create_batch(rest, config_.batch_size, "selection").image_ids;
  } else {
    std::map<ImageId, double> scores;
    FeatureMap features;
    for (const auto& id : pool_) {
      const ImageF img = images_(id);
      scores[id] = score_uncertainty(backend_.predict(*state_.model, img, id)).score;
      features[id] = histogram_features(img);
    }
    chosen = select_batch(pool_, scores, &features, config_.batch_size);
  }
  const std::set<ImageId> picked(chosen.begin(), chosen.end());
  std::erase_if(pool_, [&](const ImageId& id) { return picked.contains(id); });
  return chosen;
}

void Pipeline::retrain() {
  std::set<DefectClass> present;
  for (const auto& id : approved_train_originals()) {
    const auto& set = approved_.at(id);
    if (set.review_state != ReviewState::ExpertApproved) {
      throw Error(Errc::IllegalTransition, "'" + id + "' is not expert-approved");
    }
    for (const auto& m : set.masks) {
      if (m.foreground_count() > 0) present.insert(m.defect_class());
    }
    for (const auto& b : set.boxes) present.insert(b.cls);
  }
  if (present.empty()) {
    spdlog::warn("no labeled defects yet; skipping training");
    return;
  }
  ManifestTrainingSource source(manifest_, [this](const ImageId& id) {
    return TrainingExample{id, images_(id), approved_.at(id)};
  });
  TrainRequest req;
  req.model_id = config_.model_id;
  req.training_manifest_id = manifest_.dataset_id + "@" + std::to_string(manifest_.entries.size());
  req.classes.assign(present.begin(), present.end());
  req.hyperparams = config_.hyperparams;
  if (config_.state_dir) req.dataset_uri = fs::absolute(*config_.state_dir).string();
  state_.model = backend_.train(req, source);
}

double Pipeline::evaluate_test() {
  if (!state_.model || test_.empty()) return 0.0;
  return evaluator_->evaluate(*state_.model, test_, approved_).report.mean_accuracy;
}

std::map<ImageId, double> Pipeline::evaluate_training() {
  if (!state_.model) return {};
  const auto ids = approved_train_originals();
  if (ids.empty()) return {};
  return evaluator_->evaluate(*state_.model, ids, approved_).per_image_accuracy;
}

PhaseLogEntry Pipeline::make_entry(Phase phase, std::size_t iteration, const BatchOutcome* batch) {
  PhaseLogEntry e;
  e.phase = phase;
  e.iteration = iteration;
  e.training_size = manifest_.count_entries(Split::Train);
  e.accuracy = state_.current_accuracy;
  if (batch) {
    e.batch_id = batch->batch_id;
    e.labeled = batch->labeled;
    e.mean_correction_edits = batch->mean_edits;
    e.mean_labeling_seconds = batch->mean_seconds;
  }
  state_.log.push_back(e);
  return e;
}

PhaseResult Pipeline::run_baseline_phase() {
  if (state_.phase != Phase::BaselineTraining) {
    throw Error(Errc::IllegalTransition, "baseline phase already finished");
  }
  label_test_set();
  PhaseResult res;
  auto stop = [&](Errc why, const std::string& msg) {
    res.status = PhaseStatus::Incomplete;
    res.reason = why;
    state_.incomplete = true;
    state_.incomplete_reason = std::string(to_string(why)) + ": " + msg;
    persist();
    return res;
  };
  if (state_.model && state_.current_accuracy >= config_.baseline_threshold) {
    enter(Phase::MALAssisted);
    persist();
    return res;
  }
  for (std::size_t it = 1;; ++it) {
    if (it > config_.max_batches) return stop(Errc::MaxBatchesExceeded, "baseline phase");
    if (pool_.empty()) return stop(Errc::EmptyPool, "pool exhausted before the baseline threshold");
    if (!gate_open()) return stop(Errc::Aborted, "baseline phase");
    const auto outcome = label_batch(choose_batch(), state_.model.has_value(), false);
    retrain();
    state_.current_accuracy = evaluate_test();
    ++state_.batches_processed;
    res.log.push_back(make_entry(Phase::BaselineTraining, it, &outcome));
    spdlog::info("baseline batch {}: accuracy {:.4f}", it, state_.current_accuracy);
    persist();
    if (state_.current_accuracy >= config_.baseline_threshold) {
      enter(Phase::MALAssisted);
      persist();
      return res;
    }
  }
}

std::vector<RelabelReport> Pipeline::run_sal_loop() {
  if (state_.phase != Phase::MALAssisted) throw Error(Errc::IllegalTransition, "SAL loop runs after the baseline phase");
  if (!state_.model) throw Error(Errc::UntrainedModel, "SAL loop needs a trained model");
  std::vector<RelabelReport> reports;
  std::map<ImageId, double> accuracy = evaluate_training();
  std::optional<std::set<ImageId>> persistent;
  for (int it = 1; it <= config_.max_sal_iterations; ++it) {
    if (!gate_open()) {
      state_.incomplete = true;
      state_.incomplete_reason = "Aborted: SAL loop";
      break;
    }
    const auto low = select_for_augmentation(accuracy, config_.sal_threshold);
    if (low.empty()) break;
    manifest_ = append_augmentations(manifest_, low, config_.sal_copies, config_.ranges,
                                     derive_seed(config_.seed, "sal", static_cast<std::size_t>(it)),
                                     "sal" + std::to_string(it) + "_");
    retrain();
    accuracy = evaluate_training();

    RelabelReport report;
    report.iteration = it;
    report.generated_at = std::chrono::duration_cast<std::chrono::seconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
    if (!persistent) persistent.emplace(low.begin(), low.end());
    std::set<ImageId> still_low;
    for (const auto& id : select_for_augmentation(accuracy, config_.sal_threshold)) {
      if (!persistent->contains(id)) continue;
      still_low.insert(id);
      report.image_ids.push_back(id);
      report.per_image_accuracy[id] = accuracy.at(id);
    }
    *persistent = std::move(still_low);
    state_.current_accuracy = evaluate_test();
    ++state_.sal_iterations_done;
    make_entry(Phase::MALAssisted, static_cast<std::size_t>(it), nullptr);
    if (config_.state_dir) {
      write_file_atomic(*config_.state_dir / ("relabel_" + std::to_string(it) + ".json"),
                        relabel_report_to_json(report).dump(2) + "\n");
    }
    spdlog::info("SAL iteration {}: {} low images, {} persist, test accuracy {:.4f}", it, low.size(),
                 report.image_ids.size(), state_.current_accuracy);
    reports.push_back(std::move(report));
    persist();
  }
  reports_.insert(reports_.end(), reports.begin(), reports.end());
  return reports;
}

PhaseResult Pipeline::run_final_phase() {
  if (state_.phase != Phase::MALAssisted && state_.phase != Phase::Final) {
    throw Error(Errc::IllegalTransition, "final phase needs MAL mode");
  }
  if (!state_.model) throw Error(Errc::UntrainedModel, "final phase needs a trained model");
  PhaseResult res;
  auto finish = [&]() {
    if (state_.phase == Phase::MALAssisted) enter(Phase::Final);
    enter(Phase::Done);
    persist();
  };
  for (std::size_t it = 1;; ++it) {
    if (state_.current_accuracy >= config_.final_threshold) {
      finish();
      return res;
    }
    if (it > config_.max_batches || !gate_open()) {
      const Errc why = it > config_.max_batches ? Errc::MaxBatchesExceeded : Errc::Aborted;
      res.status = PhaseStatus::Incomplete;
      res.reason = why;
      state_.incomplete = true;
      state_.incomplete_reason = std::string(to_string(why)) + ": final phase";
      if (why == Errc::MaxBatchesExceeded) finish();
      else persist();
      return res;
    }
    std::optional<BatchOutcome> outcome;
    if (state_.phase == Phase::MALAssisted && !pool_.empty()) {
      outcome = label_batch(choose_batch(), true, false);
      retrain();
    } else {
      if (state_.phase == Phase::MALAssisted) enter(Phase::Final);
      const auto low = select_for_augmentation(evaluate_training(), config_.sal_threshold);
      if (!low.empty()) {
        manifest_ = append_augmentations(manifest_, low, config_.sal_copies, config_.ranges,
                                         derive_seed(config_.seed, "final", it), "fin" + std::to_string(it) + "_");
      }
      retrain();
    }
    state_.current_accuracy = evaluate_test();
    ++state_.batches_processed;
    res.log.push_back(make_entry(state_.phase, it, outcome ? &*outcome : nullptr));
    spdlog::info("final phase iteration {}: accuracy {:.4f}", it, state_.current_accuracy);
    if (state_.phase == Phase::MALAssisted && pool_.empty()) enter(Phase::Final);
    persist();
  }
}

PipelineState Pipeline::run(const std::function<bool()>& keep_going) {
  if (keep_going) gate_ = keep_going;
  label_test_set();
  if (state_.phase == Phase::BaselineTraining) {
    if (run_baseline_phase().status == PhaseStatus::Incomplete) return state_;
  }
  if (state_.phase == Phase::MALAssisted && state_.sal_iterations_done == 0) {
    run_sal_loop();
    if (state_.incomplete) return state_;
  }
  if (state_.phase == Phase::MALAssisted || state_.phase == Phase::Final) run_final_phase();
  return state_;
}

void Pipeline::abort(const std::string& reason) {
  if (state_.phase == Phase::Done) return;
  state_.incomplete = true;
  state_.incomplete_reason = "Aborted: " + reason;
  persist();
}

std::string ExperimentGrid::csv() const {
  std::string out = std::string(kGridCsvHeader) + "\n";
  for (const auto& c : cells) out += report_csv_row(c.report) + "\n";
  return out;
}

const GridCell* ExperimentGrid::cell(int resolution, int rate) const {
  for (const auto& c : cells) {
    if (c.resolution == resolution && c.rate == rate) return &c;
  }
  return nullptr;
}

ExperimentGrid run_experiment_grid(const DatasetManifest& base, const ResolutionLoader& load, ModelBackend& backend,
                                   const GridConfig& config) {
  base.validate();
  if (config.resolutions.empty() || config.rates.empty()) throw Error(Errc::InvalidArgument, "empty grid");
  config.hyperparams.validate();

  auto run_cell = [&](int res, int rate) {
    DatasetManifest m = base;
    m.dataset_id = base.dataset_id + "_r" + std::to_string(res);
    for (auto& e : m.entries) {
      e.resolution = res;
      e.crop_region = Box{0, 0, res, res};
    }
    AugmentationPlan plan;
    plan.rate = rate;
    plan.seed = config.seed;
    plan.ranges = config.ranges;
    const DatasetManifest expanded = expand_dataset(m, plan);

    ManifestTrainingSource source(expanded, [&](const ImageId& id) { return load(id, res); });
    TrainRequest req;
    req.model_id = "grid_r" + std::to_string(res) + "_x" + std::to_string(rate);
    req.training_manifest_id = expanded.dataset_id;
    req.hyperparams = config.hyperparams;
    GridCell cell;
    cell.resolution = res;
    cell.rate = rate;
    cell.model = backend.train(req, source);

    std::map<ImageId, Prediction> preds;
    std::map<ImageId, AnnotationSet> gt;
    for (const auto& id : expanded.ids_in(Split::Test, true)) {
      TrainingExample ex = load(id, res);
      preds[id] = backend.predict(cell.model, ex.image, id);
      gt[id] = std::move(ex.labels);
    }
    EvaluationConfig ec = config.evaluation;
    ec.dataset_id = expanded.dataset_id;
    ec.resolution = res;
    ec.dataset_size = expanded.count_entries(Split::Train);
    cell.report = evaluate(preds, gt, ec).report;
    spdlog::info("grid cell {} x{}: mean accuracy {:.4f}", res, rate, cell.report.mean_accuracy);
    return cell;
  };

  ExperimentGrid grid;
  if (config.parallel) {
    std::vector<std::future<GridCell>> jobs;
    for (int res : config.resolutions) {
      for (int rate : config.rates) jobs.push_back(std::async(std::launch::async, run_cell, res, rate));
    }
    for (auto& j : jobs) grid.cells.push_back(j.get());
  } else {
    for (int res : config.resolutions) {
      for (int rate : config.rates) grid.cells.push_back(run_cell(res, rate));
    }
  }
  if (config.output_dir) {
    fs::create_directories(*config.output_dir);
    write_file_atomic(*config.output_dir / "grid_report.csv", grid.csv());
  }
  return grid;
}

}  // namespace defectloop
