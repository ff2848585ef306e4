#include "defectloop/labeling_service.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>

namespace defectloop {

nlohmann::json envelope_to_json(const TaskEnvelope& t) {
  auto catalog = nlohmann::json::array();
  for (auto c : t.class_catalog) catalog.push_back(std::string(to_string(c)));
  nlohmann::json j{{"task_id", t.task_id},   {"image_id", t.image_id},        {"image_uri", t.image_uri},
                   {"batch_id", t.batch_id}, {"class_catalog", catalog}, {"pre_annotation", nullptr}};
  if (t.pre_annotation) j["pre_annotation"] = Json(*t.pre_annotation);
  return j;
}

LabelingService::LabelingService(LabelingServiceConfig config, SteadyClock clock)
    : config_(std::move(config)), clock_(std::move(clock)) {
  if (!clock_) clock_ = [] { return std::chrono::steady_clock::now(); };
  if (config_.redundancy == 0) throw Error(Errc::InvalidArgument, "redundancy must be >= 1");
}

void LabelingService::register_labeler(const std::string& labeler_id) {
  if (labeler_id.empty()) throw Error(Errc::InvalidArgument, "empty labeler id");
  std::lock_guard lock(mutex_);
  labelers_.insert(labeler_id);
}

bool LabelingService::is_registered(const std::string& labeler_id) const {
  std::lock_guard lock(mutex_);
  return labelers_.contains(labeler_id);
}

void LabelingService::publish(const LabelingBatch& batch) {
  std::lock_guard lock(mutex_);
  if (batches_.contains(batch.batch_id)) throw Error(Errc::InvalidArgument, "batch '" + batch.batch_id + "' exists");
  BatchRecord record{batch, {}, {}};
  for (const auto& id : batch.image_ids) {
    for (std::size_t slot = 0; slot < config_.redundancy; ++slot) {
      char name[32];
      std::snprintf(name, sizeof name, "t%06zu", ++task_counter_);
      Task task;
      task.task_id = name;
      task.batch_id = batch.batch_id;
      task.image_id = id;
      record.task_ids.push_back(task.task_id);
      order_.push_back(task.task_id);
      tasks_.emplace(task.task_id, std::move(task));
    }
  }
  batches_.emplace(batch.batch_id, std::move(record));
  spdlog::info("published batch {} ({} images x {})", batch.batch_id, batch.image_ids.size(), config_.redundancy);
}

std::string LabelingService::release(const std::string& task_id) {
  Task& old = tasks_.at(task_id);
  spdlog::info("lease on {} by {} expired", task_id, old.labeler);
  old.state = TaskState::Expired;
  char name[32];
  std::snprintf(name, sizeof name, "t%06zu", ++task_counter_);
  Task fresh;
  fresh.task_id = name;
  fresh.batch_id = old.batch_id;
  fresh.image_id = old.image_id;
  std::replace(order_.begin(), order_.end(), task_id, fresh.task_id);
  auto& ids = batches_.at(old.batch_id).task_ids;
  std::replace(ids.begin(), ids.end(), task_id, fresh.task_id);
  const std::string id = fresh.task_id;
  tasks_.emplace(id, std::move(fresh));
  return id;
}

void LabelingService::expire_leases() {
  const auto now = clock_();
  std::vector<std::string> expired;
  for (const auto& [id, task] : tasks_) {
    if (task.state == TaskState::Leased && now >= task.expires) expired.push_back(id);
  }
  for (const auto& id : expired) release(id);
}

std::optional<TaskEnvelope> LabelingService::next_task(const std::string& labeler_id) {
  std::lock_guard lock(mutex_);
  if (!labelers_.contains(labeler_id)) throw Error(Errc::UnknownLabeler, labeler_id);
  expire_leases();

  std::set<std::pair<std::string, ImageId>> touched;
  for (const auto& [id, task] : tasks_) {
    const bool holds = task.state == TaskState::Leased || task.state == TaskState::Submitted;
    if (holds && task.labeler == labeler_id) touched.emplace(task.batch_id, task.image_id);
  }
  for (const auto& id : order_) {
    Task& task = tasks_.at(id);
    if (task.state != TaskState::Available || touched.contains({task.batch_id, task.image_id})) continue;
    task.state = TaskState::Leased;
    task.labeler = labeler_id;
    task.expires = clock_() + config_.lease;

    const auto& batch = batches_.at(task.batch_id).batch;
    TaskEnvelope env;
    env.task_id = task.task_id;
    env.image_id = task.image_id;
    env.image_uri = "/images/" + task.image_id + ".png";
    env.batch_id = task.batch_id;
    env.class_catalog.assign(kAllClasses.begin(), kAllClasses.end());
    if (auto it = batch.drafts.find(task.image_id); it != batch.drafts.end() && it->second.seeded_from) {
      env.pre_annotation = it->second;
    }
    return env;
  }
  return std::nullopt;
}

void LabelingService::submit(const std::string& task_id, AnnotationSet set, std::optional<double> elapsed_seconds) {
  std::lock_guard lock(mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw Error(Errc::UnknownTask, task_id);
  Task& task = it->second;
  if (task.state == TaskState::Submitted) throw Error(Errc::LeaseExpired, task_id + " already submitted");
  if (task.state != TaskState::Leased) throw Error(Errc::LeaseExpired, task_id + " is not leased");
  if (clock_() >= task.expires) {
    release(task_id);
    changed_.notify_all();
    throw Error(Errc::LeaseExpired, task_id);
  }
  if (set.image_id != task.image_id) {
    throw Error(Errc::ValidationFailed, "annotation is for '" + set.image_id + "', task is '" + task.image_id + "'");
  }
  if (elapsed_seconds) set.elapsed_labeling_seconds = elapsed_seconds;
  set.source = AnnotationSource::labeler(task.labeler);
  set.review_state = ReviewState::Draft;
  set.seeded_from.reset();
  for (auto& b : set.boxes) b.score.reset();
  try {
    set.validate();
  } catch (const Error& e) {
    throw Error(Errc::ValidationFailed, e.what());
  }

  task.stored_json = Json(set).dump();
  task.submission = std::move(set);
  task.state = TaskState::Submitted;
  maybe_merge(batches_.at(task.batch_id), task.image_id);
  changed_.notify_all();
}

void LabelingService::submit_json(const std::string& task_id, const Json& annotation,
                                  std::optional<double> elapsed_seconds) {
  {
    std::lock_guard lock(mutex_);
    if (!tasks_.contains(task_id)) throw Error(Errc::UnknownTask, task_id);
  }
  AnnotationSet set;
  try {
    set = annotation_set_from_json(annotation);
  } catch (const Error& e) {
    throw Error(Errc::ValidationFailed, e.what());
  }
  submit(task_id, std::move(set), elapsed_seconds);
}

void LabelingService::maybe_merge(BatchRecord& record, const ImageId& image_id) {
  std::vector<AnnotationSet> sets;
  for (const auto& id : record.task_ids) {
    const Task& t = tasks_.at(id);
    if (t.image_id != image_id) continue;
    if (t.state != TaskState::Submitted) return;
    sets.push_back(*t.submission);
  }
  record.results[image_id] = merge_consensus(sets, config_.consensus);
  if (record.results.size() == record.batch.image_ids.size()) {
    if (record.batch.status == BatchStatus::Open) record.batch.advance(BatchStatus::AwaitingConsensus);
    if (record.batch.status == BatchStatus::AwaitingConsensus) record.batch.advance(BatchStatus::AwaitingExpert);
    spdlog::info("batch {} fully labeled", record.batch.batch_id);
  }
}

std::string LabelingService::submitted_json(const std::string& task_id) const {
  std::lock_guard lock(mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw Error(Errc::UnknownTask, task_id);
  if (it->second.state != TaskState::Submitted) throw Error(Errc::NotFound, "nothing submitted for " + task_id);
  return it->second.stored_json;
}

nlohmann::json LabelingService::consensus_report(const std::string& batch_id) const {
  std::lock_guard lock(mutex_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw Error(Errc::NotFound, "batch '" + batch_id + "'");
  std::vector<ConsensusResult> results;
  for (const auto& [id, r] : it->second.results) results.push_back(r);
  auto j = consensus_report_json(batch_id, results);
  j["status"] = std::string(to_string(it->second.batch.status));
  return j;
}

bool LabelingService::batch_complete(const std::string& batch_id) const {
  std::lock_guard lock(mutex_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw Error(Errc::NotFound, "batch '" + batch_id + "'");
  return it->second.results.size() == it->second.batch.image_ids.size();
}

std::optional<std::map<ImageId, std::vector<AnnotationSet>>> LabelingService::wait_for(
    const std::string& batch_id, const std::function<bool()>& stop, std::chrono::milliseconds poll) {
  std::unique_lock lock(mutex_);
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw Error(Errc::NotFound, "batch '" + batch_id + "'");
  const BatchRecord& record = it->second;
  while (record.results.size() != record.batch.image_ids.size()) {
    if (stop && stop()) return std::nullopt;
    changed_.wait_for(lock, poll);
  }
  std::map<ImageId, std::vector<AnnotationSet>> out;
  for (const auto& id : record.task_ids) {
    const Task& t = tasks_.at(id);
    out[t.image_id].push_back(*t.submission);
  }
  return out;
}

void LabelingService::notify_all() { changed_.notify_all(); }

std::map<ImageId, std::vector<AnnotationSet>> ServiceDesk::label(const LabelingBatch& batch) {
  LabelingBatch published = batch;
  published.batch_id = prefix_ + batch.batch_id;
  service_.publish(published);
  auto result = service_.wait_for(published.batch_id, stop_);
  if (!result) throw Error(Errc::Aborted, "labeling of " + published.batch_id + " stopped");
  return std::move(*result);
}

PipelineController::PipelineController(ModelBackend& backend, LabelingService& service, ImageProvider images)
    : backend_(backend), service_(service), images_(std::move(images)) {}

PipelineController::~PipelineController() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  service_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void PipelineController::start(RunRequest request) {
  request.config.validate();
  split_dataset(request.image_ids, request.config.split_ratio, request.config.seed);

  std::unique_lock lock(mutex_);
  if (running_) throw Error(Errc::AlreadyRunning, "a pipeline run is active");
  if (worker_.joinable()) worker_.join();
  started_ = true;
  running_ = true;
  stop_ = false;
  step_mode_ = request.step_mode;
  steps_ = 0;
  ++runs_;
  error_.clear();
  PipelineState initial;
  initial.baseline_threshold = request.config.baseline_threshold;
  initial.final_threshold = request.config.final_threshold;
  initial.max_batches = request.config.max_batches;
  snapshot_ = pipeline_state_to_json(initial);

  const std::string prefix = "run" + std::to_string(runs_) + "-";
  worker_ = std::thread([this, prefix, request = std::move(request)] {
    try {
      ServiceDesk desk(
          service_,
          [this] {
            std::lock_guard l(mutex_);
            return stop_;
          },
          prefix);
      Pipeline pipeline(request.config, backend_, desk, images_, request.image_ids);
      pipeline.set_observer([this](const PipelineState& s) {
        auto j = pipeline_state_to_json(s);
        std::lock_guard l(mutex_);
        snapshot_ = std::move(j);
      });
      pipeline.set_gate([this] {
        std::unique_lock l(mutex_);
        if (step_mode_) cv_.wait(l, [this] { return stop_ || steps_ > 0; });
        if (stop_) return false;
        if (step_mode_) --steps_;
        return true;
      });
      try {
        pipeline.run();
      } catch (const Error& e) {
        if (e.code() != Errc::Aborted) throw;
      }
      bool stopped;
      {
        std::lock_guard l(mutex_);
        stopped = stop_;
      }
      if (stopped) pipeline.abort("stopped by request");
      auto j = pipeline_state_to_json(pipeline.state());
      std::lock_guard l(mutex_);
      snapshot_ = std::move(j);
    } catch (const std::exception& e) {
      spdlog::error("pipeline run failed: {}", e.what());
      std::lock_guard l(mutex_);
      error_ = e.what();
    }
    std::lock_guard l(mutex_);
    running_ = false;
    cv_.notify_all();
  });
}

nlohmann::json PipelineController::status() const {
  std::lock_guard lock(mutex_);
  if (!started_) throw Error(Errc::NoActiveRun, "no pipeline run");
  auto j = snapshot_;
  j["running"] = running_;
  if (!error_.empty()) j["error"] = error_;
  return j;
}

void PipelineController::advance() {
  {
    std::lock_guard lock(mutex_);
    if (!running_) throw Error(Errc::NoActiveRun, "no pipeline run");
    ++steps_;
  }
  cv_.notify_all();
}

nlohmann::json PipelineController::abort() {
  {
    std::lock_guard lock(mutex_);
    if (!running_) throw Error(Errc::NoActiveRun, "no pipeline run");
    stop_ = true;
  }
  cv_.notify_all();
  service_.notify_all();
  join();
  return status();
}

void PipelineController::join() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return !running_; });
}

bool PipelineController::running() const {
  std::lock_guard lock(mutex_);
  return running_;
}

}  // namespace defectloop
