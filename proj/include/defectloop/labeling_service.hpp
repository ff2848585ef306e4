#pragma once

// Task distribution to labelers: leased per-image tasks with redundancy,
// submission validation, per-image consensus once every slot is in, and a
// background pipeline run driven through the same queue.

#include "defectloop/annotation_json.hpp"
#include "defectloop/consensus.hpp"
#include "defectloop/orchestrator.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace defectloop {

struct TaskEnvelope {
  std::string task_id;
  ImageId image_id;
  std::string image_uri;
  std::optional<AnnotationSet> pre_annotation;  // model draft, MAL batches only
  std::vector<DefectClass> class_catalog;
  std::string batch_id;
};

nlohmann::json envelope_to_json(const TaskEnvelope& t);

using SteadyClock = std::function<std::chrono::steady_clock::time_point()>;

struct LabelingServiceConfig {
  std::chrono::seconds lease{30 * 60};
  std::size_t redundancy = 1;  // labelers per image
  BoxConsensusConfig consensus;
};

class LabelingService {
 public:
  explicit LabelingService(LabelingServiceConfig config = {}, SteadyClock clock = {});

  /// Idempotent. Throws InvalidArgument on an empty id.
  void register_labeler(const std::string& labeler_id);
  [[nodiscard]] bool is_registered(const std::string& labeler_id) const;

  /// Queues `redundancy` tasks per image. Throws InvalidArgument on a
  /// duplicate batch id.
  void publish(const LabelingBatch& batch);

  /// Oldest available task whose image this labeler has not touched yet.
  /// Expired leases go back to the queue first under a new task id; the old
  /// id stays dead. Throws UnknownLabeler.
  std::optional<TaskEnvelope> next_task(const std::string& labeler_id);

  /// Stores the set as a Draft from the leasing labeler. Throws UnknownTask,
  /// LeaseExpired, ValidationFailed.
  void submit(const std::string& task_id, AnnotationSet set, std::optional<double> elapsed_seconds);

  /// Parses then submits; parse and invariant failures become ValidationFailed.
  void submit_json(const std::string& task_id, const Json& annotation, std::optional<double> elapsed_seconds);

  /// Stored JSON text of a submitted task. Throws UnknownTask, or NotFound
  /// before submission.
  [[nodiscard]] std::string submitted_json(const std::string& task_id) const;

  /// Consensus report over the images finished so far. Throws NotFound.
  [[nodiscard]] nlohmann::json consensus_report(const std::string& batch_id) const;

  [[nodiscard]] bool batch_complete(const std::string& batch_id) const;

  /// Blocks until every task of the batch is in (returns all submissions per
  /// image) or `stop` turns true (returns nullopt). Throws NotFound.
  std::optional<std::map<ImageId, std::vector<AnnotationSet>>> wait_for(
      const std::string& batch_id, const std::function<bool()>& stop,
      std::chrono::milliseconds poll = std::chrono::milliseconds(50));

  /// Wakes every wait_for caller so it can re-check its stop predicate.
  void notify_all();

 private:
  enum class TaskState { Available, Leased, Submitted, Expired };
  struct Task {
    std::string task_id;
    std::string batch_id;
    ImageId image_id;
    TaskState state = TaskState::Available;
    std::string labeler;
    std::chrono::steady_clock::time_point expires{};
    std::optional<AnnotationSet> submission;
    std::string stored_json;
  };
  struct BatchRecord {
    LabelingBatch batch;
    std::vector<std::string> task_ids;
    std::map<ImageId, ConsensusResult> results;
  };

  /// Retires an expired lease and requeues its slot under a new task id.
  std::string release(const std::string& task_id);
  void expire_leases();
  void maybe_merge(BatchRecord& record, const ImageId& image_id);

  LabelingServiceConfig config_;
  SteadyClock clock_;
  mutable std::mutex mutex_;
  std::condition_variable changed_;
  std::set<std::string> labelers_;
  std::map<std::string, Task> tasks_;
  std::deque<std::string> order_;  // publish order
  std::map<std::string, BatchRecord> batches_;
  std::size_t task_counter_ = 0;
};

/// LabelingDesk backed by the service queue: publishes each batch and waits
/// for the labelers. Throws Aborted when `stop` fires first.
class ServiceDesk final : public LabelingDesk {
 public:
  /// Published batch ids are `prefix` + the pipeline's batch id.
  ServiceDesk(LabelingService& service, std::function<bool()> stop, std::string prefix = {})
      : service_(service), stop_(std::move(stop)), prefix_(std::move(prefix)) {}
  std::map<ImageId, std::vector<AnnotationSet>> label(const LabelingBatch& batch) override;

 private:
  LabelingService& service_;
  std::function<bool()> stop_;
  std::string prefix_;
};

struct RunRequest {
  PipelineConfig config;
  std::vector<ImageId> image_ids;
  /// Wait for advance() before every phase iteration.
  bool step_mode = false;
};

/// One background pipeline run at a time, fed through a LabelingService.
class PipelineController {
 public:
  PipelineController(ModelBackend& backend, LabelingService& service, ImageProvider images);
  ~PipelineController();

  /// Throws AlreadyRunning while a run is active.
  void start(RunRequest request);
  /// Latest snapshot plus "running" and, after a failure, "error". Throws
  /// NoActiveRun when nothing was ever started.
  [[nodiscard]] nlohmann::json status() const;
  /// Releases one step in step mode. Throws NoActiveRun.
  void advance();
  /// Stops the run; the state is persisted as Incomplete. Throws NoActiveRun.
  nlohmann::json abort();
  /// Blocks until the current run ends.
  void join();
  [[nodiscard]] bool running() const;

 private:
  ModelBackend& backend_;
  LabelingService& service_;
  ImageProvider images_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::thread worker_;
  bool started_ = false;
  bool running_ = false;
  bool stop_ = false;
  bool step_mode_ = false;
  std::size_t steps_ = 0;
  std::size_t runs_ = 0;
  nlohmann::json snapshot_;
  std::string error_;
};

}  // namespace defectloop
