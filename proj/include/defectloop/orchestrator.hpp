#pragma once

// The labeling/training loop: baseline batches until the first accuracy
// gate, selective-augmentation retraining with relabel reports, then
// model-assisted batches until the final gate. Also the resolution x
// dataset-size experiment grid.

#include "defectloop/augmentation.hpp"
#include "defectloop/backend.hpp"
#include "defectloop/consensus.hpp"
#include "defectloop/metrics.hpp"
#include "defectloop/preprocess.hpp"

#include "json.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace defectloop {

enum class Phase { BaselineTraining, MALAssisted, Final, Done };
std::string_view to_string(Phase p) noexcept;
Phase phase_from_string(std::string_view s);

/// Forward by exactly one step. Throws IllegalTransition.
Phase next_phase(Phase current);

struct PipelineConfig {
  double baseline_threshold = 0.80;
  double final_threshold = 0.95;
  double sal_threshold = 0.5;
  int max_sal_iterations = 5;
  std::size_t max_batches = 50;  // per phase
  std::size_t batch_size = kDefaultBatchSize;
  int resolution = 256;
  std::size_t sal_copies = 2;    // augmented copies per low image and iteration
  double split_ratio = 0.9;
  std::uint64_t seed = 0;
  std::string model_id = "defectloop";
  std::string dataset_id = "pool";
  TrainingHyperparams hyperparams;
  TransformRanges ranges;
  BoxConsensusConfig consensus;
  EvaluationConfig evaluation;
  /// pipeline_state.json, relabel_<iter>.json and approved labels go here.
  std::optional<std::filesystem::path> state_dir;

  void validate() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

struct PhaseLogEntry {
  Phase phase = Phase::BaselineTraining;
  std::size_t iteration = 0;  // 1-based within the phase
  std::string batch_id;       // empty for retrain-only iterations
  std::size_t labeled = 0;
  std::size_t training_size = 0;
  double accuracy = 0.0;
  /// Mean correction_cost().total_edits() over pre-annotated images.
  std::optional<double> mean_correction_edits;
  std::optional<double> mean_labeling_seconds;
};

struct PipelineState {
  Phase phase = Phase::BaselineTraining;
  double current_accuracy = 0.0;
  double baseline_threshold = 0.80;
  double final_threshold = 0.95;
  int sal_iterations_done = 0;
  std::size_t batches_processed = 0;
  std::size_t max_batches = 50;
  bool incomplete = false;
  std::string incomplete_reason;
  std::optional<ModelHandle> model;
  std::vector<PhaseLogEntry> log;
};

nlohmann::json pipeline_state_to_json(const PipelineState& s);

struct RelabelReport {
  int iteration = 0;
  std::vector<ImageId> image_ids;
  std::map<ImageId, double> per_image_accuracy;
  std::int64_t generated_at = 0;  // unix seconds
};

nlohmann::json relabel_report_to_json(const RelabelReport& r);

enum class PhaseStatus { Complete, Incomplete };

struct PhaseResult {
  PhaseStatus status = PhaseStatus::Complete;
  Errc reason = Errc::MaxBatchesExceeded;  // meaningful when Incomplete
  std::vector<PhaseLogEntry> log;
};

/// Human side of the loop.
class LabelingDesk {
 public:
  virtual ~LabelingDesk() = default;
  /// Every labeler's set for every image of the batch. batch.drafts holds the
  /// starting point of each image.
  virtual std::map<ImageId, std::vector<AnnotationSet>> label(const LabelingBatch& batch) = 0;
  /// Expert verdict on a crowd-reviewed consensus set.
  virtual ReviewDecision expert_review(const ConsensusResult&) { return ReviewDecision::ExpertApprove; }
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual Evaluation evaluate(const ModelHandle& model, std::span<const ImageId> ids,
                              const std::map<ImageId, AnnotationSet>& labels) = 0;
};

using ImageProvider = std::function<ImageF(const ImageId&)>;

/// Predicts every image with the backend and scores it.
class BackendEvaluator final : public Evaluator {
 public:
  BackendEvaluator(const ModelBackend& backend, ImageProvider images, EvaluationConfig config = {})
      : backend_(backend), images_(std::move(images)), config_(std::move(config)) {}

  Evaluation evaluate(const ModelHandle& model, std::span<const ImageId> ids,
                      const std::map<ImageId, AnnotationSet>& labels) override;

 private:
  const ModelBackend& backend_;
  ImageProvider images_;
  EvaluationConfig config_;
};

class Pipeline {
 public:
  /// Splits `image_ids` into the labeling pool and the held-out test set.
  /// Without an evaluator the backend is scored on the test split.
  Pipeline(PipelineConfig config, ModelBackend& backend, LabelingDesk& desk, ImageProvider images,
           std::span<const ImageId> image_ids, Evaluator* evaluator = nullptr);

  /// Labels the test split. Runs once, before the first phase step.
  void label_test_set();

  /// Starting model (e.g. from a previous run); its accuracy is measured
  /// right away.
  void set_model(const ModelHandle& model);

  PhaseResult run_baseline_phase();
  std::vector<RelabelReport> run_sal_loop();
  PhaseResult run_final_phase();

  /// Everything in order; stops early when a phase is incomplete or
  /// `keep_going` returns false (recorded as aborted).
  PipelineState run(const std::function<bool()>& keep_going = {});

  /// Marks the run Incomplete and persists.
  void abort(const std::string& reason);

  [[nodiscard]] PipelineState state() const;
  [[nodiscard]] const std::vector<ImageId>& pool() const noexcept { return pool_; }
  [[nodiscard]] const std::vector<ImageId>& test_ids() const noexcept { return test_; }
  [[nodiscard]] const std::map<ImageId, AnnotationSet>& approved() const noexcept { return approved_; }
  [[nodiscard]] const DatasetManifest& manifest() const noexcept { return manifest_; }
  [[nodiscard]] const std::vector<RelabelReport>& relabel_reports() const noexcept { return reports_; }
  [[nodiscard]] const std::vector<CorrectionCost>& correction_costs() const noexcept { return costs_; }

  /// Hook between iterations; returning false stops the current phase.
  void set_gate(std::function<bool()> gate) { gate_ = std::move(gate); }

  /// Called with a snapshot whenever the state is persisted.
  void set_observer(std::function<void(const PipelineState&)> observer) { observer_ = std::move(observer); }

 private:
  struct BatchOutcome {
    std::string batch_id;
    std::size_t labeled = 0;
    std::optional<double> mean_edits;
    std::optional<double> mean_seconds;
  };

  BatchOutcome label_batch(std::vector<ImageId> ids, bool preannotate, bool test_split);
  std::vector<ImageId> choose_batch();
  void retrain();
  double evaluate_test();
  std::map<ImageId, double> evaluate_training();
  std::vector<ImageId> approved_train_originals() const;
  PhaseLogEntry make_entry(Phase phase, std::size_t iteration, const BatchOutcome* batch);
  void enter(Phase next);
  void persist() const;
  bool gate_open() const { return !gate_ || gate_(); }

  PipelineConfig config_;
  ModelBackend& backend_;
  LabelingDesk& desk_;
  ImageProvider images_;
  std::unique_ptr<Evaluator> owned_evaluator_;
  Evaluator* evaluator_;
  std::function<bool()> gate_;
  std::function<void(const PipelineState&)> observer_;

  PipelineState state_;
  std::vector<ImageId> pool_;
  std::vector<ImageId> test_;
  bool test_labeled_ = false;
  std::map<ImageId, AnnotationSet> approved_;
  DatasetManifest manifest_;
  std::vector<RelabelReport> reports_;
  std::vector<CorrectionCost> costs_;
  std::size_t batch_counter_ = 0;
};

struct GridConfig {
  std::vector<int> resolutions{256, 512};
  std::vector<int> rates{2, 5, 10};
  std::uint64_t seed = 0;
  TrainingHyperparams hyperparams;
  TransformRanges ranges;
  EvaluationConfig evaluation;
  bool parallel = true;
  std::optional<std::filesystem::path> output_dir;  // grid_report.csv
};

struct GridCell {
  int resolution = 0;
  int rate = 0;
  ModelHandle model;
  MetricsReport report;
};

struct ExperimentGrid {
  std::vector<GridCell> cells;  // resolution-major, config order

  /// Header plus one row per cell.
  [[nodiscard]] std::string csv() const;
  [[nodiscard]] const GridCell* cell(int resolution, int rate) const;
};

/// Labeled example at a given resolution.
using ResolutionLoader = std::function<TrainingExample(const ImageId&, int resolution)>;

/// For each (resolution, rate): expand the train originals, train, evaluate
/// on the test split.
ExperimentGrid run_experiment_grid(const DatasetManifest& base, const ResolutionLoader& load, ModelBackend& backend,
                                   const GridConfig& config);

}  // namespace defectloop
