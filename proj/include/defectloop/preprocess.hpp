#pragma once

// Growth-run ingestion and dataset preparation: time-window resampling,
// blackout/noise rejection, crop/denoise/resize/normalize and the persisted
// train/test split.

#include "defectloop/annotation.hpp"
#include "defectloop/grid.hpp"
#include "defectloop/transform_spec.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace defectloop {

struct GrowthRunManifest {
  std::string growth_run_id;
  int capture_interval_seconds = 60;
  double duration_hours = 0.0;
  std::vector<ImageRecord> frames;  // ascending captured_at

  void validate() const;
};

struct PreprocessConfig {
  int window_seconds = 900;
  double blackout_luminance_max = 0.02;
  double noise_variance_max = 0.01;
  std::vector<int> target_resolutions{256, 512};
  int pool_size = 300;
  double split_ratio = 0.9;
  std::uint64_t split_seed = 0;

  void validate() const;
};

enum class Split { Train, Test };
std::string_view to_string(Split s) noexcept;

struct Lineage {
  ImageId parent;
  TransformChain transforms;
  bool operator==(const Lineage&) const = default;
};

struct DatasetEntry {
  ImageId image_id;
  int resolution = 0;
  Box crop_region;
  std::optional<Lineage> augmented_from;  // nullopt = Original

  [[nodiscard]] bool is_original() const noexcept { return !augmented_from.has_value(); }
  bool operator==(const DatasetEntry&) const = default;
};

struct DatasetManifest {
  std::string dataset_id;
  std::vector<DatasetEntry> entries;
  std::map<ImageId, Split> split;
  std::uint64_t split_seed = 0;

  /// Throws InvalidArgument when an augmented entry sits in the test split or
  /// an original entry has no split assignment.
  void validate() const;

  [[nodiscard]] std::vector<ImageId> ids_in(Split s, bool originals_only = false) const;
  [[nodiscard]] std::size_t count_entries(Split s, std::optional<int> resolution = std::nullopt) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json run_manifest_to_json(const GrowthRunManifest& m);
GrowthRunManifest run_manifest_from_json(const nlohmann::json& j);

/// Keeps the first frame of every non-empty window [t0 + k*w, t0 + (k+1)*w).
/// Throws UnsortedInput when timestamps decrease.
std::vector<ImageRecord> resample_sequence(std::span<const ImageRecord> frames, int window_seconds);

/// Mean luminance normalised to [0,1].
double mean_luminance(const Image8& image);

/// Variance of (L - mean3x3(L)) over normalised luminance L, replicate border.
double residual_variance(const Image8& image);

struct FilterResult {
  std::vector<ImageRecord> kept;      // status Filtered
  std::vector<ImageRecord> rejected;  // status Rejected, reason set
};

using FrameLoader = std::function<Image8(const ImageRecord&)>;

/// Blackout is checked before noise. Loader failures surface as
/// UnreadableImage(image_id).
FilterResult filter_frames(std::span<const ImageRecord> frames, const PreprocessConfig& config,
                           const FrameLoader& load);

/// 3x3 median per plane, replicate border.
Image8 median3x3(const Image8& image);

/// Area-weighted resampling to width x height (exact fractional overlaps).
ImageF area_resize(const ImageF& image, int width, int height);

/// crop -> optional 3x3 median -> area resize to res x res -> /255.
/// Throws CropOutOfBounds.
ImageF preprocess_image(const Image8& image, const Box& crop_region, int target_resolution, bool denoise);

/// Largest centred square; the default crop when no DOI region is known.
Box centered_square_crop(int width, int height);

struct SplitResult {
  std::vector<ImageId> train;
  std::vector<ImageId> test;
};

/// |train| = round(ratio*n). Both sides must end up non-empty. Output keeps
/// input order within each side.
SplitResult split_dataset(std::span<const ImageId> image_ids, double split_ratio, std::uint64_t split_seed);

}  // namespace defectloop
