#pragma once

// Label-preserving augmentation: every geometric transform moves the image,
// its masks and its boxes together; photometric ones touch pixels only.

#include "defectloop/annotation.hpp"
#include "defectloop/grid.hpp"
#include "defectloop/preprocess.hpp"
#include "defectloop/transform_spec.hpp"

#include "json.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace defectloop {

/// Output frame size (width, height) after a transform.
std::pair<int, int> transformed_size(const TransformSpec& spec, int width, int height);

/// Continuous forward map of a point in pixel-edge coordinates.
Eigen::Vector2d map_point(const TransformSpec& spec, const Eigen::Vector2d& p, int width, int height);

/// Image resampling: exact index shuffles for quarter turns, flips and
/// translations, bilinear otherwise (zero outside the source).
ImageF transform_image(const ImageF& image, const TransformSpec& spec);

/// Nearest-neighbour at pixel centres, united with the forward image of
/// each foreground centre.
MaskGrid transform_mask(const MaskGrid& mask, const TransformSpec& spec);

/// Hull of the mapped corners, clipped to the output frame; nullopt when
/// nothing is left.
std::optional<Box> transform_box(const Box& box, const TransformSpec& spec, int width, int height);

struct DroppedBox {
  std::size_t step = 0;  // index into the chain
  DefectClass cls = DefectClass::CenterDefect;
  Box box;
};

struct TransformResult {
  ImageF image;
  AnnotationSet labels;
  std::vector<DroppedBox> dropped;
};

/// Throws DimensionMismatch when a mask does not match the image.
TransformResult apply_transform(const ImageF& image, const AnnotationSet& labels, const TransformSpec& spec);
TransformResult apply_transform(const ImageF& image, const AnnotationSet& labels, const TransformChain& chain);

nlohmann::json transform_log_json(const ImageId& image_id, std::span<const DroppedBox> dropped);

struct TransformRanges {
  double max_rotate_degrees = 5.0;
  double max_shear = 0.08;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_translate_fraction = 0.05;
  double max_sigma = 0.05;
  int min_jpeg_quality = 40;
  int max_jpeg_quality = 95;
  int max_blur_radius = 1;
};

/// One or two geometric steps followed by at most one photometric step.
TransformChain sample_chain(const TransformRanges& ranges, std::uint64_t seed, int width, int height);

struct AugmentationPlan {
  int rate = 2;
  std::uint64_t seed = 0;
  TransformRanges ranges;
};

/// Per-entry seed from (plan seed, parent id, copy index).
std::uint64_t derive_seed(std::uint64_t seed, const ImageId& parent, std::size_t index);

/// Adds (rate - 1) augmented copies of every train-split original so the
/// train side holds rate x |originals|. Test entries pass through untouched.
/// Throws RateTooSmall when rate < 1, InvalidArgument when the input already
/// holds augmented entries.
DatasetManifest expand_dataset(const DatasetManifest& base, const AugmentationPlan& plan);

/// Appends `copies` augmented entries for each listed train original; ids are
/// <parent>_<tag><j>. Throws NotFound / InvalidArgument for unknown or
/// test-split parents.
DatasetManifest append_augmentations(const DatasetManifest& manifest, std::span<const ImageId> parents,
                                     std::size_t copies, const TransformRanges& ranges, std::uint64_t seed,
                                     const std::string& tag);

/// Ids scoring strictly below threshold, ascending by accuracy (ties by id).
std::vector<ImageId> select_for_augmentation(const std::map<ImageId, double>& accuracy, double threshold);

}  // namespace defectloop
