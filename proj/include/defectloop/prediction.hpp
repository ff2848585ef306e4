#pragma once

#include "defectloop/annotation.hpp"
#include "defectloop/grid.hpp"

#include <map>
#include <string>
#include <vector>

namespace defectloop {

/// Model output for one image: per-pixel foreground probabilities for
/// segmentation classes and scored boxes for detection classes.
struct Prediction {
  ImageId image_id;
  std::map<DefectClass, GridF> probability_maps;
  std::vector<BoxAnnotation> boxes;  // score required

  /// Throws `error` (ProbabilityOutOfRange by default) when a probability
  /// leaves [0,1], a map has the wrong shape, a box lacks a score or leaves
  /// the frame, or a class is used with the wrong task.
  void validate(int width, int height, Errc error = Errc::ProbabilityOutOfRange) const;

  /// p > 0.5 is foreground; a missing map yields an empty mask.
  [[nodiscard]] MaskGrid mask(DefectClass cls, int width, int height) const;
};

/// Thresholded prediction as a Model-sourced annotation set (masks for every
/// segmentation map, boxes with scores).
AnnotationSet to_annotation(const Prediction& prediction, const std::string& model_id);

}  // namespace defectloop
