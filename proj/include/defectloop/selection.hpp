#pragma once

// Uncertainty scoring of model output and diversity-aware batch selection.

#include "defectloop/annotation.hpp"
#include "defectloop/grid.hpp"
#include "defectloop/prediction.hpp"

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <span>
#include <vector>

namespace defectloop {

struct UncertaintyScore {
  ImageId image_id;
  double score = 0.0;  // mean of per_class_scores
  std::map<DefectClass, double> per_class_scores;
};

/// Binary entropy in bits, so p = 0.5 maps to 1.
template <typename Derived>
double mean_binary_entropy(const Eigen::ArrayBase<Derived>& p) {
  const auto q = p.derived().template cast<double>();
  const double inv_ln2 = 1.0 / std::log(2.0);
  auto h = [inv_ln2](double v) {
    if (v <= 0.0 || v >= 1.0) return 0.0;
    return -(v * std::log(v) + (1.0 - v) * std::log1p(-v)) * inv_ln2;
  };
  if (q.size() == 0) return 0.0;
  return q.unaryExpr(h).mean();
}

/// Segmentation classes: mean normalised entropy of their probability map.
/// Detection classes: 4 p(1-p) over the mean box score p, 0.5 without boxes.
/// Throws ProbabilityOutOfRange.
UncertaintyScore score_uncertainty(const Prediction& prediction);

/// 64-bin gray histogram of a [0,1] image, normalised to sum 1.
Eigen::VectorXd histogram_features(const ImageF& image, int bins = 64);

using FeatureMap = std::map<ImageId, Eigen::VectorXd>;

/// Top-k by score. The tie group straddling the cutoff is thinned by
/// farthest-first traversal over features (seeded by what is already
/// selected, else by the member farthest from the group centroid), or by
/// image id without features. Throws MissingScore(image_id).
std::vector<ImageId> select_batch(std::span<const ImageId> pool, const std::map<ImageId, double>& scores,
                                  const FeatureMap* features, std::size_t k);

}  // namespace defectloop
