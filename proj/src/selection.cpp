#include "defectloop/selection.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace defectloop {

UncertaintyScore score_uncertainty(const Prediction& prediction) {
  UncertaintyScore out;
  out.image_id = prediction.image_id;
  for (const auto& [cls, map] : prediction.probability_maps) {
    if (task_of(cls) != TaskKind::Segmentation) {
      throw Error(Errc::InvalidArgument, "probability map for detection class " + std::string(to_string(cls)));
    }
    if (map.size() > 0 && !((map >= 0.0f) && (map <= 1.0f)).all()) {
      throw Error(Errc::ProbabilityOutOfRange, prediction.image_id + ": " + std::string(to_string(cls)));
    }
    out.per_class_scores[cls] = mean_binary_entropy(map);
  }
  for (auto cls : kDetectionClasses) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& b : prediction.boxes) {
      if (b.cls != cls) continue;
      const double s = b.score.value_or(-1.0);
      if (!(s >= 0.0 && s <= 1.0)) {
        throw Error(Errc::ProbabilityOutOfRange, prediction.image_id + ": box score for " + std::string(to_string(cls)));
      }
      sum += s;
      ++n;
    }
    if (n == 0) {
      out.per_class_scores[cls] = 0.5;
    } else {
      const double p = sum / static_cast<double>(n);
      out.per_class_scores[cls] = 4.0 * p * (1.0 - p);
    }
  }
  double total = 0.0;
  for (const auto& [cls, v] : out.per_class_scores) total += v;
  out.score = total / static_cast<double>(out.per_class_scores.size());
  return out;
}

Eigen::VectorXd histogram_features(const ImageF& image, int bins) {
  if (bins <= 0) throw Error(Errc::InvalidArgument, "histogram needs at least one bin");
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(bins);
  if (image.empty()) return hist;
  const GridF lum = luminance(image);
  for (Eigen::Index i = 0; i < lum.size(); ++i) {
    const float v = std::clamp(lum.data()[i], 0.0f, 1.0f);
    const int b = std::min(bins - 1, static_cast<int>(v * static_cast<float>(bins)));
    hist[b] += 1.0;
  }
  return hist / static_cast<double>(lum.size());
}

namespace {

const Eigen::VectorXd& feature_of(const FeatureMap& features, const ImageId& id) {
  auto it = features.find(id);
  if (it == features.end()) throw Error(Errc::InvalidArgument, "no feature vector for '" + id + "'");
  return it->second;
}

// Picks `count` members of `ties` (sorted by id) by farthest-first traversal.
std::vector<ImageId> farthest_first(const std::vector<ImageId>& ties, const std::vector<ImageId>& anchors,
                                    const FeatureMap& features, std::size_t count) {
  std::vector<double> min_dist(ties.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(ties.size(), false);
  auto absorb = [&](const Eigen::VectorXd& f) {
    for (std::size_t i = 0; i < ties.size(); ++i) {
      min_dist[i] = std::min(min_dist[i], (feature_of(features, ties[i]) - f).norm());
    }
  };

  std::vector<ImageId> picked;
  if (anchors.empty()) {
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(feature_of(features, ties.front()).size());
    for (const auto& id : ties) centroid += feature_of(features, id);
    centroid /= static_cast<double>(ties.size());
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < ties.size(); ++i) {
      const double d = (feature_of(features, ties[i]) - centroid).norm();
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    taken[best] = true;
    picked.push_back(ties[best]);
    absorb(feature_of(features, ties[best]));
  } else {
    for (const auto& id : anchors) absorb(feature_of(features, id));
  }

  while (picked.size() < count) {
    std::size_t best = ties.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < ties.size(); ++i) {
      if (taken[i]) continue;
      if (min_dist[i] > best_d) {
        best_d = min_dist[i];
        best = i;
      }
    }
    taken[best] = true;
    picked.push_back(ties[best]);
    absorb(feature_of(features, ties[best]));
  }
  return picked;
}

}  // namespace

std::vector<ImageId> select_batch(std::span<const ImageId> pool, const std::map<ImageId, double>& scores,
                                  const FeatureMap* features, std::size_t k) {
  for (const auto& id : pool) {
    if (!scores.contains(id)) throw Error(Errc::MissingScore, id);
  }
  std::vector<ImageId> unique;
  {
    std::set<ImageId> seen;
    for (const auto& id : pool) {
      if (seen.insert(id).second) unique.push_back(id);
    }
  }
  if (k >= unique.size()) return unique;
  if (k == 0) return {};

  std::vector<ImageId> ranked = unique;
  std::sort(ranked.begin(), ranked.end(), [&](const ImageId& a, const ImageId& b) {
    const double sa = scores.at(a), sb = scores.at(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  const double cutoff = scores.at(ranked[k - 1]);

  std::vector<ImageId> selected;
  std::vector<ImageId> ties;
  for (const auto& id : ranked) {
    const double s = scores.at(id);
    if (s > cutoff) selected.push_back(id);
    else if (s == cutoff) ties.push_back(id);
  }
  const std::size_t need = k - selected.size();
  if (need == ties.size() || !features) {
    selected.insert(selected.end(), ties.begin(), ties.begin() + static_cast<std::ptrdiff_t>(need));
    return selected;
  }
  auto picked = farthest_first(ties, selected, *features, need);
  selected.insert(selected.end(), picked.begin(), picked.end());
  return selected;
}

}  // namespace defectloop
