#pragma once

// Procedural growth-run frames with exact ground truth: a dark chamber, an
// orange crystal disk with rim bumps (edge defects, boxed where a bump
// rises above a fifth of its height), bright spots inside the
// disk (center defects) and slate patches in the corners (polycrystalline).
// Scenes live in unit coordinates so they render at any resolution.

#include "defectloop/annotation.hpp"
#include "defectloop/grid.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace defectloop {

struct SyntheticScene {
  struct Bump {
    double angle = 0.0;      // radians, image axes (y down)
    double amplitude = 0.0;  // unit length
    double width = 0.1;      // angular sigma, radians
  };
  struct Spot {
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    double sigma = 0.01;
    double amplitude = 1.0;
  };

  Eigen::Vector2d disk_center{0.5, 0.5};
  double radius = 0.3;
  std::vector<Bump> bumps;
  std::vector<Spot> spots;
  std::vector<std::vector<Eigen::Vector2d>> patches;  // polygons
  std::uint64_t noise_seed = 0;
  double noise_sigma = 0.015;

  /// Disk radius along a direction, bumps included.
  [[nodiscard]] double rim_radius(double angle) const;
};

struct SyntheticConfig {
  double patch_probability = 0.35;  // per corner
  int max_spots = 3;
  int max_bumps = 2;
  double noise_sigma = 0.015;
};

SyntheticScene make_scene(std::uint64_t seed, const SyntheticConfig& config = {});

/// RGB in [0,1], sampled at pixel centres.
ImageF render_scene(const SyntheticScene& scene, int resolution);

/// Exact labels at the given resolution with the given provenance.
AnnotationSet scene_labels(const SyntheticScene& scene, int resolution, const ImageId& image_id,
                           const AnnotationSource& source = AnnotationSource::consensus());

struct SyntheticCorpus {
  std::vector<ImageId> ids;
  std::map<ImageId, SyntheticScene> scenes;
};

/// Ids are <prefix>0000, <prefix>0001, ...
SyntheticCorpus make_corpus(std::size_t count, std::uint64_t seed, const std::string& prefix = "syn",
                            const SyntheticConfig& config = {});

/// A careful but imperfect human: flips a share of mask boundary pixels,
/// nudges box edges and now and then misses a box.
struct LabelerNoise {
  double boundary_flip = 0.1;
  double box_jitter = 0.3;  // chance per edge of a 1 px nudge
  double miss = 0.03;
};

AnnotationSet simulate_labeler(const AnnotationSet& truth, const std::string& labeler_id, std::uint64_t seed,
                               const LabelerNoise& noise = {});

}  // namespace defectloop
