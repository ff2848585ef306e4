#include "defectloop/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace defectloop {

namespace {

const Eigen::Vector3f kChamber(0.05f, 0.05f, 0.07f);
const Eigen::Vector3f kCrystal(0.85f, 0.35f, 0.15f);
const Eigen::Vector3f kSpot(1.0f, 0.75f, 0.55f);
const Eigen::Vector3f kPatch(0.35f, 0.45f, 0.60f);

double wrap(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

MaskGrid patch_mask(const SyntheticScene& scene, int res) {
  MaskGrid m = MaskGrid::Constant(res, res, false);
  for (const auto& poly : scene.patches) {
    std::vector<Eigen::Vector2d> px;
    px.reserve(poly.size());
    for (const auto& v : poly) px.push_back(v * res);
    m = m || polygon_to_mask(px, res, res);
  }
  return m;
}

double spot_level(const SyntheticScene& scene, const Eigen::Vector2d& u) {
  double s = 0.0;
  for (const auto& sp : scene.spots) {
    s += sp.amplitude * std::exp(-(u - sp.center).squaredNorm() / (2.0 * sp.sigma * sp.sigma));
  }
  return std::min(1.0, s);
}

}  // namespace

double SyntheticScene::rim_radius(double angle) const {
  double r = radius;
  for (const auto& b : bumps) {
    const double d = wrap(angle - b.angle) / b.width;
    r += b.amplitude * std::exp(-0.5 * d * d);
  }
  return r;
}

SyntheticScene make_scene(std::uint64_t seed, const SyntheticConfig& config) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto count = [&](int max) { return static_cast<int>(rng() % static_cast<std::uint64_t>(max + 1)); };

  SyntheticScene s;
  s.disk_center = Eigen::Vector2d(0.5 + uni(-0.03, 0.03), 0.5 + uni(-0.03, 0.03));
  s.radius = uni(0.28, 0.32);
  s.noise_sigma = config.noise_sigma;

  const int bumps = count(config.max_bumps);
  for (int tries = 0; static_cast<int>(s.bumps.size()) < bumps && tries < 100; ++tries) {
    const double a = uni(-std::numbers::pi, std::numbers::pi);
    const bool clear = std::all_of(s.bumps.begin(), s.bumps.end(),
                                   [&](const auto& b) { return std::abs(wrap(a - b.angle)) > 1.8; });
    if (clear) s.bumps.push_back({a, uni(0.035, 0.05), uni(0.10, 0.14)});
  }

  const int spots = count(config.max_spots);
  for (int tries = 0; static_cast<int>(s.spots.size()) < spots && tries < 200; ++tries) {
    const double a = uni(-std::numbers::pi, std::numbers::pi);
    const double d = uni(0.0, 0.6 * s.radius);
    const Eigen::Vector2d c = s.disk_center + d * Eigen::Vector2d(std::cos(a), std::sin(a));
    const bool clear = std::all_of(s.spots.begin(), s.spots.end(),
                                   [&](const auto& sp) { return (sp.center - c).norm() > 0.1; });
    if (clear) s.spots.push_back({c, uni(0.011, 0.015), uni(0.85, 1.0)});
  }

  const std::array<Eigen::Vector2d, 4> corners = {Eigen::Vector2d(0.1, 0.1), Eigen::Vector2d(0.9, 0.1),
                                                  Eigen::Vector2d(0.1, 0.9), Eigen::Vector2d(0.9, 0.9)};
  for (const auto& corner : corners) {
    if (uni(0.0, 1.0) >= config.patch_probability) continue;
    const Eigen::Vector2d c = corner + Eigen::Vector2d(uni(-0.02, 0.02), uni(-0.02, 0.02));
    const double base = uni(0.05, 0.085);
    const int n = 6 + count(2);
    std::vector<Eigen::Vector2d> poly;
    for (int i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * i / n + uni(-0.3, 0.3);
      poly.push_back(c + base * uni(0.7, 1.0) * Eigen::Vector2d(std::cos(a), std::sin(a)));
    }
    s.patches.push_back(std::move(poly));
  }
  s.noise_seed = rng();
  return s;
}

ImageF render_scene(const SyntheticScene& scene, int resolution) {
  if (resolution < 1) throw Error(Errc::InvalidArgument, "resolution must be positive");
  const int res = resolution;
  ImageF img(res, res, 3);
  const MaskGrid patches = patch_mask(scene, res);
  std::mt19937_64 rng(scene.noise_seed ^ static_cast<std::uint64_t>(res));
  std::normal_distribution<double> noise(0.0, scene.noise_sigma);
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      const Eigen::Vector2d u((c + 0.5) / res, (r + 0.5) / res);
      const Eigen::Vector2d d = u - scene.disk_center;
      Eigen::Vector3f color = kChamber;
      if (d.norm() <= scene.rim_radius(std::atan2(d.y(), d.x()))) {
        const float s = static_cast<float>(spot_level(scene, u));
        color = kCrystal + s * (kSpot - kCrystal);
      } else if (patches(r, c)) {
        color = kPatch;
      }
      for (int ch = 0; ch < 3; ++ch) {
        img[ch](r, c) = std::clamp(color[ch] + static_cast<float>(noise(rng)), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

AnnotationSet scene_labels(const SyntheticScene& scene, int resolution, const ImageId& image_id,
                           const AnnotationSource& source) {
  const int res = resolution;
  AnnotationSet set;
  set.image_id = image_id;
  set.source = source;
  set.masks.push_back(MaskAnnotation::from_grid(DefectClass::PolycrystallineDefect, patch_mask(scene, res)));

  for (const auto& sp : scene.spots) {
    const int x0 = std::max(0, static_cast<int>(std::lround((sp.center.x() - 2 * sp.sigma) * res)));
    const int y0 = std::max(0, static_cast<int>(std::lround((sp.center.y() - 2 * sp.sigma) * res)));
    const int x1 = std::min(res, static_cast<int>(std::lround((sp.center.x() + 2 * sp.sigma) * res)));
    const int y1 = std::min(res, static_cast<int>(std::lround((sp.center.y() + 2 * sp.sigma) * res)));
    if (x1 > x0 && y1 > y0) set.boxes.push_back({DefectClass::CenterDefect, Box{x0, y0, x1 - x0, y1 - y0}, {}});
  }

  for (const auto& b : scene.bumps) {
    int x0 = res, y0 = res, x1 = -1, y1 = -1;
    for (int r = 0; r < res; ++r) {
      for (int c = 0; c < res; ++c) {
        const Eigen::Vector2d d = Eigen::Vector2d((c + 0.5) / res, (r + 0.5) / res) - scene.disk_center;
        const double a = std::atan2(d.y(), d.x());
        if (std::abs(wrap(a - b.angle)) > 3.0 * b.width) continue;
        const double rho = d.norm();
        if (rho <= scene.radius + 0.2 * b.amplitude || rho > scene.rim_radius(a)) continue;
        x0 = std::min(x0, c);
        y0 = std::min(y0, r);
        x1 = std::max(x1, c);
        y1 = std::max(y1, r);
      }
    }
    if (x1 >= 0) set.boxes.push_back({DefectClass::EdgeDefect, Box{x0, y0, x1 - x0 + 1, y1 - y0 + 1}, {}});
  }
  return set;
}

SyntheticCorpus make_corpus(std::size_t count, std::uint64_t seed, const std::string& prefix,
                            const SyntheticConfig& config) {
  SyntheticCorpus corpus;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    const ImageId id = prefix + buf;
    corpus.ids.push_back(id);
    corpus.scenes[id] = make_scene(rng(), config);
  }
  return corpus;
}

AnnotationSet simulate_labeler(const AnnotationSet& truth, const std::string& labeler_id, std::uint64_t seed,
                               const LabelerNoise& noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AnnotationSet out = truth;
  out.source = AnnotationSource::labeler(labeler_id);
  out.review_state = ReviewState::Draft;
  out.seeded_from.reset();
  out.elapsed_labeling_seconds.reset();

  int frame_w = 0, frame_h = 0;
  for (auto& m : out.masks) {
    const MaskGrid g = m.to_grid();
    MaskGrid flipped = g;
    const int h = m.height(), w = m.width();
    frame_w = w;
    frame_h = h;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const bool v = g(r, c);
        const bool edge = (r > 0 && g(r - 1, c) != v) || (r + 1 < h && g(r + 1, c) != v) ||
                          (c > 0 && g(r, c - 1) != v) || (c + 1 < w && g(r, c + 1) != v);
        if (edge && u01(rng) < noise.boundary_flip) flipped(r, c) = !v;
      }
    }
    m = MaskAnnotation::from_grid(m.defect_class(), flipped);
  }

  std::vector<BoxAnnotation> boxes;
  for (const auto& b : truth.boxes) {
    if (u01(rng) < noise.miss) continue;
    auto nudge = [&]() { return u01(rng) < noise.box_jitter ? (u01(rng) < 0.5 ? -1 : 1) : 0; };
    int x0 = b.box.x + nudge(), y0 = b.box.y + nudge();
    int x1 = b.box.right() + nudge(), y1 = b.box.bottom() + nudge();
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    if (frame_w) x1 = std::min(frame_w, x1);
    if (frame_h) y1 = std::min(frame_h, y1);
    if (x1 <= x0 || y1 <= y0) continue;
    boxes.push_back({b.cls, Box{x0, y0, x1 - x0, y1 - y0}, {}});
  }
  out.boxes = std::move(boxes);
  return out;
}

}  // namespace defectloop
