#pragma once

// Label-preservation property checks shared by the augmentation tests and
// the acceptance run.

#include "defectloop/augmentation.hpp"

#include <optional>
#include <random>
#include <string>

namespace augprop {

using namespace defectloop;

inline constexpr auto kPoly = DefectClass::PolycrystallineDefect;

inline MaskGrid random_blobs(std::mt19937_64& rng, int w, int h) {
  MaskGrid m = MaskGrid::Constant(h, w, false);
  std::uniform_int_distribution<int> nblobs(1, 3);
  const int n = nblobs(rng);
  for (int i = 0; i < n; ++i) {
    const int bw = 1 + static_cast<int>(rng() % static_cast<unsigned>(std::max(1, w / 3)));
    const int bh = 1 + static_cast<int>(rng() % static_cast<unsigned>(std::max(1, h / 3)));
    const int x = static_cast<int>(rng() % static_cast<unsigned>(w - bw + 1));
    const int y = static_cast<int>(rng() % static_cast<unsigned>(h - bh + 1));
    for (int r = y; r < y + bh; ++r)
      for (int c = x; c < x + bw; ++c) m(r, c) = (rng() % 4) != 0;
  }
  m(h / 2, w / 2) = true;
  return m;
}

inline MaskGrid rectangle(int w, int h, const Box& b) {
  MaskGrid m = MaskGrid::Constant(h, w, false);
  m.block(b.y, b.x, b.h, b.w).setConstant(true);
  return m;
}

inline ImageF random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageF img;
  img.planes.emplace_back(h, w);
  for (Eigen::Index i = 0; i < img.planes[0].size(); ++i) img.planes[0].data()[i] = u(rng);
  return img;
}

/// Bounding box of the transformed mask within one pixel of the transformed
/// box on every edge (both empty also counts).
inline bool mask_box_consistent(const MaskGrid& mask, const TransformSpec& spec) {
  const auto b = mask_to_bbox(mask);
  if (!b) return true;
  const auto tb = transform_box(*b, spec, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()));
  const auto mb = mask_to_bbox(transform_mask(mask, spec));
  if (!mb || !tb) return !mb && (!tb || (tb->w <= 1 || tb->h <= 1));
  return std::abs(mb->x - tb->x) <= 1 && std::abs(mb->y - tb->y) <= 1 && std::abs(mb->right() - tb->right()) <= 1 &&
         std::abs(mb->bottom() - tb->bottom()) <= 1;
}

inline bool foreground_preserved(const MaskGrid& mask, const TransformSpec& spec) {
  return transform_mask(mask, spec).count() == mask.count();
}

inline bool images_equal(const ImageF& a, const ImageF& b) {
  if (a.planes.size() != b.planes.size()) return false;
  for (std::size_t i = 0; i < a.planes.size(); ++i) {
    if (a.planes[i].rows() != b.planes[i].rows() || a.planes[i].cols() != b.planes[i].cols()) return false;
    if ((a.planes[i] != b.planes[i]).any()) return false;
  }
  return true;
}

inline AnnotationSet labels_for(const MaskGrid& mask) {
  AnnotationSet s;
  s.image_id = "img";
  s.source = AnnotationSource::labeler("l");
  s.masks.push_back(MaskAnnotation::from_grid(kPoly, mask));
  if (auto b = mask_to_bbox(mask)) s.boxes.push_back({DefectClass::CenterDefect, *b, std::nullopt});
  return s;
}

inline bool labels_equal(const AnnotationSet& a, const AnnotationSet& b) {
  if (a.masks.size() != b.masks.size() || a.boxes.size() != b.boxes.size()) return false;
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    const MaskGrid ga = a.masks[i].to_grid(), gb = b.masks[i].to_grid();
    if (ga.rows() != gb.rows() || ga.cols() != gb.cols() || (ga != gb).any()) return false;
  }
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    if (!(a.boxes[i].box == b.boxes[i].box) || a.boxes[i].cls != b.boxes[i].cls) return false;
  }
  return true;
}

/// Applying `spec` twice returns image and labels unchanged.
inline bool involution(const ImageF& img, const MaskGrid& mask, const TransformSpec& spec) {
  const auto labels = labels_for(mask);
  const auto once = apply_transform(img, labels, spec);
  const auto twice = apply_transform(once.image, once.labels, spec);
  return images_equal(twice.image, img) && labels_equal(twice.labels, labels);
}

inline bool quarter_turns_compose(const ImageF& img, const MaskGrid& mask) {
  const auto labels = labels_for(mask);
  const auto two_steps = apply_transform(img, labels, TransformChain{Rotate90{1}, Rotate90{1}});
  const auto one_step = apply_transform(img, labels, Rotate90{2});
  return images_equal(two_steps.image, one_step.image) && labels_equal(two_steps.labels, one_step.labels);
}

inline bool photometric_keeps_labels(const ImageF& img, const MaskGrid& mask, const TransformSpec& spec) {
  const auto labels = labels_for(mask);
  const auto out = apply_transform(img, labels, spec);
  return labels_equal(out.labels, labels) && out.dropped.empty();
}

inline bool hull_in_frame(const Box& b, const TransformSpec& spec, int w, int h) {
  const auto [ow, oh] = transformed_size(spec, w, h);
  for (const auto& p : {Eigen::Vector2d(b.x, b.y), Eigen::Vector2d(b.right(), b.y), Eigen::Vector2d(b.x, b.bottom()),
                        Eigen::Vector2d(b.right(), b.bottom())}) {
    const auto q = map_point(spec, p, w, h);
    if (q.x() < -1e-9 || q.y() < -1e-9 || q.x() > ow + 1e-9 || q.y() > oh + 1e-9) return false;
  }
  return true;
}

/// Random geometric spec that keeps `content` inside the output frame;
/// `general` restricts to kinds for which arbitrary mask shapes keep the
/// tight-box relation.
inline TransformSpec random_geometric(std::mt19937_64& rng, int w, int h, bool general,
                                      std::optional<Box> content = std::nullopt) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&]() -> TransformSpec {
    const int k = static_cast<int>(rng() % (general ? 5 : 3));
    if (general) {
      switch (k) {
        case 0: return Rotate90{1 + static_cast<int>(rng() % 3)};
        case 1: return FlipH{};
        case 2: return FlipV{};
        case 3: return Translate{static_cast<int>(rng() % static_cast<unsigned>(w)) - w / 2,
                                 static_cast<int>(rng() % static_cast<unsigned>(h)) - h / 2};
        default: return Scale{1.0 + 0.5 * u(rng)};
      }
    }
    switch (k) {
      case 0: return RotateSmall{-20.0 + 40.0 * u(rng)};
      case 1: return Shear{-0.3 + 0.6 * u(rng)};
      default: return Scale{0.6 + 0.4 * u(rng)};
    }
  };
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto spec = draw();
    if (!content || hull_in_frame(*content, spec, w, h)) return spec;
  }
  return FlipH{};
}

inline TransformSpec random_photometric(std::mt19937_64& rng) {
  switch (rng() % 5) {
    case 0: return GaussianNoise{0.05, rng()};
    case 1: return JpegCompress{30 + static_cast<int>(rng() % 70)};
    case 2: return Blur{1 + static_cast<int>(rng() % 2)};
    case 3: return Sharpen{};
    default: return Emboss{};
  }
}

struct SuiteResult {
  std::size_t pairs = 0;
  std::size_t failures = 0;
  std::string first_failure;
};

/// Runs every property over `pairs` random (image, mask, spec) draws.
inline SuiteResult run_suite(std::size_t pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SuiteResult res;
  auto fail = [&](const std::string& what, const TransformSpec& spec) {
    ++res.failures;
    if (res.first_failure.empty()) res.first_failure = what + " " + describe(spec);
  };
  for (std::size_t i = 0; i < pairs; ++i) {
    ++res.pairs;
    const int w = 8 + static_cast<int>(rng() % 25), h = 8 + static_cast<int>(rng() % 25);
    const ImageF img = random_image(rng, w, h);
    const MaskGrid blobs = random_blobs(rng, w, h);

    const auto general = random_geometric(rng, w, h, true, mask_to_bbox(blobs));
    if (!mask_box_consistent(blobs, general)) fail("mask/box", general);

    const int bx = static_cast<int>(rng() % static_cast<unsigned>(w / 2));
    const int by = static_cast<int>(rng() % static_cast<unsigned>(h / 2));
    const Box rect{bx, by, 2 + static_cast<int>(rng() % static_cast<unsigned>(w - bx - 1)),
                   2 + static_cast<int>(rng() % static_cast<unsigned>(h - by - 1))};
    const Box clipped{rect.x, rect.y, std::min(rect.w, w - rect.x), std::min(rect.h, h - rect.y)};
    const auto resampled = random_geometric(rng, w, h, false, clipped);
    if (!mask_box_consistent(rectangle(w, h, clipped), resampled)) fail("mask/box rect", resampled);

    const TransformSpec shuffle = (rng() % 2) ? TransformSpec{Rotate90{1 + static_cast<int>(rng() % 3)}}
                                              : ((rng() % 2) ? TransformSpec{FlipH{}} : TransformSpec{FlipV{}});
    if (!foreground_preserved(blobs, shuffle)) fail("foreground", shuffle);

    const TransformSpec flip = (rng() % 2) ? TransformSpec{FlipH{}} : TransformSpec{FlipV{}};
    if (!involution(img, blobs, flip)) fail("involution", flip);
    if (!quarter_turns_compose(img, blobs)) fail("compose", Rotate90{2});

    const auto photo = random_photometric(rng);
    if (!photometric_keeps_labels(img, blobs, photo)) fail("photometric", photo);
  }
  return res;
}

}  // namespace augprop
