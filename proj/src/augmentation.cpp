#include "defectloop/augmentation.hpp"

#include "defectloop/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace defectloop {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

template <typename Scalar>
Grid<Scalar> rotate90_cw(const Grid<Scalar>& g) {
  return g.transpose().rowwise().reverse();
}

template <typename Scalar>
Grid<Scalar> quarter_turns(const Grid<Scalar>& g, int turns) {
  Grid<Scalar> out = g;
  for (int t = 0; t < ((turns % 4) + 4) % 4; ++t) out = rotate90_cw(out);
  return out;
}

template <typename Scalar>
Grid<Scalar> shifted(const Grid<Scalar>& g, int dx, int dy) {
  const Eigen::Index h = g.rows(), w = g.cols();
  Grid<Scalar> out = Grid<Scalar>::Zero(h, w);
  const Eigen::Index x0 = std::clamp<Eigen::Index>(dx, 0, w), x1 = std::clamp<Eigen::Index>(w + dx, 0, w);
  const Eigen::Index y0 = std::clamp<Eigen::Index>(dy, 0, h), y1 = std::clamp<Eigen::Index>(h + dy, 0, h);
  if (x1 > x0 && y1 > y0) {
    out.block(y0, x0, y1 - y0, x1 - x0) = g.block(y0 - dy, x0 - dx, y1 - y0, x1 - x0);
  }
  return out;
}

// Exact index permutations (or shifts); nullopt for the resampled kinds.
template <typename Scalar>
std::optional<Grid<Scalar>> exact_geometric(const Grid<Scalar>& g, const TransformSpec& spec) {
  return std::visit(overloaded{
                        [&](const Rotate90& t) -> std::optional<Grid<Scalar>> { return quarter_turns(g, t.quarter_turns); },
                        [&](const FlipH&) -> std::optional<Grid<Scalar>> { return Grid<Scalar>(g.rowwise().reverse()); },
                        [&](const FlipV&) -> std::optional<Grid<Scalar>> { return Grid<Scalar>(g.colwise().reverse()); },
                        [&](const Translate& t) -> std::optional<Grid<Scalar>> { return shifted(g, t.dx, t.dy); },
                        [&](const auto&) -> std::optional<Grid<Scalar>> { return std::nullopt; },
                    },
                    spec);
}

// Inverse map for the resampled kinds (output point -> source point).
Eigen::Vector2d inverse_point(const TransformSpec& spec, const Eigen::Vector2d& q, int width, int height) {
  const Eigen::Vector2d c(width / 2.0, height / 2.0);
  const Eigen::Vector2d d = q - c;
  return std::visit(overloaded{
                        [&](const RotateSmall& t) -> Eigen::Vector2d {
                          const double a = t.angle_degrees * std::numbers::pi / 180.0;
                          const double cs = std::cos(a), sn = std::sin(a);
                          return c + Eigen::Vector2d(cs * d.x() + sn * d.y(), -sn * d.x() + cs * d.y());
                        },
                        [&](const Shear& t) -> Eigen::Vector2d { return {q.x() - t.factor * d.y(), q.y()}; },
                        [&](const Scale& t) -> Eigen::Vector2d { return c + d / t.factor; },
                        [&](const auto&) -> Eigen::Vector2d { return q; },
                    },
                    spec);
}

GridF bilinear_warp(const GridF& src, const TransformSpec& spec) {
  const int h = static_cast<int>(src.rows()), w = static_cast<int>(src.cols());
  GridF out = GridF::Zero(h, w);
  auto at = [&](int r, int c) -> float { return (r < 0 || c < 0 || r >= h || c >= w) ? 0.0f : src(r, c); };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Vector2d p = inverse_point(spec, {c + 0.5, r + 0.5}, w, h);
      const double u = p.x() - 0.5, v = p.y() - 0.5;
      const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      const float fx = static_cast<float>(u - x0), fy = static_cast<float>(v - y0);
      out(r, c) = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                  fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    }
  }
  return out;
}

MaskGrid nearest_warp(const MaskGrid& src, const TransformSpec& spec) {
  const int h = static_cast<int>(src.rows()), w = static_cast<int>(src.cols());
  MaskGrid out = MaskGrid::Constant(h, w, false);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Vector2d p = inverse_point(spec, {c + 0.5, r + 0.5}, w, h);
      const double sx = std::floor(p.x()), sy = std::floor(p.y());
      if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
      out(r, c) = src(static_cast<Eigen::Index>(sy), static_cast<Eigen::Index>(sx));
    }
  }
  // Forward splat of source pixel centres keeps thin tips and corners.
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!src(r, c)) continue;
      const Eigen::Vector2d q = map_point(spec, {c + 0.5, r + 0.5}, w, h);
      const double tx = std::floor(q.x()), ty = std::floor(q.y());
      if (tx < 0 || ty < 0 || tx >= w || ty >= h) continue;
      out(static_cast<Eigen::Index>(ty), static_cast<Eigen::Index>(tx)) = true;
    }
  }
  return out;
}

GridF clamp01(const GridF& g) { return g.cwiseMax(0.0f).cwiseMin(1.0f); }

GridF convolve3x3(const GridF& g, const Eigen::Matrix3f& k) {
  const int h = static_cast<int>(g.rows()), w = static_cast<int>(g.cols());
  GridF out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float acc = 0.0f;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          acc += k(dr + 1, dc + 1) * g(std::clamp(r + dr, 0, h - 1), std::clamp(c + dc, 0, w - 1));
        }
      }
      out(r, c) = acc;
    }
  }
  return clamp01(out);
}

GridF box_blur(const GridF& g, int radius) {
  const int h = static_cast<int>(g.rows()), w = static_cast<int>(g.cols());
  const float norm = 1.0f / static_cast<float>(2 * radius + 1);
  GridF tmp(h, w), out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float acc = 0.0f;
      for (int d = -radius; d <= radius; ++d) acc += g(r, std::clamp(c + d, 0, w - 1));
      tmp(r, c) = acc * norm;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float acc = 0.0f;
      for (int d = -radius; d <= radius; ++d) acc += tmp(std::clamp(r + d, 0, h - 1), c);
      out(r, c) = acc * norm;
    }
  }
  return out;
}

ImageF photometric(const ImageF& image, const TransformSpec& spec) {
  ImageF out = image;
  std::visit(overloaded{
                 [&](const GaussianNoise& t) {
                   std::mt19937_64 rng(t.seed);
                   std::normal_distribution<double> n(0.0, t.sigma);
                   for (auto& p : out.planes) {
                     for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += static_cast<float>(n(rng));
                     p = clamp01(p);
                   }
                 },
                 [&](const JpegCompress& t) { out = to_float(jpeg_round_trip(to_u8(image), t.quality)); },
                 [&](const Blur& t) {
                   for (auto& p : out.planes) p = box_blur(p, t.radius);
                 },
                 [&](const Sharpen&) {
                   Eigen::Matrix3f k;
                   k << 0, -1, 0, -1, 5, -1, 0, -1, 0;
                   for (auto& p : out.planes) p = convolve3x3(p, k);
                 },
                 [&](const Emboss&) {
                   Eigen::Matrix3f k;
                   k << -2, -1, 0, -1, 1, 1, 0, 1, 2;
                   for (auto& p : out.planes) p = convolve3x3(p, k);
                 },
                 [&](const auto&) {},
             },
             spec);
  return out;
}

// Snap values within rounding noise of an integer before floor/ceil.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

std::pair<int, int> transformed_size(const TransformSpec& spec, int width, int height) {
  if (const auto* t = std::get_if<Rotate90>(&spec); t && t->quarter_turns % 2 != 0) return {height, width};
  return {width, height};
}

Eigen::Vector2d map_point(const TransformSpec& spec, const Eigen::Vector2d& p, int width, int height) {
  const Eigen::Vector2d c(width / 2.0, height / 2.0);
  const Eigen::Vector2d d = p - c;
  return std::visit(overloaded{
                        [&](const Rotate90& t) -> Eigen::Vector2d {
                          Eigen::Vector2d q = p;
                          int w = width, h = height;
                          for (int i = 0; i < t.quarter_turns; ++i) {
                            q = Eigen::Vector2d(h - q.y(), q.x());
                            std::swap(w, h);
                          }
                          return q;
                        },
                        [&](const RotateSmall& t) -> Eigen::Vector2d {
                          const double a = t.angle_degrees * std::numbers::pi / 180.0;
                          const double cs = std::cos(a), sn = std::sin(a);
                          return c + Eigen::Vector2d(cs * d.x() - sn * d.y(), sn * d.x() + cs * d.y());
                        },
                        [&](const Shear& t) -> Eigen::Vector2d { return {p.x() + t.factor * d.y(), p.y()}; },
                        [&](const FlipH&) -> Eigen::Vector2d { return {width - p.x(), p.y()}; },
                        [&](const FlipV&) -> Eigen::Vector2d { return {p.x(), height - p.y()}; },
                        [&](const Scale& t) -> Eigen::Vector2d { return c + t.factor * d; },
                        [&](const Translate& t) -> Eigen::Vector2d { return {p.x() + t.dx, p.y() + t.dy}; },
                        [&](const auto&) -> Eigen::Vector2d { return p; },
                    },
                    spec);
}

ImageF transform_image(const ImageF& image, const TransformSpec& spec) {
  validate_transform(spec);
  if (is_photometric(spec)) return photometric(image, spec);
  ImageF out;
  out.planes.reserve(image.planes.size());
  for (const auto& p : image.planes) {
    if (auto exact = exact_geometric(p, spec)) out.planes.push_back(std::move(*exact));
    else out.planes.push_back(bilinear_warp(p, spec));
  }
  return out;
}

MaskGrid transform_mask(const MaskGrid& mask, const TransformSpec& spec) {
  validate_transform(spec);
  if (is_photometric(spec)) return mask;
  if (auto exact = exact_geometric(mask, spec)) return std::move(*exact);
  return nearest_warp(mask, spec);
}

std::optional<Box> transform_box(const Box& box, const TransformSpec& spec, int width, int height) {
  validate_transform(spec);
  if (is_photometric(spec)) return box;
  const auto [ow, oh] = transformed_size(spec, width, height);
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  for (const auto& corner : {Eigen::Vector2d(box.x, box.y), Eigen::Vector2d(box.right(), box.y),
                             Eigen::Vector2d(box.x, box.bottom()), Eigen::Vector2d(box.right(), box.bottom())}) {
    const Eigen::Vector2d q = map_point(spec, corner, width, height);
    x0 = std::min(x0, q.x());
    y0 = std::min(y0, q.y());
    x1 = std::max(x1, q.x());
    y1 = std::max(y1, q.y());
  }
  const double left = std::max(0.0, std::floor(snap(x0)));
  const double top = std::max(0.0, std::floor(snap(y0)));
  const double right = std::min(static_cast<double>(ow), std::ceil(snap(x1)));
  const double bottom = std::min(static_cast<double>(oh), std::ceil(snap(y1)));
  if (right <= left || bottom <= top) return std::nullopt;
  return Box{static_cast<int>(left), static_cast<int>(top), static_cast<int>(right - left),
             static_cast<int>(bottom - top)};
}

TransformResult apply_transform(const ImageF& image, const AnnotationSet& labels, const TransformSpec& spec) {
  return apply_transform(image, labels, TransformChain{spec});
}

TransformResult apply_transform(const ImageF& image, const AnnotationSet& labels, const TransformChain& chain) {
  for (const auto& m : labels.masks) {
    if (m.width() != image.width() || m.height() != image.height()) {
      throw Error(Errc::DimensionMismatch, "mask of '" + labels.image_id + "' does not match its image");
    }
  }
  TransformResult res{image, labels, {}};
  for (std::size_t step = 0; step < chain.size(); ++step) {
    const auto& spec = chain[step];
    validate_transform(spec);
    const int w = res.image.width(), h = res.image.height();
    res.image = transform_image(res.image, spec);
    if (is_photometric(spec)) continue;
    for (auto& m : res.labels.masks) m = MaskAnnotation::from_grid(m.defect_class(), transform_mask(m.to_grid(), spec));
    std::vector<BoxAnnotation> kept;
    for (const auto& b : res.labels.boxes) {
      if (auto nb = transform_box(b.box, spec, w, h)) {
        kept.push_back(BoxAnnotation{b.cls, *nb, b.score});
      } else {
        res.dropped.push_back(DroppedBox{step, b.cls, b.box});
      }
    }
    res.labels.boxes = std::move(kept);
  }
  return res;
}

nlohmann::json transform_log_json(const ImageId& image_id, std::span<const DroppedBox> dropped) {
  auto rows = nlohmann::json::array();
  for (const auto& d : dropped) {
    rows.push_back({{"step", d.step},
                    {"class", std::string(to_string(d.cls))},
                    {"x", d.box.x},
                    {"y", d.box.y},
                    {"w", d.box.w},
                    {"h", d.box.h}});
  }
  return {{"image_id", image_id}, {"dropped_boxes", rows}};
}

TransformChain sample_chain(const TransformRanges& ranges, std::uint64_t seed, int width, int height) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };

  TransformChain chain;
  const int geometric = 1 + pick(2);
  for (int i = 0; i < geometric; ++i) {
    switch (pick(7)) {
      case 0: chain.push_back(Rotate90{1 + pick(3)}); break;
      case 1: chain.push_back(RotateSmall{uniform(-ranges.max_rotate_degrees, ranges.max_rotate_degrees)}); break;
      case 2: chain.push_back(Shear{uniform(-ranges.max_shear, ranges.max_shear)}); break;
      case 3: chain.push_back(FlipH{}); break;
      case 4: chain.push_back(FlipV{}); break;
      case 5: chain.push_back(Scale{uniform(ranges.min_scale, ranges.max_scale)}); break;
      default: {
        const int mx = static_cast<int>(ranges.max_translate_fraction * width);
        const int my = static_cast<int>(ranges.max_translate_fraction * height);
        chain.push_back(Translate{mx ? pick(2 * mx + 1) - mx : 0, my ? pick(2 * my + 1) - my : 0});
      }
    }
  }
  if (pick(2) == 0) {
    switch (pick(5)) {
      case 0: chain.push_back(GaussianNoise{uniform(0.0, ranges.max_sigma), rng()}); break;
      case 1:
        chain.push_back(JpegCompress{ranges.min_jpeg_quality + pick(ranges.max_jpeg_quality - ranges.min_jpeg_quality + 1)});
        break;
      case 2: chain.push_back(Blur{1 + pick(std::max(1, ranges.max_blur_radius))}); break;
      case 3: chain.push_back(Sharpen{}); break;
      default: chain.push_back(Emboss{}); break;
    }
  }
  return chain;
}

std::uint64_t derive_seed(std::uint64_t seed, const ImageId& parent, std::size_t index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : parent) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(seed ^ h) + index);
}

namespace {

DatasetManifest append_copies(DatasetManifest out, std::span<const DatasetEntry> parents, std::size_t copies,
                              const TransformRanges& ranges, std::uint64_t seed, const std::string& tag,
                              std::size_t first_index) {
  std::set<ImageId> ids;
  for (const auto& e : out.entries) ids.insert(e.image_id);
  for (const auto& parent : parents) {
    for (std::size_t j = first_index; j < first_index + copies; ++j) {
      DatasetEntry e;
      e.image_id = parent.image_id + "_" + tag + std::to_string(j);
      if (!ids.insert(e.image_id).second) throw Error(Errc::InvalidArgument, "duplicate augmented id " + e.image_id);
      e.resolution = parent.resolution;
      e.crop_region = parent.crop_region;
      e.augmented_from = Lineage{parent.image_id,
                                 sample_chain(ranges, derive_seed(seed, parent.image_id, j), parent.resolution,
                                              parent.resolution)};
      out.split[e.image_id] = Split::Train;
      out.entries.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace

DatasetManifest expand_dataset(const DatasetManifest& base, const AugmentationPlan& plan) {
  if (plan.rate < 1) throw Error(Errc::RateTooSmall, "rate " + std::to_string(plan.rate));
  base.validate();
  std::vector<DatasetEntry> parents;
  for (const auto& e : base.entries) {
    if (!e.is_original()) throw Error(Errc::InvalidArgument, "expand_dataset expects originals only: " + e.image_id);
    if (base.split.at(e.image_id) == Split::Train) parents.push_back(e);
  }
  DatasetManifest out = append_copies(base, parents, static_cast<std::size_t>(plan.rate - 1), plan.ranges, plan.seed,
                                      "aug", 1);
  out.dataset_id = base.dataset_id + "_x" + std::to_string(plan.rate);
  return out;
}

DatasetManifest append_augmentations(const DatasetManifest& manifest, std::span<const ImageId> parents,
                                     std::size_t copies, const TransformRanges& ranges, std::uint64_t seed,
                                     const std::string& tag) {
  std::vector<DatasetEntry> chosen;
  for (const auto& id : parents) {
    auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                           [&](const DatasetEntry& e) { return e.image_id == id; });
    if (it == manifest.entries.end()) throw Error(Errc::NotFound, "no manifest entry '" + id + "'");
    if (!it->is_original()) throw Error(Errc::InvalidArgument, "'" + id + "' is itself augmented");
    if (manifest.split.at(id) != Split::Train) throw Error(Errc::InvalidArgument, "'" + id + "' is a test image");
    chosen.push_back(*it);
  }
  return append_copies(manifest, chosen, copies, ranges, seed, tag, 1);
}

std::vector<ImageId> select_for_augmentation(const std::map<ImageId, double>& accuracy, double threshold) {
  std::vector<std::pair<double, ImageId>> low;
  for (const auto& [id, a] : accuracy) {
    if (a < threshold) low.emplace_back(a, id);
  }
  std::sort(low.begin(), low.end());
  std::vector<ImageId> out;
  out.reserve(low.size());
  for (auto& [a, id] : low) out.push_back(std::move(id));
  return out;
}

}  // namespace defectloop
