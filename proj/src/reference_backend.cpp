#include "defectloop/reference_backend.hpp"

#include "defectloop/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <tuple>

namespace defectloop {

std::pair<Grid<int>, int> label_components(const MaskGrid& mask, bool eight_connected) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  Grid<int> labels = Grid<int>::Zero(h, w);
  int count = 0;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c) || labels(r, c)) continue;
      labels(r, c) = ++count;
      stack.emplace_back(r, c);
      while (!stack.empty()) {
        const auto [pr, pc] = stack.back();
        stack.pop_back();
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || (!eight_connected && dr != 0 && dc != 0)) continue;
            const int nr = pr + dr, nc = pc + dc;
            if (nr < 0 || nc < 0 || nr >= h || nc >= w || !mask(nr, nc) || labels(nr, nc)) continue;
            labels(nr, nc) = count;
            stack.emplace_back(nr, nc);
          }
        }
      }
    }
  }
  return {std::move(labels), count};
}

double otsu_threshold(const GridF& values) {
  std::array<double, 256> hist{};
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const float v = std::clamp(values.data()[i], 0.0f, 1.0f);
    hist[static_cast<std::size_t>(std::min(255.0f, v * 256.0f))] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = t;
    }
  }
  return (best_bin + 1) / 256.0;
}

namespace {

constexpr int kAngles = 360;
constexpr int kBaselineHalfWindow = 45;
constexpr double kExcessMin = 0.5;

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Cut between positives (want above) and negatives (want below) with the
// fewest misplaced samples; among equally good cuts, the centre of the widest
// gap.
double split_threshold(std::vector<double> pos, std::vector<double> neg) {
  std::vector<std::pair<double, int>> all;
  for (double v : pos) all.emplace_back(v, 1);
  for (double v : neg) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end());
  std::size_t errors = neg.size();  // cut below everything
  std::size_t best_errors = errors;
  double best_gap = -1.0;
  double best = all.front().first - 0.5;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) {
    errors += all[i].second ? 1 : -1;
    if (all[i + 1].first == all[i].first) continue;
    const double gap = all[i + 1].first - all[i].first;
    if (errors < best_errors || (errors == best_errors && gap > best_gap)) {
      best_errors = errors;
      best_gap = gap;
      best = 0.5 * (all[i].first + all[i + 1].first);
    }
  }
  return best;
}

int angle_bin(double dx, double dy) {
  double deg = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
  int k = static_cast<int>(std::lround(deg)) % kAngles;
  return k < 0 ? k + kAngles : k;
}

Eigen::MatrixXd pixel_matrix(const ImageF& image) {
  Eigen::MatrixXd m(image.channels(), image.width() * image.height());
  for (int c = 0; c < image.channels(); ++c) {
    m.row(c) = Eigen::Map<const Eigen::VectorXf>(image[c].data(), image[c].size()).cast<double>().transpose();
  }
  return m;
}

std::vector<Eigen::VectorXd> kmeans(const Eigen::MatrixXd& samples, int k) {
  const Eigen::Index n = samples.cols();
  k = static_cast<int>(std::min<Eigen::Index>(k, n));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Eigen::VectorXd brightness = samples.colwise().mean().transpose();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return brightness[a] < brightness[b]; });
  std::vector<Eigen::VectorXd> centers;
  for (int j = 0; j < k; ++j) {
    const auto idx = order[static_cast<std::size_t>((2 * j + 1) * n / (2 * k))];
    centers.push_back(samples.col(idx));
  }
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 25; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = (samples.col(i) - centers[static_cast<std::size_t>(j)]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best || iter == 0) changed = true;
      assign[static_cast<std::size_t>(i)] = best;
    }
    if (!changed) break;
    for (int j = 0; j < k; ++j) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(samples.rows());
      Eigen::Index cnt = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] != j) continue;
        sum += samples.col(i);
        ++cnt;
      }
      if (cnt) centers[static_cast<std::size_t>(j)] = sum / static_cast<double>(cnt);
    }
  }
  return centers;
}

bool inside_any(int r, int c, const std::vector<Box>& boxes) {
  return std::any_of(boxes.begin(), boxes.end(),
                     [&](const Box& b) { return c >= b.x && c < b.right() && r >= b.y && r < b.bottom(); });
}

struct Blob {
  Box box;
  double peak = 0.0;
  double cx = 0.0, cy = 0.0;  // weighted centroid, pixel-edge coordinates
};

// Components of (values > cut) with their peak and value-weighted centroid.
std::vector<Blob> blobs_above(const GridF& values, double cut, std::size_t min_pixels) {
  const auto [labels, count] = label_components(values > static_cast<float>(cut), true);
  std::vector<Blob> out(static_cast<std::size_t>(count));
  std::vector<double> weight(static_cast<std::size_t>(count), 0.0);
  std::vector<std::size_t> pixels(static_cast<std::size_t>(count), 0);
  std::vector<std::array<int, 4>> ext(static_cast<std::size_t>(count), {INT32_MAX, INT32_MAX, -1, -1});
  for (int r = 0; r < labels.rows(); ++r) {
    for (int c = 0; c < labels.cols(); ++c) {
      const int l = labels(r, c);
      if (!l) continue;
      const auto i = static_cast<std::size_t>(l - 1);
      const double v = values(r, c);
      auto& b = out[i];
      b.peak = std::max(b.peak, v);
      b.cx += v * (c + 0.5);
      b.cy += v * (r + 0.5);
      weight[i] += v;
      ++pixels[i];
      ext[i] = {std::min(ext[i][0], c), std::min(ext[i][1], r), std::max(ext[i][2], c), std::max(ext[i][3], r)};
    }
  }
  std::vector<Blob> kept;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (pixels[i] < min_pixels) continue;
    auto b = out[i];
    if (weight[i] > 0) {
      b.cx /= weight[i];
      b.cy /= weight[i];
    }
    b.box = Box{ext[i][0], ext[i][1], ext[i][2] - ext[i][0] + 1, ext[i][3] - ext[i][1] + 1};
    kept.push_back(b);
  }
  return kept;
}

struct RimBlob {
  double peak = 0.0;
  std::vector<std::tuple<int, int, float>> pixels;  // row, col, excess

  [[nodiscard]] std::optional<Box> box_above(double cut) const {
    int x0 = INT32_MAX, y0 = INT32_MAX, x1 = -1, y1 = -1;
    for (const auto& [r, c, e] : pixels) {
      if (e < cut * peak) continue;
      x0 = std::min(x0, c);
      y0 = std::min(y0, r);
      x1 = std::max(x1, c);
      y1 = std::max(y1, r);
    }
    if (x1 < 0) return std::nullopt;
    return Box{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
  }
};

std::vector<RimBlob> rim_blobs(const GridF& excess) {
  const auto [labels, count] = label_components(excess > static_cast<float>(kExcessMin), true);
  std::vector<RimBlob> out(static_cast<std::size_t>(count));
  for (int r = 0; r < labels.rows(); ++r) {
    for (int c = 0; c < labels.cols(); ++c) {
      if (const int l = labels(r, c)) {
        auto& b = out[static_cast<std::size_t>(l - 1)];
        b.peak = std::max(b.peak, static_cast<double>(excess(r, c)));
        b.pixels.emplace_back(r, c, excess(r, c));
      }
    }
  }
  return out;
}

constexpr int kCutSteps = 13;  // candidate cuts 0, 0.05, ..., 0.6

std::optional<Box> centred_box(double cx, double cy, double w, double h, int width, int height) {
  const int bw = std::max(1, static_cast<int>(std::lround(w)));
  const int bh = std::max(1, static_cast<int>(std::lround(h)));
  int x = static_cast<int>(std::lround(cx - bw / 2.0));
  int y = static_cast<int>(std::lround(cy - bh / 2.0));
  const int x1 = std::min(width, x + bw), y1 = std::min(height, y + bh);
  x = std::max(0, x);
  y = std::max(0, y);
  if (x1 <= x || y1 <= y) return std::nullopt;
  return Box{x, y, x1 - x, y1 - y};
}

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::optional<std::pair<MaskGrid, RimProfile>> rim_profile(const GridF& lum) {
  if (lum.size() == 0 || lum.maxCoeff() - lum.minCoeff() < 0.05f) return std::nullopt;
  const auto [labels, count] = label_components(lum > static_cast<float>(otsu_threshold(lum)), false);
  if (count == 0) return std::nullopt;
  std::vector<std::size_t> sizes(static_cast<std::size_t>(count) + 1, 0);
  for (Eigen::Index i = 0; i < labels.size(); ++i) ++sizes[static_cast<std::size_t>(labels.data()[i])];
  int largest = 1;
  for (int l = 2; l <= count; ++l) {
    if (sizes[static_cast<std::size_t>(l)] > sizes[static_cast<std::size_t>(largest)]) largest = l;
  }
  MaskGrid blob = labels == largest;

  RimProfile prof;
  double n = 0.0;
  for (int r = 0; r < blob.rows(); ++r) {
    for (int c = 0; c < blob.cols(); ++c) {
      if (!blob(r, c)) continue;
      prof.centroid += Eigen::Vector2d(c + 0.5, r + 0.5);
      n += 1.0;
    }
  }
  prof.centroid /= n;

  const int h = static_cast<int>(blob.rows()), w = static_cast<int>(blob.cols());
  const double reach = std::hypot(w, h);
  prof.radius = Eigen::VectorXd::Zero(kAngles);
  for (int k = 0; k < kAngles; ++k) {
    const double a = k * std::numbers::pi / 180.0;
    const Eigen::Vector2d u(std::cos(a), std::sin(a));
    double last = 0.0;
    for (double t = 0.0; t < reach; t += 0.25) {
      const Eigen::Vector2d p = prof.centroid + t * u;
      const int c = static_cast<int>(std::floor(p.x())), r = static_cast<int>(std::floor(p.y()));
      if (c < 0 || r < 0 || c >= w || r >= h || !blob(r, c)) break;
      last = t;
    }
    prof.radius[k] = last;
  }
  prof.baseline = Eigen::VectorXd::Zero(kAngles);
  std::vector<double> window;
  for (int k = 0; k < kAngles; ++k) {
    window.clear();
    for (int d = -kBaselineHalfWindow; d <= kBaselineHalfWindow; ++d) {
      window.push_back(prof.radius[((k + d) % kAngles + kAngles) % kAngles]);
    }
    prof.baseline[k] = median_of(window);
  }
  return std::pair{std::move(blob), std::move(prof)};
}

GridF rim_excess(const MaskGrid& blob, const RimProfile& profile) {
  GridF out = GridF::Zero(blob.rows(), blob.cols());
  for (int r = 0; r < blob.rows(); ++r) {
    for (int c = 0; c < blob.cols(); ++c) {
      if (!blob(r, c)) continue;
      const double dx = c + 0.5 - profile.centroid.x(), dy = r + 0.5 - profile.centroid.y();
      const double e = std::hypot(dx, dy) - profile.baseline[angle_bin(dx, dy)];
      out(r, c) = static_cast<float>(std::max(0.0, e));
    }
  }
  return out;
}

nlohmann::json params_to_json(const ReferenceParams& p) {
  nlohmann::json seg = nlohmann::json::object();
  for (const auto& [cls, m] : p.segmentation) {
    auto bg = nlohmann::json::array();
    for (const auto& c : m.background) bg.push_back(vec_json(c));
    seg[std::string(to_string(cls))] = {{"foreground", vec_json(m.foreground)}, {"background", bg}};
  }
  nlohmann::json j{{"width", p.width}, {"height", p.height}, {"channels", p.channels}, {"segmentation", seg}};
  if (p.center) {
    j["center"] = {{"threshold", p.center->threshold}, {"box_w", p.center->box_w}, {"box_h", p.center->box_h}};
  }
  if (p.edge) j["edge"] = {{"threshold", p.edge->threshold}, {"cut", p.edge->cut}};
  return j;
}

ReferenceParams params_from_json(const nlohmann::json& j) {
  try {
    ReferenceParams p;
    p.width = j.at("width").get<int>();
    p.height = j.at("height").get<int>();
    p.channels = j.at("channels").get<int>();
    for (const auto& [name, m] : j.at("segmentation").items()) {
      SegmentationModel sm;
      sm.foreground = vec_from(m.at("foreground"));
      for (const auto& c : m.at("background")) sm.background.push_back(vec_from(c));
      p.segmentation[defect_class_from_string(name)] = std::move(sm);
    }
    if (j.contains("center")) {
      const auto& c = j.at("center");
      p.center = CenterModel{c.at("threshold").get<double>(), c.at("box_w").get<double>(), c.at("box_h").get<double>()};
    }
    if (j.contains("edge")) {
      p.edge = EdgeModel{j.at("edge").at("threshold").get<double>(), j.at("edge").at("cut").get<double>()};
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("reference params: ") + e.what());
  }
}

ReferenceParams fit_reference(const TrainingSource& data, std::span<const DefectClass> classes) {
  if (data.size() == 0) throw Error(Errc::EmptyTrainingSet, "no training examples");
  auto wants = [&](DefectClass c) { return std::find(classes.begin(), classes.end(), c) != classes.end(); };

  ReferenceParams params;
  struct SegAccum {
    Eigen::VectorXd fg_sum;
    double fg_n = 0.0;
    std::vector<Eigen::VectorXd> bg_samples;
  };
  std::map<DefectClass, SegAccum> seg;
  std::vector<double> center_peaks, center_background, center_w, center_h;
  std::vector<double> edge_pos, edge_neg;
  std::array<double, kCutSteps> edge_cut_iou{};
  std::size_t edge_boxes = 0;

  const std::size_t per_image_cap = std::max<std::size_t>(64, 200000 / data.size());

  for (std::size_t i = 0; i < data.size(); ++i) {
    const TrainingExample ex = data.get(i);
    const ImageF& img = ex.image;
    if (i == 0) {
      params.width = img.width();
      params.height = img.height();
      params.channels = img.channels();
    } else if (img.width() != params.width || img.height() != params.height || img.channels() != params.channels) {
      throw Error(Errc::DimensionMismatch, "training image '" + ex.image_id + "' differs in shape");
    }
    const int w = img.width(), h = img.height();
    const Eigen::MatrixXd pix = pixel_matrix(img);

    for (auto cls : kSegmentationClasses) {
      if (!wants(cls)) continue;
      auto& acc = seg[cls];
      if (acc.fg_sum.size() == 0) acc.fg_sum = Eigen::VectorXd::Zero(params.channels);
      const MaskGrid m = mask_or_empty(ex.labels, cls, w, h);
      const auto stride = static_cast<std::size_t>(
          std::max(1.0, std::ceil(static_cast<double>(pix.cols()) / static_cast<double>(per_image_cap))));
      for (Eigen::Index p = 0; p < pix.cols(); ++p) {
        if (m.data()[p]) {
          acc.fg_sum += pix.col(p);
          acc.fg_n += 1.0;
        } else if (static_cast<std::size_t>(p) % stride == 0) {
          acc.bg_samples.push_back(pix.col(p));
        }
      }
    }

    const bool need_center = wants(DefectClass::CenterDefect);
    const bool need_edge = wants(DefectClass::EdgeDefect);
    if (!need_center && !need_edge) continue;
    const GridF lum = luminance(img);

    if (need_center) {
      const auto boxes = ex.labels.boxes_for(DefectClass::CenterDefect);
      for (const auto& b : boxes) {
        if (b.w <= 0 || b.h <= 0) continue;
        center_peaks.push_back(lum.block(b.y, b.x, b.h, b.w).maxCoeff());
        center_w.push_back(b.w);
        center_h.push_back(b.h);
      }
      float outside = 0.0f;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (!inside_any(r, c, boxes)) outside = std::max(outside, lum(r, c));
        }
      }
      center_background.push_back(outside);
    }

    if (need_edge) {
      const auto boxes = ex.labels.boxes_for(DefectClass::EdgeDefect);
      edge_boxes += boxes.size();
      if (auto rim = rim_profile(lum)) {
        const GridF excess = rim_excess(rim->first, rim->second);
        const auto blobs = rim_blobs(excess);
        for (const auto& b : boxes) {
          if (b.w <= 0 || b.h <= 0) continue;
          edge_pos.push_back(excess.block(b.y, b.x, b.h, b.w).maxCoeff());
          const RimBlob* best = nullptr;
          std::size_t best_hits = 0;
          for (const auto& blob : blobs) {
            std::size_t hits = 0;
            for (const auto& [r, c, e] : blob.pixels) hits += (c >= b.x && c < b.right() && r >= b.y && r < b.bottom());
            if (hits > best_hits) {
              best_hits = hits;
              best = &blob;
            }
          }
          if (!best) continue;
          for (int k = 0; k < kCutSteps; ++k) {
            if (auto pb = best->box_above(0.05 * k)) edge_cut_iou[static_cast<std::size_t>(k)] += box_iou(*pb, b);
          }
        }
        for (const auto& blob : blobs) {
          const auto bb = blob.box_above(0.0);
          const bool hits = std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) {
            return bb->x < b.right() && b.x < bb->right() && bb->y < b.bottom() && b.y < bb->bottom();
          });
          if (!hits) edge_neg.push_back(blob.peak);
        }
      }
    }
  }

  for (auto& [cls, acc] : seg) {
    if (acc.fg_n == 0.0) throw Error(Errc::ClassUnrepresented, std::string(to_string(cls)));
    SegmentationModel m;
    m.foreground = acc.fg_sum / acc.fg_n;
    if (acc.bg_samples.empty()) {
      m.background.push_back(Eigen::VectorXd::Zero(params.channels));
    } else {
      Eigen::MatrixXd samples(params.channels, static_cast<Eigen::Index>(acc.bg_samples.size()));
      for (std::size_t s = 0; s < acc.bg_samples.size(); ++s) samples.col(static_cast<Eigen::Index>(s)) = acc.bg_samples[s];
      m.background = kmeans(samples, 3);
    }
    params.segmentation[cls] = std::move(m);
  }
  if (wants(DefectClass::CenterDefect)) {
    if (center_peaks.empty()) throw Error(Errc::ClassUnrepresented, std::string(to_string(DefectClass::CenterDefect)));
    CenterModel cm;
    cm.threshold = split_threshold(center_peaks, center_background);
    cm.box_w = median_of(center_w);
    cm.box_h = median_of(center_h);
    params.center = cm;
  }
  if (wants(DefectClass::EdgeDefect)) {
    if (edge_boxes == 0) throw Error(Errc::ClassUnrepresented, std::string(to_string(DefectClass::EdgeDefect)));
    const double neg = edge_neg.empty() ? kExcessMin : quantile_of(edge_neg, 0.95);
    const auto best_cut = std::max_element(edge_cut_iou.begin(), edge_cut_iou.end()) - edge_cut_iou.begin();
    params.edge = EdgeModel{0.5 * (median_of(edge_pos) + neg), 0.05 * static_cast<double>(best_cut)};
  }
  return params;
}

Prediction predict_reference(const ReferenceParams& params, const ImageF& image, const ImageId& image_id) {
  if (image.width() != params.width || image.height() != params.height) {
    throw Error(Errc::ResolutionMismatch, image_id + ": " + std::to_string(image.width()) + "x" +
                                              std::to_string(image.height()) + " vs model " +
                                              std::to_string(params.width) + "x" + std::to_string(params.height));
  }
  if (image.channels() != params.channels) {
    throw Error(Errc::DimensionMismatch, image_id + ": channel count differs from training data");
  }
  Prediction pred;
  pred.image_id = image_id;
  const int w = image.width(), h = image.height();

  for (const auto& [cls, m] : params.segmentation) {
    Grid<double> dfg = Grid<double>::Zero(h, w);
    for (int c = 0; c < params.channels; ++c) dfg += (image[c].cast<double>() - m.foreground[c]).square();
    dfg = dfg.sqrt();
    Grid<double> dbg = Grid<double>::Constant(h, w, std::numeric_limits<double>::infinity());
    for (const auto& centre : m.background) {
      Grid<double> d = Grid<double>::Zero(h, w);
      for (int c = 0; c < params.channels; ++c) d += (image[c].cast<double>() - centre[c]).square();
      dbg = dbg.min(d.sqrt());
    }
    const Grid<double> denom = dfg + dbg;
    pred.probability_maps[cls] = (denom > 0.0).select(dbg / denom, Grid<double>::Constant(h, w, 0.5)).cast<float>();
  }

  if (!params.center && !params.edge) return pred;
  const GridF lum = luminance(image);
  if (params.center) {
    for (const auto& blob : blobs_above(lum, params.center->threshold, 2)) {
      if (auto b = centred_box(blob.cx, blob.cy, params.center->box_w, params.center->box_h, w, h)) {
        pred.boxes.push_back(BoxAnnotation{DefectClass::CenterDefect, *b, std::clamp(blob.peak, 0.0, 1.0)});
      }
    }
  }
  if (params.edge) {
    if (auto rim = rim_profile(lum)) {
      const GridF excess = rim_excess(rim->first, rim->second);
      for (const auto& blob : rim_blobs(excess)) {
        if (blob.peak <= params.edge->threshold) continue;
        if (auto b = blob.box_above(params.edge->cut)) {
          pred.boxes.push_back(
              BoxAnnotation{DefectClass::EdgeDefect, *b, blob.peak / (blob.peak + params.edge->threshold)});
        }
      }
    }
  }
  return pred;
}

ModelHandle ReferenceBackend::train(const TrainRequest& request, const TrainingSource& data) {
  request.hyperparams.validate();
  if (request.model_id.empty()) throw Error(Errc::InvalidArgument, "model id required");
  std::mutex* lineage_lock = nullptr;
  {
    std::lock_guard lock(mutex_);
    auto& slot = train_locks_[request.model_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    lineage_lock = slot.get();
  }
  std::lock_guard exclusive(*lineage_lock);

  ReferenceParams params = fit_reference(data, request.classes);

  ModelHandle handle;
  handle.model_id = request.model_id;
  handle.backend_kind = BackendKind::ReferenceClassical;
  handle.training_manifest_id = request.training_manifest_id;
  handle.resolution = params.width;
  {
    std::lock_guard lock(mutex_);
    int& v = versions_[request.model_id];
    if (registry_) v = std::max(v, registry_->latest_version(request.model_id));
    handle.version = ++v;
    models_[{handle.model_id, handle.version}] = params;
  }
  if (registry_) registry_->save(handle, params_to_json(params).dump());
  return handle;
}

ReferenceParams ReferenceBackend::lookup(const ModelHandle& model) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = models_.find({model.model_id, model.version}); it != models_.end()) return it->second;
  }
  if (registry_) {
    try {
      auto [stored, text] = registry_->load(model.model_id);
      if (stored.version == model.version) {
        auto params = params_from_json(nlohmann::json::parse(text));
        std::lock_guard lock(mutex_);
        models_[{model.model_id, model.version}] = params;
        return params;
      }
    } catch (const Error& e) {
      if (e.code() != Errc::NotFound) throw;
    }
  }
  throw Error(Errc::UntrainedModel, "model '" + model.model_id + "' v" + std::to_string(model.version));
}

Prediction ReferenceBackend::predict(const ModelHandle& model, const ImageF& image, const ImageId& image_id) const {
  const ReferenceParams params = lookup(model);
  if (image.width() != model.resolution && model.resolution != 0) {
    throw Error(Errc::ResolutionMismatch, image_id + ": model trained at " + std::to_string(model.resolution));
  }
  return predict_reference(params, image, image_id);
}

std::string ReferenceBackend::params_text(const ModelHandle& model) const {
  return params_to_json(lookup(model)).dump();
}

}  // namespace defectloop
