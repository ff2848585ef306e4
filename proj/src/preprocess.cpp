#include "defectloop/preprocess.hpp"

#include "defectloop/annotation_json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace defectloop {

void GrowthRunManifest::validate() const {
  if (capture_interval_seconds <= 0) throw Error(Errc::InvalidArgument, "capture_interval_seconds must be positive");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].captured_at < frames[i - 1].captured_at) {
      throw Error(Errc::UnsortedInput, "frame " + frames[i].image_id + " is out of order");
    }
  }
}

void PreprocessConfig::validate() const {
  if (window_seconds <= 0) throw Error(Errc::InvalidArgument, "window_seconds must be positive");
  if (blackout_luminance_max < 0.0 || blackout_luminance_max > 1.0) {
    throw Error(Errc::InvalidArgument, "blackout_luminance_max must be in [0,1]");
  }
  if (noise_variance_max < 0.0) throw Error(Errc::InvalidArgument, "noise_variance_max must be >= 0");
  if (target_resolutions.empty()) throw Error(Errc::InvalidArgument, "target_resolutions must not be empty");
  for (int r : target_resolutions) {
    if (r != 256 && r != 512) throw Error(Errc::InvalidArgument, "target resolution must be 256 or 512");
  }
  if (pool_size <= 0) throw Error(Errc::InvalidArgument, "pool_size must be positive");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw Error(Errc::DegenerateRatio, "split_ratio must be in (0,1)");
}

std::string_view to_string(Split s) noexcept { return s == Split::Train ? "Train" : "Test"; }

void DatasetManifest::validate() const {
  for (const auto& e : entries) {
    auto it = split.find(e.image_id);
    if (e.is_original()) {
      if (it == split.end()) throw Error(Errc::InvalidArgument, "original entry " + e.image_id + " has no split");
    } else {
      if (it != split.end() && it->second == Split::Test) {
        throw Error(Errc::InvalidArgument, "augmented entry " + e.image_id + " is in the test split");
      }
      auto parent = split.find(e.augmented_from->parent);
      if (parent != split.end() && parent->second == Split::Test) {
        throw Error(Errc::InvalidArgument, "augmented entry " + e.image_id + " derives from a test image");
      }
    }
  }
}

std::vector<ImageId> DatasetManifest::ids_in(Split s, bool originals_only) const {
  std::vector<ImageId> ids;
  for (const auto& e : entries) {
    if (originals_only && !e.is_original()) continue;
    auto it = split.find(e.image_id);
    const Split side = it != split.end() ? it->second : Split::Train;
    if (side == s && std::find(ids.begin(), ids.end(), e.image_id) == ids.end()) ids.push_back(e.image_id);
  }
  return ids;
}

std::size_t DatasetManifest::count_entries(Split s, std::optional<int> resolution) const {
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (resolution && e.resolution != *resolution) continue;
    auto it = split.find(e.image_id);
    const Split side = it != split.end() ? it->second : Split::Train;
    if (side == s) ++n;
  }
  return n;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  Json entries = Json::array();
  for (const auto& e : m.entries) {
    Json j{{"image_id", e.image_id}, {"resolution", e.resolution}, {"crop_region", e.crop_region}};
    if (e.augmented_from) {
      j["lineage"] = {{"kind", "Augmented"},
                      {"parent_image_id", e.augmented_from->parent},
                      {"transform_spec", chain_to_json(e.augmented_from->transforms)}};
    } else {
      j["lineage"] = {{"kind", "Original"}};
    }
    entries.push_back(std::move(j));
  }
  Json split = Json::object();
  for (const auto& [id, s] : m.split) split[id] = to_string(s);
  return Json{{"dataset_id", m.dataset_id}, {"entries", entries}, {"split", split}, {"split_seed", m.split_seed}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.split_seed = j.value("split_seed", std::uint64_t{0});
    for (const auto& je : j.at("entries")) {
      DatasetEntry e;
      e.image_id = je.at("image_id").get<std::string>();
      e.resolution = je.at("resolution").get<int>();
      const auto& c = je.at("crop_region");
      e.crop_region = Box{c.at("x").get<int>(), c.at("y").get<int>(), c.at("w").get<int>(), c.at("h").get<int>()};
      const auto& lin = je.at("lineage");
      if (lin.at("kind").get<std::string>() == "Augmented") {
        e.augmented_from = Lineage{lin.at("parent_image_id").get<std::string>(),
                                   chain_from_json(lin.at("transform_spec"))};
      }
      m.entries.push_back(std::move(e));
    }
    for (const auto& [id, s] : j.at("split").items()) {
      m.split[id] = s.get<std::string>() == "Test" ? Split::Test : Split::Train;
    }
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed dataset manifest: ") + e.what());
  }
}

nlohmann::json run_manifest_to_json(const GrowthRunManifest& m) {
  return Json{{"growth_run_id", m.growth_run_id},
              {"capture_interval_seconds", m.capture_interval_seconds},
              {"duration_hours", m.duration_hours},
              {"frames", m.frames}};
}

GrowthRunManifest run_manifest_from_json(const nlohmann::json& j) {
  try {
    GrowthRunManifest m;
    m.growth_run_id = j.at("growth_run_id").get<std::string>();
    m.capture_interval_seconds = j.at("capture_interval_seconds").get<int>();
    m.duration_hours = j.value("duration_hours", 0.0);
    for (const auto& f : j.at("frames")) m.frames.push_back(image_record_from_json(f));
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed run manifest: ") + e.what());
  }
}

std::vector<ImageRecord> resample_sequence(std::span<const ImageRecord> frames, int window_seconds) {
  if (window_seconds <= 0) throw Error(Errc::InvalidArgument, "window_seconds must be positive");
  std::vector<ImageRecord> kept;
  if (frames.empty()) return kept;
  const std::int64_t t0 = frames.front().captured_at;
  std::int64_t last_window = -1;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0 && frames[i].captured_at < frames[i - 1].captured_at) {
      throw Error(Errc::UnsortedInput, "frame " + frames[i].image_id + " precedes its predecessor");
    }
    const std::int64_t window = (frames[i].captured_at - t0) / window_seconds;
    if (window != last_window) {
      kept.push_back(frames[i]);
      last_window = window;
    }
  }
  return kept;
}

double mean_luminance(const Image8& image) {
  if (image.empty()) throw Error(Errc::UnreadableImage, "empty image");
  return static_cast<double>(luminance(image).mean()) / 255.0;
}

namespace {

// Replicate-border 3x3 neighbourhood sum.
Grid<double> box3_sum(const Grid<double>& in) {
  const Eigen::Index h = in.rows(), w = in.cols();
  Grid<double> padded(h + 2, w + 2);
  padded.block(1, 1, h, w) = in;
  padded.block(0, 1, 1, w) = in.row(0);
  padded.block(h + 1, 1, 1, w) = in.row(h - 1);
  padded.col(0) = padded.col(1);
  padded.col(w + 1) = padded.col(w);
  Grid<double> sum = Grid<double>::Zero(h, w);
  for (int dr = 0; dr < 3; ++dr) {
    for (int dc = 0; dc < 3; ++dc) sum += padded.block(dr, dc, h, w);
  }
  return sum;
}

}  // namespace

double residual_variance(const Image8& image) {
  if (image.empty()) throw Error(Errc::UnreadableImage, "empty image");
  const Grid<double> lum = luminance(image).cast<double>() / 255.0;
  const Grid<double> residual = lum - box3_sum(lum) / 9.0;
  const double mean = residual.mean();
  return (residual - mean).square().mean();
}

FilterResult filter_frames(std::span<const ImageRecord> frames, const PreprocessConfig& config,
                           const FrameLoader& load) {
  FilterResult result;
  for (const auto& frame : frames) {
    Image8 pixels;
    try {
      pixels = load(frame);
    } catch (const std::exception& e) {
      throw Error(Errc::UnreadableImage, frame.image_id + ": " + e.what());
    }
    if (pixels.empty()) throw Error(Errc::UnreadableImage, frame.image_id);

    ImageRecord rec = frame;
    rec.width = pixels.width();
    rec.height = pixels.height();
    if (mean_luminance(pixels) < config.blackout_luminance_max) {
      rec.status = ImageStatus::Rejected;
      rec.reject_reason = RejectReason::Blackout;
      result.rejected.push_back(std::move(rec));
    } else if (residual_variance(pixels) > config.noise_variance_max) {
      rec.status = ImageStatus::Rejected;
      rec.reject_reason = RejectReason::Noise;
      result.rejected.push_back(std::move(rec));
    } else {
      rec.status = ImageStatus::Filtered;
      rec.reject_reason.reset();
      result.kept.push_back(std::move(rec));
    }
  }
  return result;
}

Image8 median3x3(const Image8& image) {
  Image8 out = image;
  const int h = image.height(), w = image.width();
  std::array<std::uint8_t, 9> window{};
  for (int k = 0; k < image.channels(); ++k) {
    const auto& src = image[k];
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        int n = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          const int rr = std::clamp(r + dr, 0, h - 1);
          for (int dc = -1; dc <= 1; ++dc) window[n++] = src(rr, std::clamp(c + dc, 0, w - 1));
        }
        std::nth_element(window.begin(), window.begin() + 4, window.end());
        out[k](r, c) = window[4];
      }
    }
  }
  return out;
}

namespace {

// dst x src matrix whose row i holds the fractional overlap of destination
// cell i with each source cell, normalised to sum 1.
Eigen::MatrixXf area_weights(int src, int dst) {
  Eigen::MatrixXf weights = Eigen::MatrixXf::Zero(dst, src);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) weights(i, s) = static_cast<float>(overlap / scale);
    }
  }
  return weights;
}

}  // namespace

ImageF area_resize(const ImageF& image, int width, int height) {
  if (width < 1 || height < 1) throw Error(Errc::InvalidArgument, "resize target must be positive");
  if (image.width() == width && image.height() == height) return image;
  const Eigen::MatrixXf wy = area_weights(image.height(), height);
  const Eigen::MatrixXf wx = area_weights(image.width(), width);
  ImageF out;
  out.planes.reserve(image.planes.size());
  for (const auto& p : image.planes) {
    Eigen::MatrixXf resized = wy * p.matrix() * wx.transpose();
    out.planes.emplace_back(resized.array());
  }
  return out;
}

ImageF preprocess_image(const Image8& image, const Box& crop, int target_resolution, bool denoise) {
  if (target_resolution < 1) throw Error(Errc::InvalidArgument, "target resolution must be positive");
  if (crop.w < 1 || crop.h < 1 || crop.x < 0 || crop.y < 0 || crop.right() > image.width() ||
      crop.bottom() > image.height()) {
    throw Error(Errc::CropOutOfBounds, "crop (" + std::to_string(crop.x) + "," + std::to_string(crop.y) + "," +
                                           std::to_string(crop.w) + "," + std::to_string(crop.h) +
                                           ") exceeds " + std::to_string(image.width()) + "x" +
                                           std::to_string(image.height()));
  }
  Image8 cropped;
  for (const auto& p : image.planes) cropped.planes.emplace_back(p.block(crop.y, crop.x, crop.h, crop.w));
  if (denoise) cropped = median3x3(cropped);

  ImageF wide;
  for (const auto& p : cropped.planes) wide.planes.emplace_back(p.cast<float>());
  ImageF out = area_resize(wide, target_resolution, target_resolution);
  for (auto& p : out.planes) p = (p / 255.0f).cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

Box centered_square_crop(int width, int height) {
  const int side = std::min(width, height);
  return Box{(width - side) / 2, (height - side) / 2, side, side};
}

SplitResult split_dataset(std::span<const ImageId> image_ids, double split_ratio, std::uint64_t split_seed) {
  const std::size_t n = image_ids.size();
  if (n < 2) throw Error(Errc::TooFewImages, "need at least 2 images, got " + std::to_string(n));
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw Error(Errc::DegenerateRatio, "split_ratio must be in (0,1)");
  const auto n_train = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw Error(Errc::DegenerateRatio, "ratio " + std::to_string(split_ratio) + " on " + std::to_string(n) +
                                           " images leaves one side empty");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  SplitResult result;
  result.train.reserve(n_train);
  result.test.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? result.train : result.test).push_back(image_ids[i]);
  return result;
}

}  // namespace defectloop
