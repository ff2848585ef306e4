#include "defectloop/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace defectloop {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::SumMismatch: return "SumMismatch";
    case Errc::DegeneratePolygon: return "DegeneratePolygon";
    case Errc::InvalidAnnotation: return "InvalidAnnotation";
    case Errc::UnsortedInput: return "UnsortedInput";
    case Errc::UnreadableImage: return "UnreadableImage";
    case Errc::CropOutOfBounds: return "CropOutOfBounds";
    case Errc::TooFewImages: return "TooFewImages";
    case Errc::DegenerateRatio: return "DegenerateRatio";
    case Errc::EmptyPool: return "EmptyPool";
    case Errc::MixedImages: return "MixedImages";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::ProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case Errc::MissingScore: return "MissingScore";
    case Errc::RateTooSmall: return "RateTooSmall";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::AllUndefined: return "AllUndefined";
    case Errc::NoGroundTruth: return "NoGroundTruth";
    case Errc::MissingPrediction: return "MissingPrediction";
    case Errc::ResolutionMismatch: return "ResolutionMismatch";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::UntrainedModel: return "UntrainedModel";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::ClassUnrepresented: return "ClassUnrepresented";
    case Errc::HyperparamOutOfRange: return "HyperparamOutOfRange";
    case Errc::Timeout: return "Timeout";
    case Errc::MalformedResponse: return "MalformedResponse";
    case Errc::RemoteError: return "RemoteError";
    case Errc::MaxBatchesExceeded: return "MaxBatchesExceeded";
    case Errc::UnknownLabeler: return "UnknownLabeler";
    case Errc::LeaseExpired: return "LeaseExpired";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::UnknownTask: return "UnknownTask";
    case Errc::AlreadyRunning: return "AlreadyRunning";
    case Errc::NoActiveRun: return "NoActiveRun";
    case Errc::NotFound: return "NotFound";
    case Errc::Aborted: return "Aborted";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

std::string_view to_string(DefectClass c) noexcept {
  switch (c) {
    case DefectClass::PolycrystallineDefect: return "PolycrystallineDefect";
    case DefectClass::CenterDefect: return "CenterDefect";
    case DefectClass::EdgeDefect: return "EdgeDefect";
  }
  return "Unknown";
}

DefectClass defect_class_from_string(std::string_view name) {
  for (auto c : kAllClasses) {
    if (to_string(c) == name) return c;
  }
  throw Error(Errc::InvalidAnnotation, "unknown defect class '" + std::string(name) + "'");
}

std::string_view to_string(ImageStatus s) noexcept {
  switch (s) {
    case ImageStatus::Raw: return "Raw";
    case ImageStatus::Filtered: return "Filtered";
    case ImageStatus::Preprocessed: return "Preprocessed";
    case ImageStatus::Rejected: return "Rejected";
  }
  return "Unknown";
}

std::string_view to_string(RejectReason r) noexcept {
  return r == RejectReason::Blackout ? "Blackout" : "Noise";
}

void ImageRecord::validate() const {
  if (width < 1 || height < 1) {
    throw Error(Errc::InvalidArgument, "image " + image_id + " has a zero dimension");
  }
  if ((status == ImageStatus::Rejected) != reject_reason.has_value()) {
    throw Error(Errc::InvalidArgument, "image " + image_id + ": reject_reason must accompany Rejected status");
  }
}

Rle rle_encode(const MaskGrid& mask) {
  Rle runs;
  bool current = false;
  std::uint32_t length = 0;
  // RowMajor storage: data() is already in row-major pixel order.
  const bool* px = mask.data();
  const auto n = mask.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (px[i] != current) {
      runs.push_back(length);
      current = px[i];
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

MaskGrid rle_decode(std::span<const std::uint32_t> rle, int width, int height) {
  if (width < 1 || height < 1) throw Error(Errc::InvalidArgument, "mask dimensions must be positive");
  const std::uint64_t total = std::accumulate(rle.begin(), rle.end(), std::uint64_t{0});
  const auto expected = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  if (total != expected) {
    throw Error(Errc::SumMismatch,
                "run lengths sum to " + std::to_string(total) + ", expected " + std::to_string(expected));
  }
  MaskGrid mask(height, width);
  bool* px = mask.data();
  bool value = false;
  std::uint64_t pos = 0;
  for (auto run : rle) {
    std::fill(px + pos, px + pos + run, value);
    pos += run;
    value = !value;
  }
  return mask;
}

MaskGrid polygon_to_mask(std::span<const Eigen::Vector2d> vertices, int width, int height) {
  if (vertices.size() < 3) {
    throw Error(Errc::DegeneratePolygon, "polygon needs at least 3 vertices, got " + std::to_string(vertices.size()));
  }
  if (width < 1 || height < 1) throw Error(Errc::InvalidArgument, "mask dimensions must be positive");

  MaskGrid mask = MaskGrid::Constant(height, width, false);
  std::vector<double> crossings;
  const std::size_t n = vertices.size();
  for (int r = 0; r < height; ++r) {
    const double y = r + 0.5;
    crossings.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const auto& a = vertices[i];
      const auto& b = vertices[j];
      // Half-open in y so a vertex on the scanline is counted once.
      if ((a.y() > y) != (b.y() > y)) {
        crossings.push_back(a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      // Pixel c is inside when an odd number of crossings lie left of c+0.5.
      const int first = std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
      const int last = std::min(width - 1, static_cast<int>(std::ceil(crossings[k + 1] - 0.5)) - 1);
      for (int c = first; c <= last; ++c) {
        if (c + 0.5 > crossings[k] && c + 0.5 < crossings[k + 1]) mask(r, c) = true;
      }
    }
  }
  return mask;
}

namespace {

void check_runs(const Rle& rle) {
  for (std::size_t i = 1; i < rle.size(); ++i) {
    if (rle[i] == 0) throw Error(Errc::InvalidAnnotation, "zero-length run at position " + std::to_string(i));
  }
  if (rle.empty()) throw Error(Errc::InvalidAnnotation, "empty run list");
}

}  // namespace

MaskAnnotation::MaskAnnotation(DefectClass cls, int width, int height, Rle rle)
    : cls_(cls), width_(width), height_(height), rle_(std::move(rle)) {
  if (task_of(cls_) != TaskKind::Segmentation) {
    throw Error(Errc::InvalidAnnotation, std::string(to_string(cls_)) + " is not a segmentation class");
  }
  if (width_ < 1 || height_ < 1) throw Error(Errc::InvalidAnnotation, "mask dimensions must be positive");
  check_runs(rle_);
  const std::uint64_t total = std::accumulate(rle_.begin(), rle_.end(), std::uint64_t{0});
  if (total != static_cast<std::uint64_t>(width_) * static_cast<std::uint64_t>(height_)) {
    throw Error(Errc::SumMismatch, "run lengths sum to " + std::to_string(total) + ", expected " +
                                       std::to_string(static_cast<std::uint64_t>(width_) * height_));
  }
}

MaskAnnotation MaskAnnotation::from_grid(DefectClass cls, const MaskGrid& grid) {
  return MaskAnnotation(cls, static_cast<int>(grid.cols()), static_cast<int>(grid.rows()), rle_encode(grid));
}

std::uint64_t MaskAnnotation::foreground_count() const noexcept {
  std::uint64_t count = 0;
  for (std::size_t i = 1; i < rle_.size(); i += 2) count += rle_[i];
  return count;
}

std::string_view to_string(AnnotationSource::Kind k) noexcept {
  switch (k) {
    case AnnotationSource::Kind::HumanLabeler: return "HumanLabeler";
    case AnnotationSource::Kind::Model: return "Model";
    case AnnotationSource::Kind::Consensus: return "Consensus";
  }
  return "Unknown";
}

std::string_view to_string(ReviewState s) noexcept {
  switch (s) {
    case ReviewState::Draft: return "Draft";
    case ReviewState::CrowdReviewed: return "CrowdReviewed";
    case ReviewState::ExpertApproved: return "ExpertApproved";
    case ReviewState::ReturnedForRelabel: return "ReturnedForRelabel";
  }
  return "Unknown";
}

ReviewState review_state_from_string(std::string_view s) {
  for (auto st : {ReviewState::Draft, ReviewState::CrowdReviewed, ReviewState::ExpertApproved,
                  ReviewState::ReturnedForRelabel}) {
    if (to_string(st) == s) return st;
  }
  throw Error(Errc::InvalidAnnotation, "unknown review state '" + std::string(s) + "'");
}

const MaskAnnotation* AnnotationSet::mask_for(DefectClass cls) const {
  for (const auto& m : masks) {
    if (m.defect_class() == cls) return &m;
  }
  return nullptr;
}

std::vector<Box> AnnotationSet::boxes_for(DefectClass cls) const {
  std::vector<Box> out;
  for (const auto& b : boxes) {
    if (b.cls == cls) out.push_back(b.box);
  }
  return out;
}

void AnnotationSet::validate(std::optional<std::pair<int, int>> frame) const {
  auto fail = [this](const std::string& what) {
    throw Error(Errc::InvalidAnnotation, "image '" + image_id + "': " + what);
  };
  if (image_id.empty()) fail("empty image_id");
  if (source.kind != AnnotationSource::Kind::Consensus && source.id.empty()) fail("source id required");

  std::set<DefectClass> seen;
  for (const auto& m : masks) {
    if (task_of(m.defect_class()) != TaskKind::Segmentation) fail("mask for a detection class");
    if (!seen.insert(m.defect_class()).second) fail("more than one mask for " + std::string(to_string(m.defect_class())));
    check_runs(m.rle());
    const std::uint64_t total = std::accumulate(m.rle().begin(), m.rle().end(), std::uint64_t{0});
    if (total != static_cast<std::uint64_t>(m.width()) * static_cast<std::uint64_t>(m.height())) {
      throw Error(Errc::SumMismatch, "image '" + image_id + "': run lengths do not cover the mask");
    }
    if (frame && (m.width() != frame->first || m.height() != frame->second)) fail("mask size differs from frame");
  }

  const bool from_model = source.kind == AnnotationSource::Kind::Model;
  for (const auto& b : boxes) {
    if (task_of(b.cls) != TaskKind::Detection) fail("box for a segmentation class");
    if (b.box.w < 1 || b.box.h < 1) fail("box with non-positive extent");
    if (b.box.x < 0 || b.box.y < 0) fail("box with negative origin");
    if (frame && (b.box.right() > frame->first || b.box.bottom() > frame->second)) fail("box outside frame");
    if (b.score.has_value() != from_model) fail("box score must be present iff the source is a model");
    if (b.score && !(*b.score >= 0.0 && *b.score <= 1.0)) fail("box score outside [0,1]");
  }

  if (elapsed_labeling_seconds) {
    if (source.kind != AnnotationSource::Kind::HumanLabeler) fail("elapsed_labeling_seconds on a non-human source");
    if (!(*elapsed_labeling_seconds >= 0.0)) fail("negative elapsed_labeling_seconds");
  }
}

MaskGrid mask_or_empty(const AnnotationSet& set, DefectClass cls, int width, int height) {
  if (const auto* m = set.mask_for(cls)) {
    if (m->width() != width || m->height() != height) {
      throw Error(Errc::DimensionMismatch, "mask for '" + set.image_id + "' is " + std::to_string(m->width()) + "x" +
                                               std::to_string(m->height()));
    }
    return m->to_grid();
  }
  return MaskGrid::Constant(height, width, false);
}

}  // namespace defectloop
