#include "defectloop/consensus.hpp"

#include "defectloop/annotation_json.hpp"
#include "defectloop/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>
#include <tuple>

namespace defectloop {

std::string_view to_string(BatchStatus s) noexcept {
  switch (s) {
    case BatchStatus::Open: return "Open";
    case BatchStatus::AwaitingConsensus: return "AwaitingConsensus";
    case BatchStatus::AwaitingExpert: return "AwaitingExpert";
    case BatchStatus::Finalized: return "Finalized";
  }
  return "Unknown";
}

void LabelingBatch::advance(BatchStatus next) {
  const bool forward = static_cast<int>(next) == static_cast<int>(status) + 1;
  const bool relabel = status == BatchStatus::AwaitingExpert && next == BatchStatus::Open;
  if (!forward && !relabel) {
    throw Error(Errc::IllegalTransition, "batch " + batch_id + ": " + std::string(to_string(status)) + " -> " +
                                             std::string(to_string(next)));
  }
  status = next;
}

LabelingBatch create_batch(std::vector<ImageId>& pool, std::size_t size, std::string batch_id) {
  if (pool.empty()) throw Error(Errc::EmptyPool, "no images left to batch");
  if (size == 0) throw Error(Errc::InvalidArgument, "batch size must be positive");
  const std::size_t take = std::min(size, pool.size());
  LabelingBatch batch;
  batch.batch_id = std::move(batch_id);
  batch.image_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  return batch;
}

namespace {

void require_single_image(std::span<const AnnotationSet> sets) {
  if (sets.empty()) throw Error(Errc::InvalidArgument, "consensus needs at least one annotation set");
  for (const auto& s : sets) {
    if (s.image_id != sets.front().image_id) {
      throw Error(Errc::MixedImages, "'" + s.image_id + "' vs '" + sets.front().image_id + "'");
    }
  }
}

// Labelers in id order; stable for equal ids.
std::vector<std::size_t> labeler_order(std::span<const AnnotationSet> sets) {
  std::vector<std::size_t> order(sets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(sets[a].source.id, sets[a].source.kind) < std::tie(sets[b].source.id, sets[b].source.kind);
  });
  return order;
}

int lower_median(std::vector<int> values) {
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

}  // namespace

MaskConsensus merge_mask_consensus(std::span<const AnnotationSet> sets, DefectClass cls) {
  require_single_image(sets);
  if (task_of(cls) != TaskKind::Segmentation) throw Error(Errc::InvalidArgument, "not a segmentation class");

  const MaskAnnotation* shape = nullptr;
  for (const auto& s : sets) {
    if (const auto* m = s.mask_for(cls)) {
      if (shape && (m->width() != shape->width() || m->height() != shape->height())) {
        throw Error(Errc::DimensionMismatch, "labelers disagree on mask size for '" + s.image_id + "'");
      }
      shape = m;
    }
  }
  MaskConsensus out;
  if (!shape) return out;

  const int w = shape->width(), h = shape->height();
  Grid<int> votes = Grid<int>::Zero(h, w);
  for (const auto& s : sets) {
    if (const auto* m = s.mask_for(cls)) votes += m->to_grid().cast<int>();
  }
  const int n = static_cast<int>(sets.size());
  const MaskGrid merged = 2 * votes > n;  // strict majority
  const Grid<int> majority = votes.max(n - votes);
  out.agreement = majority.cast<double>().mean() / n;
  out.merged = MaskAnnotation::from_grid(cls, merged);
  return out;
}

BoxConsensus merge_box_consensus(std::span<const AnnotationSet> sets, DefectClass cls,
                                 const BoxConsensusConfig& config) {
  require_single_image(sets);
  if (task_of(cls) != TaskKind::Detection) throw Error(Errc::InvalidArgument, "not a detection class");
  if (!(config.iou_threshold > 0.0 && config.iou_threshold <= 1.0)) {
    throw Error(Errc::InvalidArgument, "iou_threshold must be in (0,1]");
  }
  if (!(config.quorum > 0.0 && config.quorum <= 1.0)) throw Error(Errc::InvalidArgument, "quorum must be in (0,1]");

  const auto order = labeler_order(sets);
  const std::size_t n = sets.size();
  std::vector<std::vector<Box>> boxes(n);
  std::vector<std::vector<bool>> used(n);
  for (std::size_t k = 0; k < n; ++k) {
    boxes[k] = sets[order[k]].boxes_for(cls);
    std::sort(boxes[k].begin(), boxes[k].end());
    used[k].assign(boxes[k].size(), false);
  }

  BoxConsensus out;
  double support_sum = 0.0;
  std::size_t clusters = 0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < boxes[k].size(); ++i) {
      if (used[k][i]) continue;
      used[k][i] = true;
      const Box seed = boxes[k][i];
      std::vector<Box> members{seed};
      for (std::size_t other = 0; other < n; ++other) {
        if (other == k) continue;
        double best_iou = -1.0;
        std::size_t best = boxes[other].size();
        for (std::size_t j = 0; j < boxes[other].size(); ++j) {
          if (used[other][j]) continue;
          const double iou = box_iou(seed, boxes[other][j]);
          if (iou >= config.iou_threshold && iou > best_iou) {
            best_iou = iou;
            best = j;
          }
        }
        if (best < boxes[other].size()) {
          used[other][best] = true;
          members.push_back(boxes[other][best]);
        }
      }
      const double support = static_cast<double>(members.size()) / static_cast<double>(n);
      support_sum += support;
      ++clusters;
      // Small epsilon so quorum * n computed in floating point does not
      // reject an exact hit.
      if (static_cast<double>(members.size()) + 1e-9 >= config.quorum * static_cast<double>(n)) {
        std::vector<int> xs, ys, ws, hs;
        for (const auto& b : members) {
          xs.push_back(b.x);
          ys.push_back(b.y);
          ws.push_back(b.w);
          hs.push_back(b.h);
        }
        out.merged.push_back(Box{lower_median(xs), lower_median(ys), lower_median(ws), lower_median(hs)});
        out.support.push_back(support);
      }
    }
  }
  // Keep support aligned with the sorted output.
  std::vector<std::size_t> idx(out.merged.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return out.merged[a] < out.merged[b]; });
  BoxConsensus sorted;
  for (auto i : idx) {
    sorted.merged.push_back(out.merged[i]);
    sorted.support.push_back(out.support[i]);
  }
  sorted.agreement = clusters ? support_sum / static_cast<double>(clusters) : 1.0;
  return sorted;
}

ConsensusResult merge_consensus(std::span<const AnnotationSet> sets, const BoxConsensusConfig& config) {
  require_single_image(sets);
  ConsensusResult result;
  result.image_id = sets.front().image_id;
  result.merged.image_id = result.image_id;
  result.merged.source = AnnotationSource::consensus();
  result.merged.review_state = ReviewState::Draft;
  for (const auto& s : sets) {
    result.contributing_labelers.insert(s.source.id.empty() ? std::string(to_string(s.source.kind)) : s.source.id);
  }
  for (auto cls : kSegmentationClasses) {
    auto mc = merge_mask_consensus(sets, cls);
    result.agreement[cls] = mc.agreement;
    if (mc.merged) result.merged.masks.push_back(std::move(*mc.merged));
  }
  for (auto cls : kDetectionClasses) {
    auto bc = merge_box_consensus(sets, cls, config);
    result.agreement[cls] = bc.agreement;
    for (const auto& b : bc.merged) result.merged.boxes.push_back(BoxAnnotation{cls, b, std::nullopt});
  }
  return result;
}

std::string_view to_string(ReviewDecision d) noexcept {
  switch (d) {
    case ReviewDecision::CrowdApprove: return "CrowdApprove";
    case ReviewDecision::ExpertApprove: return "ExpertApprove";
    case ReviewDecision::ReturnForRelabel: return "ReturnForRelabel";
  }
  return "Unknown";
}

AnnotationSet apply_review(const AnnotationSet& set, ReviewDecision decision) {
  std::optional<ReviewState> next;
  switch (set.review_state) {
    case ReviewState::Draft:
      if (decision == ReviewDecision::CrowdApprove) next = ReviewState::CrowdReviewed;
      break;
    case ReviewState::CrowdReviewed:
      if (decision == ReviewDecision::ExpertApprove) next = ReviewState::ExpertApproved;
      if (decision == ReviewDecision::ReturnForRelabel) next = ReviewState::ReturnedForRelabel;
      break;
    case ReviewState::ExpertApproved:
    case ReviewState::ReturnedForRelabel:
      break;
  }
  if (!next) {
    throw Error(Errc::IllegalTransition, "'" + set.image_id + "': " + std::string(to_string(set.review_state)) +
                                             " + " + std::string(to_string(decision)));
  }
  AnnotationSet out = set;
  out.review_state = *next;
  return out;
}

LabelingBatch attach_preannotations(LabelingBatch batch, const std::map<ImageId, AnnotationSet>& predictions) {
  for (const auto& [id, pred] : predictions) {
    if (std::find(batch.image_ids.begin(), batch.image_ids.end(), id) == batch.image_ids.end()) {
      spdlog::warn("pre-annotation for '{}' ignored: not in batch {}", id, batch.batch_id);
    }
  }
  for (const auto& id : batch.image_ids) {
    AnnotationSet draft;
    draft.image_id = id;
    draft.review_state = ReviewState::Draft;
    if (auto it = predictions.find(id); it != predictions.end()) {
      const auto& pred = it->second;
      if (pred.source.kind != AnnotationSource::Kind::Model) {
        throw Error(Errc::InvalidArgument, "pre-annotation for '" + id + "' is not model output");
      }
      draft.source = pred.source;
      draft.masks = pred.masks;
      draft.boxes = pred.boxes;
      draft.seeded_from = pred.source;
    } else {
      draft.source = AnnotationSource::consensus();
    }
    batch.drafts[id] = std::move(draft);
  }
  return batch;
}

CorrectionCost correction_cost(const AnnotationSet& pre, const AnnotationSet& final) {
  if (pre.image_id != final.image_id) {
    throw Error(Errc::MixedImages, "'" + pre.image_id + "' vs '" + final.image_id + "'");
  }
  CorrectionCost cost;
  cost.image_id = final.image_id;
  cost.seconds = final.elapsed_labeling_seconds;

  for (auto cls : kSegmentationClasses) {
    const auto* a = pre.mask_for(cls);
    const auto* b = final.mask_for(cls);
    if (!a && !b) continue;
    const auto* shape = a ? a : b;
    const MaskGrid ga = mask_or_empty(pre, cls, shape->width(), shape->height());
    const MaskGrid gb = mask_or_empty(final, cls, shape->width(), shape->height());
    cost.pixels_flipped += static_cast<std::uint64_t>((ga != gb).count());
  }

  for (auto cls : kDetectionClasses) {
    const auto before = pre.boxes_for(cls);
    const auto after = final.boxes_for(cls);
    struct Pair {
      double iou;
      std::size_t i, j;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < before.size(); ++i) {
      for (std::size_t j = 0; j < after.size(); ++j) {
        const double iou = box_iou(before[i], after[j]);
        if (iou >= 0.5) pairs.push_back({iou, i, j});
      }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
    std::vector<bool> used_before(before.size(), false), used_after(after.size(), false);
    std::uint32_t matched = 0;
    for (const auto& p : pairs) {
      if (used_before[p.i] || used_after[p.j]) continue;
      used_before[p.i] = used_after[p.j] = true;
      ++matched;
      if (before[p.i] != after[p.j]) ++cost.boxes_moved;
    }
    cost.boxes_removed += static_cast<std::uint32_t>(before.size()) - matched;
    cost.boxes_added += static_cast<std::uint32_t>(after.size()) - matched;
  }
  return cost;
}

nlohmann::json consensus_report_json(const std::string& batch_id, std::span<const ConsensusResult> results) {
  auto rows = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json agreement = nlohmann::json::object();
    for (const auto& [cls, v] : r.agreement) agreement[std::string(to_string(cls))] = v;
    rows.push_back({{"image_id", r.image_id},
                    {"agreement_by_class", agreement},
                    {"contributing_labelers", r.contributing_labelers}});
  }
  return {{"batch_id", batch_id}, {"results", rows}};
}

std::string relabel_queue_text(std::span<const ImageId> ids) {
  std::string out;
  for (const auto& id : ids) {
    out += id;
    out += '\n';
  }
  return out;
}

}  // namespace defectloop
