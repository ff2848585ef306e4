#include "defectloop/annotation_json.hpp"

namespace defectloop {

namespace {

template <typename Fn>
auto guarded(const char* what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Json::exception& e) {
    throw Error(Errc::InvalidAnnotation, std::string(what) + ": " + e.what());
  }
}

AnnotationSource::Kind source_kind_from_string(const std::string& s) {
  for (auto k : {AnnotationSource::Kind::HumanLabeler, AnnotationSource::Kind::Model,
                 AnnotationSource::Kind::Consensus}) {
    if (to_string(k) == s) return k;
  }
  throw Error(Errc::InvalidAnnotation, "unknown source kind '" + s + "'");
}

}  // namespace

void to_json(Json& j, const Box& b) { j = Json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

void to_json(Json& j, const MaskAnnotation& m) {
  j = Json{{"class", to_string(m.defect_class())}, {"width", m.width()}, {"height", m.height()}, {"rle", m.rle()}};
}

void to_json(Json& j, const BoxAnnotation& b) {
  j = Json{{"class", to_string(b.cls)}, {"x", b.box.x}, {"y", b.box.y}, {"w", b.box.w}, {"h", b.box.h}};
  if (b.score) j["score"] = *b.score;
}

void to_json(Json& j, const AnnotationSource& s) {
  j = Json{{"kind", to_string(s.kind)}};
  if (!s.id.empty()) j["id"] = s.id;
}

void to_json(Json& j, const AnnotationSet& set) {
  j = Json{{"image_id", set.image_id},
           {"source", set.source},
           {"masks", set.masks},
           {"boxes", set.boxes},
           {"review_state", to_string(set.review_state)}};
  if (set.elapsed_labeling_seconds) j["elapsed_labeling_seconds"] = *set.elapsed_labeling_seconds;
  if (set.seeded_from) j["seeded_from"] = *set.seeded_from;
}

AnnotationSource annotation_source_from_json(const Json& j) {
  return guarded("source", [&] {
    AnnotationSource s;
    s.kind = source_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("id")) s.id = j.at("id").get<std::string>();
    return s;
  });
}

MaskAnnotation mask_annotation_from_json(const Json& j) {
  return guarded("mask", [&] {
    const auto& rle_json = j.at("rle");
    if (!rle_json.is_array()) throw Error(Errc::InvalidAnnotation, "rle must be an array");
    Rle rle;
    rle.reserve(rle_json.size());
    for (const auto& v : rle_json) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw Error(Errc::InvalidAnnotation, "rle entries must be non-negative integers");
      rle.push_back(v.get<std::uint32_t>());
    }
    return MaskAnnotation(defect_class_from_string(j.at("class").get<std::string>()), j.at("width").get<int>(),
                          j.at("height").get<int>(), std::move(rle));
  });
}

BoxAnnotation box_annotation_from_json(const Json& j) {
  return guarded("box", [&] {
    BoxAnnotation b;
    b.cls = defect_class_from_string(j.at("class").get<std::string>());
    b.box = Box{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
    if (j.contains("score") && !j.at("score").is_null()) b.score = j.at("score").get<double>();
    return b;
  });
}

AnnotationSet annotation_set_from_json(const Json& j) {
  return guarded("annotation", [&] {
    AnnotationSet set;
    set.image_id = j.at("image_id").get<std::string>();
    set.source = annotation_source_from_json(j.at("source"));
    for (const auto& m : j.value("masks", Json::array())) set.masks.push_back(mask_annotation_from_json(m));
    for (const auto& b : j.value("boxes", Json::array())) set.boxes.push_back(box_annotation_from_json(b));
    set.review_state = review_state_from_string(j.value("review_state", std::string("Draft")));
    if (j.contains("elapsed_labeling_seconds") && !j.at("elapsed_labeling_seconds").is_null()) {
      set.elapsed_labeling_seconds = j.at("elapsed_labeling_seconds").get<double>();
    }
    if (j.contains("seeded_from")) set.seeded_from = annotation_source_from_json(j.at("seeded_from"));
    set.validate();
    return set;
  });
}

void to_json(Json& j, const ImageRecord& r) {
  j = Json{{"image_id", r.image_id},   {"growth_run_id", r.growth_run_id}, {"captured_at", r.captured_at},
           {"width", r.width},         {"height", r.height},               {"storage_path", r.storage_path},
           {"status", to_string(r.status)}};
  if (r.reject_reason) j["reject_reason"] = to_string(*r.reject_reason);
}

ImageRecord image_record_from_json(const Json& j) {
  return guarded("image record", [&] {
    ImageRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.growth_run_id = j.at("growth_run_id").get<std::string>();
    r.captured_at = j.at("captured_at").get<std::int64_t>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    r.storage_path = j.at("storage_path").get<std::string>();
    const auto status = j.at("status").get<std::string>();
    if (status == "Raw") r.status = ImageStatus::Raw;
    else if (status == "Filtered") r.status = ImageStatus::Filtered;
    else if (status == "Preprocessed") r.status = ImageStatus::Preprocessed;
    else if (status == "Rejected") r.status = ImageStatus::Rejected;
    else throw Error(Errc::InvalidArgument, "unknown image status '" + status + "'");
    if (j.contains("reject_reason")) {
      r.reject_reason = j.at("reject_reason").get<std::string>() == "Blackout" ? RejectReason::Blackout
                                                                              : RejectReason::Noise;
    }
    r.validate();
    return r;
  });
}

}  // namespace defectloop
