#pragma once

#include "defectloop/annotation.hpp"

#include "json.hpp"

namespace defectloop {

using Json = nlohmann::json;

void to_json(Json& j, const Box& b);
void to_json(Json& j, const MaskAnnotation& m);
void to_json(Json& j, const BoxAnnotation& b);
void to_json(Json& j, const AnnotationSource& s);
void to_json(Json& j, const AnnotationSet& set);

/// Strict parsers: unknown classes, wrong types and invariant violations
/// raise Error (InvalidAnnotation / SumMismatch), never nlohmann exceptions.
AnnotationSource annotation_source_from_json(const Json& j);
MaskAnnotation mask_annotation_from_json(const Json& j);
BoxAnnotation box_annotation_from_json(const Json& j);
AnnotationSet annotation_set_from_json(const Json& j);

void to_json(Json& j, const ImageRecord& r);
ImageRecord image_record_from_json(const Json& j);

}  // namespace defectloop
