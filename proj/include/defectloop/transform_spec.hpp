#pragma once

// Augmentation transform descriptors. Kept separate from the transform
// implementations so dataset manifests can record lineage without pulling in
// the image-processing code.

#include "json.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace defectloop {

struct Rotate90 {
  int quarter_turns = 1;  // clockwise, 1..3
  bool operator==(const Rotate90&) const = default;
};
struct RotateSmall {
  double angle_degrees = 0.0;  // clockwise about the image centre
  bool operator==(const RotateSmall&) const = default;
};
struct Shear {
  double factor = 0.0;  // x' = x + factor * (y - cy)
  bool operator==(const Shear&) const = default;
};
struct FlipH {
  bool operator==(const FlipH&) const = default;
};
struct FlipV {
  bool operator==(const FlipV&) const = default;
};
struct Scale {
  double factor = 1.0;  // about the image centre, frame size unchanged
  bool operator==(const Scale&) const = default;
};
struct Translate {
  int dx = 0;
  int dy = 0;
  bool operator==(const Translate&) const = default;
};
struct GaussianNoise {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool operator==(const GaussianNoise&) const = default;
};
struct JpegCompress {
  int quality = 75;
  bool operator==(const JpegCompress&) const = default;
};
struct Blur {
  int radius = 1;  // box filter of side 2*radius+1
  bool operator==(const Blur&) const = default;
};
struct Sharpen {
  bool operator==(const Sharpen&) const = default;
};
struct Emboss {
  bool operator==(const Emboss&) const = default;
};

using TransformSpec = std::variant<Rotate90, RotateSmall, Shear, FlipH, FlipV, Scale, Translate, GaussianNoise,
                                   JpegCompress, Blur, Sharpen, Emboss>;

/// Applied left to right.
using TransformChain = std::vector<TransformSpec>;

/// Photometric kinds never touch label geometry.
bool is_photometric(const TransformSpec& spec);

/// Throws InvalidArgument when a parameter is outside its documented range.
void validate_transform(const TransformSpec& spec);

std::string describe(const TransformSpec& spec);

nlohmann::json transform_to_json(const TransformSpec& spec);
TransformSpec transform_from_json(const nlohmann::json& j);
nlohmann::json chain_to_json(const TransformChain& chain);
TransformChain chain_from_json(const nlohmann::json& j);

}  // namespace defectloop
