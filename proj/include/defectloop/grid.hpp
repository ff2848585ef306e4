#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <vector>

namespace defectloop {

/// Dense row-major 2D array; rows = image height, cols = image width.
template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MaskGrid = Grid<bool>;
using GridF = Grid<float>;

/// Planar image. One plane for gray, three for RGB; every plane has the same
/// shape.
template <typename Scalar>
struct Image {
  std::vector<Grid<Scalar>> planes;

  Image() = default;
  Image(int width, int height, int channels, Scalar fill = Scalar(0))
      : planes(static_cast<std::size_t>(channels), Grid<Scalar>::Constant(height, width, fill)) {}

  [[nodiscard]] int width() const { return planes.empty() ? 0 : static_cast<int>(planes.front().cols()); }
  [[nodiscard]] int height() const { return planes.empty() ? 0 : static_cast<int>(planes.front().rows()); }
  [[nodiscard]] int channels() const { return static_cast<int>(planes.size()); }
  [[nodiscard]] bool empty() const { return planes.empty() || planes.front().size() == 0; }

  Grid<Scalar>& operator[](int c) { return planes[static_cast<std::size_t>(c)]; }
  const Grid<Scalar>& operator[](int c) const { return planes[static_cast<std::size_t>(c)]; }

  bool operator==(const Image& other) const {
    if (planes.size() != other.planes.size()) return false;
    for (std::size_t c = 0; c < planes.size(); ++c) {
      if (planes[c].rows() != other.planes[c].rows() || planes[c].cols() != other.planes[c].cols()) return false;
      if (!(planes[c] == other.planes[c]).all()) return false;
    }
    return true;
  }
};

using Image8 = Image<std::uint8_t>;
using ImageF = Image<float>;

/// Mean over planes (Rec.601 weights for RGB).
template <typename Scalar>
GridF luminance(const Image<Scalar>& image) {
  if (image.channels() == 3) {
    return 0.299f * image[0].template cast<float>() + 0.587f * image[1].template cast<float>() +
           0.114f * image[2].template cast<float>();
  }
  GridF sum = GridF::Zero(image.height(), image.width());
  for (const auto& p : image.planes) sum += p.template cast<float>();
  return sum / static_cast<float>(std::max(1, image.channels()));
}

inline ImageF to_float(const Image8& image) {
  ImageF out;
  out.planes.reserve(image.planes.size());
  for (const auto& p : image.planes) out.planes.push_back(p.cast<float>() / 255.0f);
  return out;
}

inline Image8 to_u8(const ImageF& image) {
  Image8 out;
  out.planes.reserve(image.planes.size());
  for (const auto& p : image.planes) {
    out.planes.push_back((p.cwiseMax(0.0f).cwiseMin(1.0f) * 255.0f + 0.5f).floor().cast<std::uint8_t>());
  }
  return out;
}

}  // namespace defectloop
