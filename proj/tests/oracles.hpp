#pragma once

// Brute-force reference implementations used to cross-check the library.
// Written from the definitions, sharing no code with src/.

#include "defectloop/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace oracle {

using defectloop::Box;
using defectloop::MaskGrid;

inline double pixel_accuracy(const MaskGrid& p, const MaskGrid& g) {
  long agree = 0;
  for (long r = 0; r < p.rows(); ++r)
    for (long c = 0; c < p.cols(); ++c) agree += p(r, c) == g(r, c);
  return static_cast<double>(agree) / static_cast<double>(p.size());
}

inline std::optional<double> class_iou(const MaskGrid& p, const MaskGrid& g) {
  long inter = 0, uni = 0;
  for (long r = 0; r < p.rows(); ++r) {
    for (long c = 0; c < p.cols(); ++c) {
      inter += p(r, c) && g(r, c);
      uni += p(r, c) || g(r, c);
    }
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Counts unit cells covered by both boxes.
inline double box_iou(const Box& a, const Box& b) {
  const int x0 = std::min(a.x, b.x), y0 = std::min(a.y, b.y);
  const int x1 = std::max(a.x + a.w, b.x + b.w), y1 = std::max(a.y + a.h, b.y + b.h);
  long inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool in_a = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
      const bool in_b = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct Det {
  std::string image;
  Box box;
  double score;
};

struct Gt {
  std::string image;
  Box box;
};

// Full PR curve, then for each distinct recall level the best precision at
// any recall at or above it, summed over recall increments.
inline double average_precision(std::vector<Det> dets, const std::vector<Gt>& gts, double thr) {
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.image, a.box.x, a.box.y, a.box.w, a.box.h) < std::tie(b.image, b.box.x, b.box.y, b.box.w, b.box.h);
  });
  std::vector<bool> used(gts.size(), false);
  std::vector<std::pair<double, double>> pr;  // recall, precision
  int tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image != dets[i].image) continue;
      const double v = oracle::box_iou(dets[i].box, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= thr) {
      used[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
    pr.emplace_back(static_cast<double>(tp) / static_cast<double>(gts.size()),
                    static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double best_p = 0;
    for (std::size_t j = i; j < pr.size(); ++j) best_p = std::max(best_p, pr[j].second);
    ap += (pr[i].first - prev) * best_p;
    prev = pr[i].first;
  }
  return ap;
}

// Majority vote per pixel over explicit vote counts.
inline MaskGrid majority(const std::vector<MaskGrid>& masks) {
  MaskGrid out(masks.front().rows(), masks.front().cols());
  for (long r = 0; r < out.rows(); ++r) {
    for (long c = 0; c < out.cols(); ++c) {
      int yes = 0;
      for (const auto& m : masks) yes += m(r, c) ? 1 : 0;
      out(r, c) = 2 * yes > static_cast<int>(masks.size());
    }
  }
  return out;
}

inline double agreement(const std::vector<MaskGrid>& masks) {
  const double n = static_cast<double>(masks.size());
  double sum = 0;
  const long rows = masks.front().rows(), cols = masks.front().cols();
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      int yes = 0;
      for (const auto& m : masks) yes += m(r, c) ? 1 : 0;
      sum += std::max<double>(yes, n - yes) / n;
    }
  }
  return sum / static_cast<double>(rows * cols);
}

// Run-length encoding written as a direct scan.
inline std::vector<std::uint32_t> rle(const MaskGrid& m) {
  std::vector<std::uint32_t> runs{0};
  bool cur = false;
  for (long r = 0; r < m.rows(); ++r) {
    for (long c = 0; c < m.cols(); ++c) {
      if (m(r, c) != cur) {
        runs.push_back(0);
        cur = m(r, c);
      }
      ++runs.back();
    }
  }
  return runs;
}

inline bool point_in_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

inline double binary_entropy_bits(double p) {
  if (p <= 0 || p >= 1) return 0;
  return -(p * std::log2(p) + (1 - p) * std::log2(1 - p));
}

}  // namespace oracle
