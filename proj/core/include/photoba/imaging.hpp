#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "photoba/dual.hpp"
#include "photoba/types.hpp"

namespace pba {

/// Single-channel image with float intensities on the 8-bit scale [0, 255],
/// stored row-major. Pixel (x, y) refers to the sample at the center of that
/// pixel's footprint, i.e. integer coordinates address pixel centers.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h, 0.0f) {}

  float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
};

/// Image pyramid: level 0 is the input, each following level halves both
/// dimensions (rounding down) with a 2x2 box filter.
using Pyramid = std::vector<GrayImage>;

/// Smallest image dimension accepted for pyramid construction.
inline constexpr int kMinPyramidInputDim = 16;
/// Levels are added while both dimensions stay at or above this size.
inline constexpr int kMinPyramidLevelDim = 8;

Pyramid build_pyramid(const GrayImage& base);

/// Coordinate of a level-0 position expressed in a coarser level. One halving
/// maps x to (x - 0.5) / 2 because the coarse pixel centered at integer p
/// averages the two fine pixels centered at 2p and 2p + 1, whose midpoint is
/// 2p + 0.5. Composing gives the closed form below.
template <class T>
Vec2T<T> level_coords(const Vec2T<T>& level0, int level) {
  const double scale = 1.0 / static_cast<double>(int64_t{1} << level);
  return {(level0[0] + 0.5) * scale - 0.5, (level0[1] + 0.5) * scale - 0.5};
}

/// Inverse of `level_coords`: a position at `level` expressed at level 0.
inline Vec2 level0_coords(const Vec2& at_level, int level) {
  const double scale = static_cast<double>(int64_t{1} << level);
  return {(at_level[0] + 0.5) * scale - 0.5, (at_level[1] + 0.5) * scale - 0.5};
}

/// Bilinear interpolation at `p` (pixel-center coordinates). Returns false
/// when p falls outside the domain [0, w-1] x [0, h-1] spanned by the pixel
/// centers. Derivatives flow through the interpolation weights.
template <class T>
bool sample_bilinear(const GrayImage& img, const Vec2T<T>& p, T* out) {
  if (img.width < 2 || img.height < 2) {
    return false;
  }
  const double px = value_of(p[0]);
  const double py = value_of(p[1]);
  if (!(px >= 0.0 && px <= img.width - 1.0 && py >= 0.0 && py <= img.height - 1.0)) {
    return false;
  }
  const int ix = std::min(static_cast<int>(std::floor(px)), img.width - 2);
  const int iy = std::min(static_cast<int>(std::floor(py)), img.height - 2);
  const T fx = p[0] - static_cast<double>(ix);
  const T fy = p[1] - static_cast<double>(iy);
  const double v00 = img.at(ix, iy);
  const double v10 = img.at(ix + 1, iy);
  const double v01 = img.at(ix, iy + 1);
  const double v11 = img.at(ix + 1, iy + 1);
  const T top = v00 + fx * (v10 - v00);
  const T bot = v01 + fx * (v11 - v01);
  *out = top + fy * (bot - top);
  return true;
}

/// Pyramid level whose sampling density best matches a projected patch: the
/// mean distance between the 24 pairs of 4-adjacent samples (level-0 pixels)
/// is ~2^level at the appropriate level, so round log2 of it.
int select_target_level(const PatchCoords& level0, int max_level);

/// Converts 8-bit RGB triplets to the float gray scale used throughout.
GrayImage gray_from_rgb8(int width, int height, const std::vector<uint8_t>& rgb);

}  // namespace pba
