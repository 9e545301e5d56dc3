#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pba {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

template <class T>
using Vec2T = Eigen::Matrix<T, 2, 1>;
template <class T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <class T>
using Vec4T = Eigen::Matrix<T, 4, 1>;
template <class T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

// A landmark patch is a fixed 4x4 grid of source pixels.
inline constexpr int kPatchSide = 4;
inline constexpr int kPatchSize = kPatchSide * kPatchSide;

using Patch = Eigen::Matrix<double, kPatchSize, 1>;
using PatchCoords = Eigen::Matrix<double, 2, kPatchSize>;

template <class T>
using PatchT = Eigen::Matrix<T, kPatchSize, 1>;

/// Offset of grid sample k from the patch center, in units of the grid
/// spacing. Samples are ordered row-major: k = row * 4 + col.
inline Vec2 patch_offset(int k) {
  const int row = k / kPatchSide;
  const int col = k % kPatchSide;
  return {static_cast<double>(col) - 1.5, static_cast<double>(row) - 1.5};
}

}  // namespace pba
