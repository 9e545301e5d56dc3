#pragma once

#include <cstdint>
#include <vector>

#include "photoba/camera.hpp"
#include "photoba/imaging.hpp"
#include "photoba/types.hpp"

namespace pba {

/// A surface element anchored to a pixel of one frame. The plane carrying it
/// lives in the anchor camera's frame as the set {p : n.p = 1}; together with
/// the anchor pixel's viewing ray this determines the landmark's position,
/// so the plane vector is the only structure parameter.
struct Landmark {
  int source = -1;            ///< index of the anchor frame
  Vec2 anchor = Vec2::Zero(); ///< anchor pixel, level-0 center convention
  Vec3 n = Vec3::Zero();      ///< plane in the anchor camera frame
  std::vector<int> targets;   ///< frames the landmark is scored against
  std::uint64_t id = 0;       ///< stable external identifier
};

/// All optimized parameters plus the frame-to-camera assignment. With shared
/// intrinsics `cameras` has a single entry and every frame maps to it.
struct ProblemState {
  std::vector<Pose> poses;
  std::vector<Intrinsics> cameras;
  std::vector<int> camera_of_frame;
  std::vector<Landmark> landmarks;

  const Intrinsics& camera_for(int frame) const { return cameras[camera_of_frame[frame]]; }
};

/// Landmark position in the anchor camera frame: the anchor ray scaled onto
/// the plane. Returns false when the ray is (numerically) parallel to the
/// plane or hits it behind the camera.
inline bool landmark_point_in_anchor_frame(const Intrinsics& cam, const Vec2& anchor, const Vec3& n,
                                           Vec3* out, int undistort_steps = 3) {
  const Vec3 ray = pixel_ray(cam, anchor, undistort_steps);
  const double denom = n.dot(ray);
  if (!(denom > 1e-12)) {
    return false;
  }
  *out = ray / denom;
  return true;
}

/// Landmark position in world coordinates.
inline bool landmark_world_point(const ProblemState& state, const Landmark& lm, Vec3* out,
                                 int undistort_steps = 3) {
  Vec3 p;
  if (!landmark_point_in_anchor_frame(state.camera_for(lm.source), lm.anchor, lm.n, &p,
                                      undistort_steps)) {
    return false;
  }
  const Pose& pose = state.poses[lm.source];
  *out = pose.R.transpose() * (p - pose.t);
  return true;
}

/// Plane vector for a landmark given a world-space point on the plane and a
/// world-space normal direction. The normal is flipped towards the camera so
/// that n.p = 1 has a positive-depth solution; a normal (numerically)
/// perpendicular to the point direction falls back to fronto-parallel.
inline Vec3 plane_from_point_normal(const Pose& anchor_pose, const Vec3& world_point,
                                    const Vec3& world_normal) {
  const Vec3 p = transform_point(anchor_pose, world_point);
  Vec3 m = anchor_pose.R * world_normal;
  double d = m.dot(p);
  if (d < 0.0) {
    m = -m;
    d = -d;
  }
  if (d < 1e-9 * m.norm() * p.norm() || !(d > 0.0)) {
    return Vec3(0.0, 0.0, 1.0 / p.z());
  }
  return m / d;
}

/// Applies a pose increment: rotation delta acts on the right of R, the
/// translation delta is additive. An exactly-zero increment leaves the pose
/// bitwise untouched.
inline void apply_pose_update(Pose* pose, const Vec6& delta) {
  if (delta.isZero(0.0)) {
    return;
  }
  pose->R = pose->R * rotation_exp<double>(delta.head<3>());
  pose->t += delta.tail<3>();
}

/// Applies an intrinsics increment [ds(4), dl(2)], additively. An
/// exactly-zero increment leaves the camera bitwise untouched.
inline void apply_intrinsics_update(Intrinsics* cam, const Vec6& delta) {
  if (delta.isZero(0.0)) {
    return;
  }
  cam->s += delta.head<4>();
  cam->l += delta.tail<2>();
}

}  // namespace pba
