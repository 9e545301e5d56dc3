#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "photoba/camera.hpp"
#include "photoba/dual.hpp"
#include "photoba/imaging.hpp"
#include "photoba/scene.hpp"
#include "photoba/types.hpp"

namespace pba {

/// Residual flavor: zero-mean-normalized patches (lighting invariant) or raw
/// intensity differences.
enum class CostMode { kNcc, kSsd };

/// Robust kernel applied to the squared norm of each 16-vector residual
/// block. Geman-McClure saturates at 1; Huber grows linearly past the
/// transition.
struct RobustKernel {
  enum class Type { kGemanMcClure, kHuber };
  Type type = Type::kGemanMcClure;
  double scale_sq = 0.25;

  static RobustKernel geman_mcclure(double tau) {
    return {Type::kGemanMcClure, tau * tau};
  }
  static RobustKernel huber(double delta) { return {Type::kHuber, delta * delta}; }

  double rho(double s) const {
    if (type == Type::kGemanMcClure) {
      return s / (s + scale_sq);
    }
    return s <= scale_sq ? s : 2.0 * std::sqrt(scale_sq * s) - scale_sq;
  }
  double drho(double s) const {
    if (type == Type::kGemanMcClure) {
      const double d = s + scale_sq;
      return scale_sq / (d * d);
    }
    return s <= scale_sq ? 1.0 : std::sqrt(scale_sq / s);
  }

  /// Charge for a block that a trial step pushes out of view. Without it
  /// the cost comparison would reward steps that simply remove residuals;
  /// for the saturating kernel this is the supremum of a block's cost, for
  /// Huber a value past any plausible in-view block.
  double escape_charge() const {
    if (type == Type::kGemanMcClure) {
      return 1.0;
    }
    return rho(25.0 * scale_sq * kPatchSize);
  }
};

/// Zero-mean, unit-norm patch normalization. Returns false for (near-)flat
/// patches whose centered norm vanishes.
template <class T>
bool ncc_normalize(const PatchT<T>& p, PatchT<T>* out) {
  using std::sqrt;
  T mu = p[0];
  for (int i = 1; i < kPatchSize; ++i) {
    mu += p[i];
  }
  mu /= static_cast<double>(kPatchSize);
  PatchT<T> centered;
  for (int i = 0; i < kPatchSize; ++i) {
    centered[i] = p[i] - mu;
  }
  const T nrm = sqrt(centered.squaredNorm());
  if (!(value_of(nrm) > 1e-12)) {
    return false;
  }
  for (int i = 0; i < kPatchSize; ++i) {
    (*out)[i] = centered[i] / nrm;
  }
  return true;
}

/// Resolution stage controls: the level the source patch is anchored at and
/// whether the target level follows the source or adapts to the projected
/// patch footprint.
struct StageParams {
  int source_level = 0;
  bool fixed_scale = false;
  int undistort_steps = 3;

  /// Patch sample spacing in level-0 pixels.
  double offset_scale() const { return static_cast<double>(1 << source_level); }
};

/// Assignment of parameter groups to derivative lanes for one block. A value
/// of -1 means the group is held constant. The target camera may share the
/// source camera's lanes when both frames use the same physical camera.
struct SeedLayout {
  int source_pose = -1;
  int target_pose = -1;
  int source_camera = -1;
  int target_camera = -1;
  int plane = -1;
};

/// Lane budget for differentiating a block with respect to every group at
/// once: two poses (6 each), two cameras (6 each), plane (3).
inline constexpr int kFullLanes = 27;
/// Lanes of the plane group alone, used by the point iterations.
inline constexpr int kPlaneLanes = 3;

inline SeedLayout joint_layout(bool shared_camera, bool freeze_poses, bool freeze_intrinsics,
                               bool freeze_structure) {
  SeedLayout layout;
  if (!freeze_poses) {
    layout.source_pose = 0;
    layout.target_pose = 6;
  }
  if (!freeze_intrinsics) {
    layout.source_camera = 12;
    layout.target_camera = shared_camera ? 12 : 18;
  }
  if (!freeze_structure) {
    layout.plane = 24;
  }
  return layout;
}

template <class T>
struct SeedTraits {
  static T make(double v, int /*lane*/) { return T(v); }
};
template <int N>
struct SeedTraits<Dual<N>> {
  static Dual<N> make(double v, int lane) {
    return lane >= 0 ? Dual<N>::seeded(v, lane) : Dual<N>(v);
  }
};

/// Pose with an increment seeded at `first_lane` (rotation lanes first, then
/// translation); pass -1 to treat the pose as constant.
template <class T>
struct SeededPose {
  Mat3T<T> R;
  Vec3T<T> t;
};

template <class T>
SeededPose<T> seed_pose(const Pose& pose, int first_lane) {
  Vec3T<T> dr;
  Vec3T<T> dt;
  for (int i = 0; i < 3; ++i) {
    dr[i] = SeedTraits<T>::make(0.0, first_lane >= 0 ? first_lane + i : -1);
    dt[i] = SeedTraits<T>::make(0.0, first_lane >= 0 ? first_lane + 3 + i : -1);
  }
  SeededPose<T> out;
  out.R = pose.R.template cast<T>() * rotation_exp<T>(dr);
  out.t = pose.t.template cast<T>() + dt;
  return out;
}

/// Intrinsics seeded at `first_lane` ([ds(4), dl(2)]), with the inverse
/// distortion series rebuilt so its coefficients carry the l-derivatives.
template <class T>
struct SeededCamera {
  Vec4T<T> s;
  Vec2T<T> l;
  InverseDistortion<T> inv;
};

template <class T>
SeededCamera<T> seed_camera(const Intrinsics& cam, int first_lane) {
  SeededCamera<T> out;
  for (int i = 0; i < 4; ++i) {
    out.s[i] = SeedTraits<T>::make(cam.s[i], first_lane >= 0 ? first_lane + i : -1);
  }
  for (int i = 0; i < 2; ++i) {
    out.l[i] = SeedTraits<T>::make(cam.l[i], first_lane >= 0 ? first_lane + 4 + i : -1);
  }
  out.inv = invert_distortion<T>(out.l);
  return out;
}

/// Plane vector seeded at `first_lane` (3 lanes), or constant for -1.
template <class T>
Vec3T<T> seed_plane(const Vec3& n, int first_lane) {
  Vec3T<T> out;
  for (int i = 0; i < 3; ++i) {
    out[i] = SeedTraits<T>::make(n[i], first_lane >= 0 ? first_lane + i : -1);
  }
  return out;
}

/// Source patch for one landmark at one stage: sampled around the anchor at
/// the stage's level and normalized once (it depends on no parameters).
struct SourcePatch {
  Patch values = Patch::Zero();
  bool valid = false;
};

inline SourcePatch sample_source_patch(const Pyramid& pyr, const Vec2& anchor,
                                       const StageParams& stage, CostMode mode) {
  SourcePatch out;
  if (stage.source_level >= static_cast<int>(pyr.size())) {
    return out;
  }
  Patch raw;
  for (int m = 0; m < kPatchSize; ++m) {
    const Vec2 p0 = anchor + stage.offset_scale() * patch_offset(m);
    const Vec2 pl = level_coords<double>(p0, stage.source_level);
    double v = 0.0;
    if (!sample_bilinear(pyr[stage.source_level], pl, &v)) {
      return out;
    }
    raw[m] = v;
  }
  if (mode == CostMode::kNcc) {
    if (!ncc_normalize<double>(raw, &out.values)) {
      return out;
    }
  } else {
    out.values = raw;
  }
  out.valid = true;
  return out;
}

/// Smallest admissible plane-ray dot product; below this the anchor ray is
/// treated as missing the plane.
inline constexpr double kMinPlaneDot = 1e-12;
/// Smallest admissible target-frame depth.
inline constexpr double kMinDepth = 1e-8;

/// Unit-depth viewing rays of the 16 patch samples in the source camera
/// frame. They depend only on the source intrinsics, so one computation per
/// landmark serves every target block.
template <class T>
using SourceRays = std::array<Vec3T<T>, kPatchSize>;

template <class T>
SourceRays<T> compute_source_rays(const SeededCamera<T>& cam, const Vec2& anchor,
                                  const StageParams& stage) {
  SourceRays<T> rays;
  for (int m = 0; m < kPatchSize; ++m) {
    const Vec2 p = anchor + stage.offset_scale() * patch_offset(m);
    Vec2T<T> pc;
    pc << T(p[0]), T(p[1]);
    const Vec2T<T> nc =
        normalized_from_pixel<T>(cam.s, cam.l, cam.inv, pc, stage.undistort_steps);
    rays[m] << nc[0], nc[1], T(1.0);
  }
  return rays;
}

/// Evaluates the 16 photometric residuals of one landmark/target block: the
/// source sample rays are cast onto the landmark plane, transported into the
/// target frame, projected, sampled from the target pyramid, normalized (in
/// NCC mode), and compared against the cached source patch. Returns false
/// when any sample is behind a camera or out of bounds, or when the target
/// patch has no texture to normalize.
template <class T>
bool evaluate_block(const SeededPose<T>& source_pose, const SourceRays<T>& rays,
                    const SeededPose<T>& target_pose, const SeededCamera<T>& target_cam,
                    const Vec3T<T>& plane, const Patch& source_values, const Pyramid& target_pyr,
                    const StageParams& stage, CostMode mode, PatchT<T>* residual,
                    int* target_level = nullptr) {
  std::array<Vec2T<T>, kPatchSize> pix0;
  PatchCoords pix0_values;
  const Mat3T<T> src_R_T = source_pose.R.transpose();
  for (int m = 0; m < kPatchSize; ++m) {
    const T denom = plane.dot(rays[m]);
    if (!(value_of(denom) > kMinPlaneDot)) {
      return false;
    }
    const Vec3T<T> in_source = rays[m] / denom;
    const Vec3T<T> world = src_R_T * (in_source - source_pose.t);
    const Vec3T<T> in_target = target_pose.R * world + target_pose.t;
    if (!(value_of(in_target[2]) > kMinDepth)) {
      return false;
    }
    const Vec2T<T> x = affine_map<T>(
        target_cam.s, distort<T>(target_cam.l, perspective_divide<T>(in_target)));
    pix0[m] = x;
    pix0_values.col(m) = Vec2(value_of(x[0]), value_of(x[1]));
  }

  const int max_level = static_cast<int>(target_pyr.size()) - 1;
  int level = 0;
  if (stage.fixed_scale) {
    if (stage.source_level > max_level) {
      return false;
    }
    level = stage.source_level;
  } else {
    level = select_target_level(pix0_values, max_level);
  }

  PatchT<T> sampled;
  for (int m = 0; m < kPatchSize; ++m) {
    const Vec2T<T> pl = level_coords<T>(pix0[m], level);
    T v;
    if (!sample_bilinear(target_pyr[level], pl, &v)) {
      return false;
    }
    sampled[m] = v;
  }

  if (mode == CostMode::kNcc) {
    PatchT<T> normalized;
    if (!ncc_normalize<T>(sampled, &normalized)) {
      return false;
    }
    for (int m = 0; m < kPatchSize; ++m) {
      (*residual)[m] = normalized[m] - source_values[m];
    }
  } else {
    for (int m = 0; m < kPatchSize; ++m) {
      (*residual)[m] = sampled[m] - source_values[m];
    }
  }
  if (target_level != nullptr) {
    *target_level = level;
  }
  return true;
}

/// Weight of the aspect-ratio / principal-point prior keeping the affine
/// part of each camera close to square pixels and a centered principal
/// point.
inline constexpr double kIntrinsicsRegWeight = 1e5;

template <class T>
Vec3T<T> intrinsics_regularizer(const Vec4T<T>& s, int width, int height) {
  const double extent = static_cast<double>(std::max(width, height));
  Vec3T<T> r;
  r[0] = kIntrinsicsRegWeight * ((s[0] - s[1]) / (s[0] + s[1]));
  r[1] = kIntrinsicsRegWeight * ((s[2] - 0.5 * width) / extent);
  r[2] = kIntrinsicsRegWeight * ((s[3] - 0.5 * height) / extent);
  return r;
}

/// Per-stage immutable evaluation context: stage controls plus the cached
/// source patches of every landmark.
struct StageCache {
  StageParams stage;
  CostMode mode = CostMode::kNcc;
  std::vector<SourcePatch> source;
};

StageCache build_stage_cache(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                             const StageParams& stage, CostMode mode);

struct CostBreakdown {
  double photometric = 0.0;
  double regularizer = 0.0;
  long valid_blocks = 0;
  long invalid_blocks = 0;
  double total() const { return photometric + regularizer; }
};

/// Robustified photometric cost plus the intrinsics prior over the whole
/// problem.
CostBreakdown total_cost(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                         const StageCache& cache, const RobustKernel& kernel);

/// Robust photometric cost of a single landmark (the quantity the point
/// iterations must decrease). Optionally reports the number of valid blocks.
double landmark_cost(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                     const StageCache& cache, const RobustKernel& kernel, int landmark,
                     int* valid_blocks = nullptr);

/// Same cost with the landmark's plane replaced by `plane`, used to score
/// trial steps of the point iterations without mutating the state.
double landmark_cost_with_plane(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                                const StageCache& cache, const RobustKernel& kernel, int landmark,
                                const Vec3& plane, int* valid_blocks = nullptr);

/// Per-block validity of every landmark at the current state: mask[k][i] is
/// nonzero when target i of landmark k produced residuals. This is the
/// active set a trial step is scored against.
std::vector<std::vector<char>> valid_block_mask(const ProblemState& state,
                                                const std::vector<Pyramid>& pyramids,
                                                const StageCache& cache);

/// Cost of one landmark over a fixed active set. Blocks outside the mask are
/// ignored; blocks inside the mask that fail to evaluate are charged the
/// kernel's escape charge, so a step cannot look better by shedding
/// residuals.
double landmark_cost_on_mask(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                             const StageCache& cache, const RobustKernel& kernel, int landmark,
                             const Vec3& plane, const std::vector<char>& mask);

/// Whole-problem cost over a fixed active set (photometric with escape
/// charges, plus the intrinsics prior). Comparing the current state and a
/// trial state through the same mask makes the comparison set identical on
/// both sides.
double total_cost_on_mask(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                          const StageCache& cache, const RobustKernel& kernel,
                          const std::vector<std::vector<char>>& mask);

}  // namespace pba
