#include "photoba/derivative_check.hpp"

#include <stdexcept>

#include "photoba/dual.hpp"

namespace pba {
namespace {

struct BlockContext {
  const ProblemState* state = nullptr;
  const Pyramid* target_pyr = nullptr;
  const Patch* source_values = nullptr;
  StageParams stage;
  CostMode mode = CostMode::kNcc;
  int source = -1;
  int target = -1;
  bool shared_camera = false;
  Vec2 anchor = Vec2::Zero();
  Vec3 plane = Vec3::Zero();
};

/// Residuals after applying a 27-lane delta the same way the solver would:
/// right-multiplicative rotation update, additive everything else. Throws if
/// the perturbed block becomes invalid (caller treats the block as uncheckable).
Eigen::VectorXd residuals_at(const BlockContext& ctx, const Eigen::VectorXd& delta) {
  const ProblemState& state = *ctx.state;
  Pose src_pose = state.poses[ctx.source];
  src_pose.R = src_pose.R * rotation_exp<double>(delta.segment<3>(0));
  src_pose.t += delta.segment<3>(3);
  Pose tgt_pose = state.poses[ctx.target];
  tgt_pose.R = tgt_pose.R * rotation_exp<double>(delta.segment<3>(6));
  tgt_pose.t += delta.segment<3>(9);

  Intrinsics src_cam = state.camera_for(ctx.source);
  src_cam.s += delta.segment<4>(12);
  src_cam.l += delta.segment<2>(16);
  Intrinsics tgt_cam = state.camera_for(ctx.target);
  if (ctx.shared_camera) {
    tgt_cam = src_cam;
  } else {
    tgt_cam.s += delta.segment<4>(18);
    tgt_cam.l += delta.segment<2>(22);
  }
  const Vec3 plane = ctx.plane + delta.segment<3>(24);

  const SeededPose<double> sp{src_pose.R, src_pose.t};
  const SeededPose<double> tp{tgt_pose.R, tgt_pose.t};
  const SeededCamera<double> sc = seed_camera<double>(src_cam, -1);
  const SeededCamera<double> tc = seed_camera<double>(tgt_cam, -1);
  const SourceRays<double> rays = compute_source_rays<double>(sc, ctx.anchor, ctx.stage);

  Patch residual;
  if (!evaluate_block<double>(sp, rays, tp, tc, plane, *ctx.source_values, *ctx.target_pyr,
                              ctx.stage, ctx.mode, &residual)) {
    throw std::runtime_error("block became invalid during finite differencing");
  }
  Eigen::VectorXd out(kPatchSize);
  for (int i = 0; i < kPatchSize; ++i) out[i] = residual[i];
  return out;
}

}  // namespace

std::optional<BlockDerivativeCheck> check_block_derivatives(
    const ProblemState& state, const std::vector<Pyramid>& pyramids, const StageCache& cache,
    int landmark, int target_index, double step) {
  const Landmark& lm = state.landmarks.at(landmark);
  if (!cache.source.at(landmark).valid) return std::nullopt;
  const int target = lm.targets.at(target_index);

  BlockContext ctx;
  ctx.state = &state;
  ctx.target_pyr = &pyramids.at(target);
  ctx.source_values = &cache.source[landmark].values;
  ctx.stage = cache.stage;
  ctx.mode = cache.mode;
  ctx.source = lm.source;
  ctx.target = target;
  ctx.shared_camera = state.camera_of_frame[lm.source] == state.camera_of_frame[target];
  ctx.anchor = lm.anchor;
  ctx.plane = lm.n;

  using D = Dual<kFullLanes>;
  const SeededPose<D> sp = seed_pose<D>(state.poses[lm.source], 0);
  const SeededPose<D> tp = seed_pose<D>(state.poses[target], 6);
  const SeededCamera<D> sc = seed_camera<D>(state.camera_for(lm.source), 12);
  const SeededCamera<D> tc = ctx.shared_camera
                                 ? sc
                                 : seed_camera<D>(state.camera_for(target), 18);
  const Vec3T<D> plane = seed_plane<D>(lm.n, 24);
  const SourceRays<D> rays = compute_source_rays<D>(sc, lm.anchor, cache.stage);

  PatchT<D> residual;
  if (!evaluate_block<D>(sp, rays, tp, tc, plane, cache.source[landmark].values,
                         pyramids[target], cache.stage, cache.mode, &residual)) {
    return std::nullopt;
  }
  Eigen::MatrixXd jacobian(kPatchSize, kFullLanes);
  for (int i = 0; i < kPatchSize; ++i) jacobian.row(i) = residual[i].partials().transpose();

  DerivativeCheckReport fd;
  try {
    fd = finite_difference_check([&](const Eigen::VectorXd& x) { return residuals_at(ctx, x); },
                                 jacobian, Eigen::VectorXd::Zero(kFullLanes), step);
  } catch (const std::runtime_error&) {
    return std::nullopt;
  }

  BlockDerivativeCheck out;
  out.max_rel_error = fd.max_rel_error;
  out.worst_lane = fd.worst_param;
  out.worst_output = fd.worst_output;
  out.compared = static_cast<long>(kPatchSize) * kFullLanes;
  out.one_sided = static_cast<long>(fd.one_sided_params.size());
  return out;
}

}  // namespace pba
