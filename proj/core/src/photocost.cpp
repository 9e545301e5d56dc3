#include "photoba/photocost.hpp"

namespace pba {

StageCache build_stage_cache(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                             const StageParams& stage, CostMode mode) {
  StageCache cache;
  cache.stage = stage;
  cache.mode = mode;
  cache.source.resize(state.landmarks.size());
  for (size_t k = 0; k < state.landmarks.size(); ++k) {
    const Landmark& lm = state.landmarks[k];
    cache.source[k] = sample_source_patch(pyramids[lm.source], lm.anchor, stage, mode);
  }
  return cache;
}

double landmark_cost_with_plane(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                                const StageCache& cache, const RobustKernel& kernel, int landmark,
                                const Vec3& plane, int* valid_blocks) {
  const Landmark& lm = state.landmarks[landmark];
  if (valid_blocks != nullptr) {
    *valid_blocks = 0;
  }
  if (!cache.source[landmark].valid) {
    return 0.0;
  }
  const SeededPose<double> src_pose = seed_pose<double>(state.poses[lm.source], -1);
  const SeededCamera<double> src_cam = seed_camera<double>(state.camera_for(lm.source), -1);
  const SourceRays<double> rays = compute_source_rays<double>(src_cam, lm.anchor, cache.stage);
  double cost = 0.0;
  for (const int j : lm.targets) {
    const SeededPose<double> tgt_pose = seed_pose<double>(state.poses[j], -1);
    const SeededCamera<double> tgt_cam = seed_camera<double>(state.camera_for(j), -1);
    Patch residual;
    if (!evaluate_block<double>(src_pose, rays, tgt_pose, tgt_cam, plane,
                                cache.source[landmark].values, pyramids[j], cache.stage,
                                cache.mode, &residual)) {
      continue;
    }
    cost += kernel.rho(residual.squaredNorm());
    if (valid_blocks != nullptr) {
      ++(*valid_blocks);
    }
  }
  return cost;
}

double landmark_cost(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                     const StageCache& cache, const RobustKernel& kernel, int landmark,
                     int* valid_blocks) {
  return landmark_cost_with_plane(state, pyramids, cache, kernel, landmark,
                                  state.landmarks[landmark].n, valid_blocks);
}

std::vector<std::vector<char>> valid_block_mask(const ProblemState& state,
                                                const std::vector<Pyramid>& pyramids,
                                                const StageCache& cache) {
  std::vector<std::vector<char>> mask(state.landmarks.size());
  for (size_t k = 0; k < state.landmarks.size(); ++k) {
    const Landmark& lm = state.landmarks[k];
    mask[k].assign(lm.targets.size(), 0);
    if (!cache.source[k].valid) {
      continue;
    }
    const SeededPose<double> src_pose = seed_pose<double>(state.poses[lm.source], -1);
    const SeededCamera<double> src_cam = seed_camera<double>(state.camera_for(lm.source), -1);
    const SourceRays<double> rays = compute_source_rays<double>(src_cam, lm.anchor, cache.stage);
    for (size_t ji = 0; ji < lm.targets.size(); ++ji) {
      const int j = lm.targets[ji];
      const SeededPose<double> tgt_pose = seed_pose<double>(state.poses[j], -1);
      const SeededCamera<double> tgt_cam = seed_camera<double>(state.camera_for(j), -1);
      Patch residual;
      if (evaluate_block<double>(src_pose, rays, tgt_pose, tgt_cam, lm.n,
                                 cache.source[k].values, pyramids[j], cache.stage, cache.mode,
                                 &residual)) {
        mask[k][ji] = 1;
      }
    }
  }
  return mask;
}

double landmark_cost_on_mask(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                             const StageCache& cache, const RobustKernel& kernel, int landmark,
                             const Vec3& plane, const std::vector<char>& mask) {
  const Landmark& lm = state.landmarks[landmark];
  if (!cache.source[landmark].valid) {
    return 0.0;
  }
  const SeededPose<double> src_pose = seed_pose<double>(state.poses[lm.source], -1);
  const SeededCamera<double> src_cam = seed_camera<double>(state.camera_for(lm.source), -1);
  const SourceRays<double> rays = compute_source_rays<double>(src_cam, lm.anchor, cache.stage);
  double cost = 0.0;
  for (size_t ji = 0; ji < lm.targets.size(); ++ji) {
    if (!mask[ji]) {
      continue;
    }
    const int j = lm.targets[ji];
    const SeededPose<double> tgt_pose = seed_pose<double>(state.poses[j], -1);
    const SeededCamera<double> tgt_cam = seed_camera<double>(state.camera_for(j), -1);
    Patch residual;
    if (!evaluate_block<double>(src_pose, rays, tgt_pose, tgt_cam, plane,
                                cache.source[landmark].values, pyramids[j], cache.stage,
                                cache.mode, &residual)) {
      cost += kernel.escape_charge();
      continue;
    }
    cost += kernel.rho(residual.squaredNorm());
  }
  return cost;
}

double total_cost_on_mask(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                          const StageCache& cache, const RobustKernel& kernel,
                          const std::vector<std::vector<char>>& mask) {
  double cost = 0.0;
  for (size_t k = 0; k < state.landmarks.size(); ++k) {
    cost += landmark_cost_on_mask(state, pyramids, cache, kernel, static_cast<int>(k),
                                  state.landmarks[k].n, mask[k]);
  }
  for (const Intrinsics& cam : state.cameras) {
    cost += intrinsics_regularizer<double>(cam.s, cam.width, cam.height).squaredNorm();
  }
  return cost;
}

CostBreakdown total_cost(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                         const StageCache& cache, const RobustKernel& kernel) {
  CostBreakdown out;
  // Per-camera seeded bundles are cheap to rebuild here; the scalar path has
  // no derivative payload.
  std::vector<SeededCamera<double>> cams(state.cameras.size());
  for (size_t c = 0; c < state.cameras.size(); ++c) {
    cams[c] = seed_camera<double>(state.cameras[c], -1);
  }
  std::vector<SeededPose<double>> poses(state.poses.size());
  for (size_t f = 0; f < state.poses.size(); ++f) {
    poses[f] = seed_pose<double>(state.poses[f], -1);
  }
  for (size_t k = 0; k < state.landmarks.size(); ++k) {
    const Landmark& lm = state.landmarks[k];
    if (!cache.source[k].valid) {
      out.invalid_blocks += static_cast<long>(lm.targets.size());
      continue;
    }
    const SourceRays<double> rays =
        compute_source_rays<double>(cams[state.camera_of_frame[lm.source]], lm.anchor, cache.stage);
    const Vec3T<double> plane = lm.n;
    for (const int j : lm.targets) {
      Patch residual;
      if (!evaluate_block<double>(poses[lm.source], rays, poses[j],
                                  cams[state.camera_of_frame[j]], plane, cache.source[k].values,
                                  pyramids[j], cache.stage, cache.mode, &residual)) {
        ++out.invalid_blocks;
        continue;
      }
      out.photometric += kernel.rho(residual.squaredNorm());
      ++out.valid_blocks;
    }
  }
  for (const Intrinsics& cam : state.cameras) {
    out.regularizer +=
        intrinsics_regularizer<double>(cam.s, cam.width, cam.height).squaredNorm();
  }
  return out;
}

}  // namespace pba
