#include "photoba/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pba {

namespace {

/// Orthonormal in-plane basis for a (non-zero) normal direction.
void plane_basis(const Vec3& normal, Vec3* u, Vec3* v) {
  const Vec3 n = normal.normalized();
  const Vec3 seed = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  *u = n.cross(seed).normalized();
  *v = n.cross(*u);
}

/// Mean projected adjacent-sample distance (over the 24 grid-neighbor
/// pairs), averaged over the views that see all 16 samples at positive
/// depth. Returns false when no view qualifies.
bool mean_projected_spacing(const Eigen::Matrix<double, 3, kPatchSize>& pts,
                            const std::vector<int>& views, const ProblemState& state,
                            double* spacing) {
  double view_sum = 0.0;
  int view_count = 0;
  for (const int j : views) {
    const Pose& pose = state.poses[j];
    const Intrinsics& cam = state.camera_for(j);
    PatchCoords proj;
    bool ok = true;
    for (int m = 0; m < kPatchSize && ok; ++m) {
      const Vec3 pc = transform_point(pose, pts.col(m));
      if (!(pc.z() > kMinDepth)) {
        ok = false;
        break;
      }
      proj.col(m) = affine_map<double>(cam.s, distort<double>(cam.l, perspective_divide<double>(pc)));
    }
    if (!ok) {
      continue;
    }
    double sum = 0.0;
    int count = 0;
    for (int row = 0; row < kPatchSide; ++row) {
      for (int col = 0; col + 1 < kPatchSide; ++col) {
        const int a = row * kPatchSide + col;
        sum += (proj.col(a + 1) - proj.col(a)).norm();
        ++count;
      }
    }
    for (int col = 0; col < kPatchSide; ++col) {
      for (int row = 0; row + 1 < kPatchSide; ++row) {
        const int a = row * kPatchSide + col;
        sum += (proj.col(a + kPatchSide) - proj.col(a)).norm();
        ++count;
      }
    }
    view_sum += sum / count;
    ++view_count;
  }
  if (view_count == 0) {
    return false;
  }
  *spacing = view_sum / view_count;
  return true;
}

Eigen::Matrix<double, 3, kPatchSize> grid_points(const Vec3& X, const Vec3& u, const Vec3& v,
                                                 double spacing) {
  Eigen::Matrix<double, 3, kPatchSize> pts;
  for (int m = 0; m < kPatchSize; ++m) {
    const Vec2 o = patch_offset(m);
    pts.col(m) = X + spacing * (o.x() * u + o.y() * v);
  }
  return pts;
}

}  // namespace

std::vector<int> visible_frames(const Vec3& X, const ProblemState& state,
                                const std::vector<DepthMap>& depth_maps, double rel_depth) {
  std::vector<int> out;
  for (size_t j = 0; j < state.poses.size(); ++j) {
    const Vec3 pc = transform_point(state.poses[j], X);
    if (!(pc.z() > kMinDepth)) {
      continue;
    }
    const Intrinsics& cam = state.camera_for(j);
    const Vec2 x =
        affine_map<double>(cam.s, distort<double>(cam.l, perspective_divide<double>(pc)));
    const DepthMap& dm = depth_maps[j];
    const int ix = static_cast<int>(std::lround(x.x()));
    const int iy = static_cast<int>(std::lround(x.y()));
    if (ix < 0 || iy < 0 || ix >= dm.width || iy >= dm.height) {
      continue;
    }
    const double d_map = dm.at(ix, iy);
    if (!(d_map > 0.0)) {
      continue;
    }
    if (std::abs(pc.z() - d_map) / pc.z() < rel_depth) {
      out.push_back(static_cast<int>(j));
    }
  }
  return out;
}

std::optional<WorldPatchGrid> world_patch_grid(const Vec3& X, const Vec3& normal,
                                               const std::vector<int>& views,
                                               const ProblemState& state, double target_px) {
  if (views.empty()) {
    return std::nullopt;
  }
  Vec3 u;
  Vec3 v;
  plane_basis(normal, &u, &v);

  const auto spacing_at = [&](double w, double* mean) {
    return mean_projected_spacing(grid_points(X, u, v, w), views, state, mean);
  };

  // Projected spacing is monotone in the world spacing near zero; bracket
  // the target and bisect to 1e-6 relative.
  double lo = 0.0;
  double hi = 1e-6;
  double mean = 0.0;
  for (int i = 0; i < 200; ++i) {
    if (!spacing_at(hi, &mean)) {
      return std::nullopt;
    }
    if (mean >= target_px) {
      break;
    }
    lo = hi;
    hi *= 2.0;
  }
  if (mean < target_px) {
    return std::nullopt;
  }
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (!spacing_at(mid, &mean)) {
      return std::nullopt;
    }
    (mean < target_px ? lo : hi) = mid;
    if ((hi - lo) <= 1e-6 * hi) {
      break;
    }
  }
  WorldPatchGrid grid;
  grid.spacing = 0.5 * (lo + hi);
  grid.points = grid_points(X, u, v, grid.spacing);
  return grid;
}

Patch robust_patch_mean(const std::vector<Patch>& patches, const RobustKernel& kernel) {
  if (patches.empty()) {
    throw std::invalid_argument("robust_patch_mean: no patches");
  }
  Patch mu = Patch::Zero();
  for (const Patch& p : patches) {
    mu += p;
  }
  mu /= static_cast<double>(patches.size());
  for (int it = 0; it < 20; ++it) {
    Patch next = Patch::Zero();
    double wsum = 0.0;
    for (const Patch& p : patches) {
      const double w = kernel.drho((p - mu).squaredNorm());
      next += w * p;
      wsum += w;
    }
    if (!(wsum > 0.0)) {
      break;
    }
    next /= wsum;
    const double step = (next - mu).norm();
    mu = next;
    if (step < 1e-6) {
      break;
    }
  }
  return mu;
}

std::optional<Patch> sampled_view_patch(const WorldPatchGrid& grid, int frame,
                                        const ProblemState& state,
                                        const std::vector<Pyramid>& pyramids) {
  const Pose& pose = state.poses[frame];
  const Intrinsics& cam = state.camera_for(frame);
  const GrayImage& img = pyramids[frame][0];
  Patch raw;
  for (int m = 0; m < kPatchSize; ++m) {
    const Vec3 pc = transform_point(pose, grid.points.col(m));
    if (!(pc.z() > kMinDepth)) {
      return std::nullopt;
    }
    const Vec2 x =
        affine_map<double>(cam.s, distort<double>(cam.l, perspective_divide<double>(pc)));
    double v = 0.0;
    if (!sample_bilinear(img, x, &v)) {
      return std::nullopt;
    }
    raw[m] = v;
  }
  Patch normalized;
  if (!ncc_normalize<double>(raw, &normalized)) {
    return std::nullopt;
  }
  return normalized;
}

int select_source_frame(const WorldPatchGrid& grid, const std::vector<int>& views,
                        const ProblemState& state, const std::vector<Pyramid>& pyramids,
                        const RobustKernel& kernel) {
  std::vector<int> usable;
  std::vector<Patch> patches;
  for (const int j : views) {
    const auto patch = sampled_view_patch(grid, j, state, pyramids);
    if (patch.has_value()) {
      usable.push_back(j);
      patches.push_back(*patch);
    }
  }
  if (usable.empty()) {
    return -1;
  }
  const Patch mu = robust_patch_mean(patches, kernel);
  int best = -1;
  double best_dist = 0.0;
  for (size_t i = 0; i < usable.size(); ++i) {
    const double dist = (patches[i] - mu).squaredNorm();
    if (best < 0 || dist < best_dist || (dist == best_dist && usable[i] < best)) {
      best = usable[i];
      best_dist = dist;
    }
  }
  return best;
}

PreprocessResult preprocess_landmarks(const std::vector<IngestPoint>& points,
                                      const ProblemState& cameras_state,
                                      const std::vector<Pyramid>& pyramids,
                                      const std::vector<DepthMap>& depth_maps,
                                      const std::vector<std::vector<int>>* explicit_visibility,
                                      const PreprocessOptions& opt) {
  if (depth_maps.empty() && explicit_visibility == nullptr) {
    throw std::invalid_argument(
        "preprocess: need either per-frame depth maps or explicit visibility lists");
  }
  const RobustKernel kernel = RobustKernel::geman_mcclure(0.5);
  PreprocessResult result;
  result.report.input_points = static_cast<long>(points.size());

  const StageParams level0_stage{/*source_level=*/0, /*fixed_scale=*/false,
                                 opt.undistort_steps};

  for (size_t i = 0; i < points.size(); ++i) {
    const IngestPoint& pt = points[i];
    std::vector<int> visible =
        explicit_visibility != nullptr
            ? (*explicit_visibility)[i]
            : visible_frames(pt.position, cameras_state, depth_maps, opt.visibility_rel_depth);
    std::sort(visible.begin(), visible.end());
    if (visible.size() < 2) {
      ++result.report.too_few_visible;
      continue;
    }

    Vec3 normal = pt.normal;
    if (normal.squaredNorm() < 1e-24) {
      // Unknown normal: face the first visible view.
      normal = cameras_state.poses[visible.front()].R.row(2).transpose();
    }
    const auto grid =
        world_patch_grid(pt.position, normal, visible, cameras_state, opt.target_spacing_px);
    if (!grid.has_value()) {
      ++result.report.degenerate;
      continue;
    }

    const int source = select_source_frame(*grid, visible, cameras_state, pyramids, kernel);
    if (source < 0) {
      ++result.report.no_source;
      continue;
    }

    // Anchor at the nearest pixel of the source projection; the plane keeps
    // its world placement, so the anchor ray meets it where it should.
    const Vec3 in_source = transform_point(cameras_state.poses[source], pt.position);
    if (!(in_source.z() > kMinDepth)) {
      ++result.report.degenerate;
      continue;
    }
    const Intrinsics& cam = cameras_state.camera_for(source);
    const Vec2 proj =
        affine_map<double>(cam.s, distort<double>(cam.l, perspective_divide<double>(in_source)));
    const Vec2 anchor(std::round(proj.x()), std::round(proj.y()));

    Landmark lm;
    lm.id = pt.id;
    lm.source = source;
    lm.anchor = anchor;
    lm.n = plane_from_point_normal(cameras_state.poses[source], pt.position, normal);
    lm.targets.reserve(visible.size() - 1);
    for (const int j : visible) {
      if (j != source) {
        lm.targets.push_back(j);
      }
    }
    if (lm.targets.size() < 2) {
      ++result.report.too_few_visible;
      continue;
    }

    const SourcePatch sp =
        sample_source_patch(pyramids[source], anchor, level0_stage, CostMode::kSsd);
    if (!sp.valid) {
      ++result.report.degenerate;
      continue;
    }
    const double mean = sp.values.mean();
    const double sigma = (sp.values.array() - mean).matrix().norm();
    if (sigma < opt.min_sigma) {
      ++result.report.textureless;
      continue;
    }

    result.landmarks.push_back(std::move(lm));
    ++result.report.surviving;
  }
  result.report.surviving = static_cast<long>(result.landmarks.size());
  return result;
}

}  // namespace pba
