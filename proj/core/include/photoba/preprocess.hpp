#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "photoba/photocost.hpp"
#include "photoba/scene.hpp"
#include "photoba/types.hpp"

namespace pba {

/// Reconstruction point as ingested: world position, optional world normal
/// (zero = unknown, treated fronto-parallel), and the frames that observe it.
struct IngestPoint {
  std::uint64_t id = 0;
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  std::vector<int> track;
};

/// Per-view depth raster used by the visibility test. Same layout as
/// GrayImage but the samples are camera-frame depths, not intensities.
using DepthMap = GrayImage;

struct PreprocessOptions {
  double visibility_rel_depth = 0.01;  ///< relative depth agreement for visibility
  double min_sigma = 8.0;              ///< centered-norm floor for textured patches
  double target_spacing_px = 1.0;      ///< mean projected grid spacing to calibrate to
  int undistort_steps = 3;
};

/// 4x4 grid of world points on the landmark plane whose projections have a
/// calibrated mean adjacent spacing in the visible views.
struct WorldPatchGrid {
  Eigen::Matrix<double, 3, kPatchSize> points;
  double spacing = 0.0;
};

/// Frames in which a point is visible: projects in bounds with positive
/// depth that agrees with the frame's depth map to the relative threshold.
std::vector<int> visible_frames(const Vec3& X, const ProblemState& state,
                                const std::vector<DepthMap>& depth_maps, double rel_depth);

/// Solves (by bisection) for the world spacing making the mean projected
/// adjacent-sample distance over the given views equal `target_px`, and
/// returns the grid centered at X in the plane orthogonal to `normal`.
/// Fails when no view sees the grid at positive depth.
std::optional<WorldPatchGrid> world_patch_grid(const Vec3& X, const Vec3& normal,
                                               const std::vector<int>& views,
                                               const ProblemState& state, double target_px);

/// Robust mean of normalized patches: reweighted least squares with weights
/// rho'(|patch - mean|^2), started from the plain mean, run to a 1e-6 step
/// or 20 iterations.
Patch robust_patch_mean(const std::vector<Patch>& patches, const RobustKernel& kernel);

/// Samples view `frame` at the projections of the grid points and
/// normalizes. Returns nothing when a sample is behind the camera, out of
/// bounds, or the patch is flat.
std::optional<Patch> sampled_view_patch(const WorldPatchGrid& grid, int frame,
                                        const ProblemState& state,
                                        const std::vector<Pyramid>& pyramids);

/// Frame whose normalized patch is closest to the robust mean over the
/// candidate views; ties go to the lowest frame index. Returns -1 when no
/// candidate yields a usable patch.
int select_source_frame(const WorldPatchGrid& grid, const std::vector<int>& views,
                        const ProblemState& state, const std::vector<Pyramid>& pyramids,
                        const RobustKernel& kernel);

struct PreprocessReport {
  long input_points = 0;
  long too_few_visible = 0;  ///< fewer than two visible frames
  long no_source = 0;        ///< every candidate view textureless or unusable
  long textureless = 0;      ///< source patch centered norm below the floor
  long degenerate = 0;       ///< grid calibration or anchoring failed
  long surviving = 0;
};

struct PreprocessResult {
  std::vector<Landmark> landmarks;
  PreprocessReport report;
};

/// Full setup pass: visibility, patch-grid calibration, source-frame
/// selection, re-anchoring onto the chosen source pixel, plane construction
/// in the source frame, and textureless culling. `cameras_state` supplies
/// poses and intrinsics; its landmark list is ignored. Visibility comes from
/// the depth maps, or from `explicit_visibility` (per input point) when
/// given.
PreprocessResult preprocess_landmarks(const std::vector<IngestPoint>& points,
                                      const ProblemState& cameras_state,
                                      const std::vector<Pyramid>& pyramids,
                                      const std::vector<DepthMap>& depth_maps,
                                      const std::vector<std::vector<int>>* explicit_visibility,
                                      const PreprocessOptions& opt);

}  // namespace pba
