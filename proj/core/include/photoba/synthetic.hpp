#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "photoba/colmap_model.hpp"
#include "photoba/imaging.hpp"
#include "photoba/preprocess.hpp"
#include "photoba/scene.hpp"

namespace pba {

/// Finite textured rectangle: center, orthonormal in-plane axes, outward
/// normal, and half extents (world units).
struct ScenePlane {
  Vec3 center = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  Vec3 normal = Vec3::UnitZ();
  double half_u = 1.0;
  double half_v = 1.0;
};

struct SyntheticSpec {
  int num_frames = 10;
  int width = 640;
  int height = 480;
  double focal = 525.0;
  Vec2 radial = Vec2(0.03, -0.005);
  int num_landmarks = 2000;
  double rotation_perturb_deg = 0.5;
  double translation_perturb_rel = 0.01;  ///< fraction of the scene diameter
  double focal_perturb_rel = 0.02;
  double depth_perturb_rel = 0.02;        ///< along the ray to the first camera
  bool relight = true;
  double gain_lo = 0.5;
  double gain_hi = 2.0;
  double bias_max = 25.0;
};

/// Ground truth plus its perturbed twin: the renderer and the refiner share
/// one camera-model code path, so the truth model reproduces the images
/// exactly (up to interpolation of the continuous texture).
struct SyntheticScene {
  InitialReconstruction truth;
  InitialReconstruction initial;
  std::vector<GrayImage> images;   ///< after per-view gain/bias
  std::vector<DepthMap> depths;    ///< rendered from the true geometry
  /// Per point: frames seeing the true position unoccluded. The initial model
  /// carries depth errors larger than the visibility gate by design, so
  /// refinement runs should use these lists instead of re-deriving them.
  std::vector<std::vector<int>> visibility;
  std::vector<ScenePlane> planes;
  std::vector<int> landmark_plane; ///< per point: index into `planes`
  std::vector<double> gains;
  std::vector<double> biases;
  double scene_diameter = 0.0;
  std::uint64_t seed = 0;
};

/// Deterministic in seed: every random draw comes from a counter-based hash,
/// so identical seeds give bit-identical scenes on any platform.
SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SyntheticSpec& spec);

/// Writes truth/ and initial/ model directories, images/*.pfm,
/// depths/*.bin, and scene_meta.json under `directory`.
void write_synthetic_scene(const std::string& directory, const SyntheticScene& scene);

/// Reads back the pieces written by `write_synthetic_scene` that the
/// evaluation needs: plane geometry, landmark-plane assignment, per-view
/// lighting, diameter.
struct SceneMeta {
  std::vector<ScenePlane> planes;
  std::vector<std::pair<std::uint64_t, int>> landmark_plane;
  std::vector<double> gains;
  std::vector<double> biases;
  double scene_diameter = 0.0;
  std::uint64_t seed = 0;
};
SceneMeta read_scene_meta(const std::string& path);

/// Multi-octave value noise on a plane's local coordinates, in [0, 255].
/// Exposed for tests that need the exact texture the renderer used.
double plane_texture(std::uint64_t seed, int plane, double u, double v);

}  // namespace pba
