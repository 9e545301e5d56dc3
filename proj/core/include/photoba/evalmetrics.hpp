#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "photoba/colmap_model.hpp"
#include "photoba/scene.hpp"
#include "photoba/synthetic.hpp"
#include "photoba/types.hpp"

namespace pba {

/// World similarity x -> scale * R * x + t.
struct SimilarityTransform {
  double scale = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (R * p) + t; }
};

/// Least-squares similarity mapping `from` onto `to` (Umeyama). Throws if
/// fewer than three correspondences are given.
SimilarityTransform align_points(const std::vector<Vec3>& from, const std::vector<Vec3>& to);

struct EvalReport {
  int matched_images = 0;
  double alignment_rms = 0.0;       ///< camera-center residual after alignment
  double rotation_error_deg = 0.0;  ///< mean geodesic error
  double translation_error = 0.0;   ///< mean center error / truth scene diameter
  double focal_error_pct = 0.0;     ///< mean relative focal error, percent
  int matched_landmarks = 0;
  double landmark_rmse = 0.0;       ///< world units, after alignment
};

/// Camera-side comparison of two reconstructions matched by image id, after
/// similarity alignment on camera centers. Fills everything except the
/// landmark fields. Also returns the alignment used.
EvalReport evaluate_model(const InitialReconstruction& estimate,
                          const InitialReconstruction& truth,
                          SimilarityTransform* alignment = nullptr);

/// One refined (or initial) landmark as serialized next to the model: enough
/// to rebuild its anchor ray in any camera geometry.
struct LandmarkRecord {
  std::uint64_t id = 0;
  int source_image_id = 0;
  Vec2 anchor = Vec2::Zero();
  Vec3 plane = Vec3::Zero();  ///< n in the source camera frame
  Vec3 world = Vec3::Zero();
  double mean_cost = 0.0;
  int num_targets = 0;
};

std::vector<LandmarkRecord> landmark_records_from_state(
    const ProblemState& state, const std::vector<int>& image_ids,
    const std::vector<double>& mean_costs);

void write_landmark_records(const std::string& path, const std::vector<LandmarkRecord>& records);
std::vector<LandmarkRecord> read_landmark_records(const std::string& path);

/// RMSE of aligned landmark positions against the true surface point of each
/// landmark's own anchor ray: the ray through the anchor pixel in the true
/// source camera, intersected with the true plane the landmark was sampled
/// from. Records whose ray misses their plane are skipped.
double truth_landmark_rmse(const std::vector<LandmarkRecord>& records,
                           const InitialReconstruction& truth, const SceneMeta& meta,
                           const SimilarityTransform& alignment, int* matched = nullptr);

}  // namespace pba
