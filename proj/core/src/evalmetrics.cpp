#include "photoba/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <Eigen/Geometry>

#include "json.hpp"

#include "photoba/camera.hpp"

namespace pba {
namespace {

double bbox_diameter(const InitialReconstruction& model) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  auto absorb = [&](const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const Pose& pose : model.poses) absorb(camera_center(pose));
  for (const IngestPoint& pt : model.points) absorb(pt.position);
  const double d = (hi - lo).norm();
  return d > 0.0 ? d : 1.0;
}

double rotation_angle_deg(const Mat3& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

nlohmann::json vec_json(const Vec2& v) { return nlohmann::json::array({v.x(), v.y()}); }
nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec2 vec2_from(const nlohmann::json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); }
Vec3 vec3_from(const nlohmann::json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

}  // namespace

SimilarityTransform align_points(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  if (from.size() != to.size()) throw std::invalid_argument("correspondence count mismatch");
  if (from.size() < 3) throw std::runtime_error("need at least 3 correspondences to align");
  Eigen::Matrix3Xd src(3, from.size());
  Eigen::Matrix3Xd dst(3, to.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    src.col(i) = from[i];
    dst.col(i) = to[i];
  }
  const Eigen::Matrix4d transform = Eigen::umeyama(src, dst, true);
  SimilarityTransform out;
  const Mat3 scaled = transform.topLeftCorner<3, 3>();
  out.scale = std::cbrt(scaled.determinant());
  out.R = scaled / out.scale;
  out.t = transform.topRightCorner<3, 1>();
  return out;
}

EvalReport evaluate_model(const InitialReconstruction& estimate,
                          const InitialReconstruction& truth, SimilarityTransform* alignment) {
  std::map<int, int> truth_frame;
  for (std::size_t i = 0; i < truth.image_ids.size(); ++i) {
    truth_frame[truth.image_ids[i]] = static_cast<int>(i);
  }
  std::vector<int> est_index;
  std::vector<int> tru_index;
  std::vector<Vec3> est_centers;
  std::vector<Vec3> tru_centers;
  for (std::size_t i = 0; i < estimate.image_ids.size(); ++i) {
    auto it = truth_frame.find(estimate.image_ids[i]);
    if (it == truth_frame.end()) continue;
    est_index.push_back(static_cast<int>(i));
    tru_index.push_back(it->second);
    est_centers.push_back(camera_center(estimate.poses[i]));
    tru_centers.push_back(camera_center(truth.poses[it->second]));
  }
  const SimilarityTransform transform = align_points(est_centers, tru_centers);
  if (alignment != nullptr) *alignment = transform;

  EvalReport report;
  report.matched_images = static_cast<int>(est_index.size());
  const double diameter = bbox_diameter(truth);
  double center_sq = 0.0;
  for (std::size_t k = 0; k < est_index.size(); ++k) {
    const int ei = est_index[k];
    const int ti = tru_index[k];
    const Vec3 center_err = transform.apply(est_centers[k]) - tru_centers[k];
    center_sq += center_err.squaredNorm();
    report.translation_error += center_err.norm() / diameter;

    const Mat3 est_aligned = estimate.poses[ei].R * transform.R.transpose();
    report.rotation_error_deg += rotation_angle_deg(truth.poses[ti].R * est_aligned.transpose());

    const Intrinsics& est_cam = estimate.cameras[estimate.image_camera[ei]];
    const Intrinsics& tru_cam = truth.cameras[truth.image_camera[ti]];
    report.focal_error_pct += 50.0 * (std::abs(est_cam.s[0] - tru_cam.s[0]) / tru_cam.s[0] +
                                      std::abs(est_cam.s[1] - tru_cam.s[1]) / tru_cam.s[1]);
  }
  const double n = std::max<std::size_t>(1, est_index.size());
  report.alignment_rms = std::sqrt(center_sq / n);
  report.translation_error /= n;
  report.rotation_error_deg /= n;
  report.focal_error_pct /= n;
  return report;
}

std::vector<LandmarkRecord> landmark_records_from_state(
    const ProblemState& state, const std::vector<int>& image_ids,
    const std::vector<double>& mean_costs) {
  if (!mean_costs.empty() && mean_costs.size() != state.landmarks.size()) {
    throw std::invalid_argument("mean-cost list does not match the landmark list");
  }
  std::vector<LandmarkRecord> records;
  records.reserve(state.landmarks.size());
  for (std::size_t k = 0; k < state.landmarks.size(); ++k) {
    const Landmark& lm = state.landmarks[k];
    LandmarkRecord rec;
    rec.id = lm.id;
    rec.source_image_id = image_ids.at(lm.source);
    rec.anchor = lm.anchor;
    rec.plane = lm.n;
    Vec3 world = Vec3::Zero();
    landmark_world_point(state, lm, &world);
    rec.world = world;
    rec.mean_cost = mean_costs.empty() ? 0.0 : mean_costs[k];
    rec.num_targets = static_cast<int>(lm.targets.size());
    records.push_back(rec);
  }
  return records;
}

void write_landmark_records(const std::string& path, const std::vector<LandmarkRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const LandmarkRecord& rec : records) {
    arr.push_back({{"id", rec.id},
                   {"source_image_id", rec.source_image_id},
                   {"anchor", vec_json(rec.anchor)},
                   {"plane", vec_json(rec.plane)},
                   {"world", vec_json(rec.world)},
                   {"mean_cost", rec.mean_cost},
                   {"num_targets", rec.num_targets}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << nlohmann::json({{"landmarks", arr}}).dump(2) << "\n";
}

std::vector<LandmarkRecord> read_landmark_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const nlohmann::json doc = nlohmann::json::parse(in);
  std::vector<LandmarkRecord> records;
  for (const auto& j : doc.at("landmarks")) {
    LandmarkRecord rec;
    rec.id = j.at("id").get<std::uint64_t>();
    rec.source_image_id = j.at("source_image_id").get<int>();
    rec.anchor = vec2_from(j.at("anchor"));
    rec.plane = vec3_from(j.at("plane"));
    rec.world = vec3_from(j.at("world"));
    rec.mean_cost = j.value("mean_cost", 0.0);
    rec.num_targets = j.value("num_targets", 0);
    records.push_back(rec);
  }
  return records;
}

double truth_landmark_rmse(const std::vector<LandmarkRecord>& records,
                           const InitialReconstruction& truth, const SceneMeta& meta,
                           const SimilarityTransform& alignment, int* matched) {
  std::map<int, int> truth_frame;
  for (std::size_t i = 0; i < truth.image_ids.size(); ++i) {
    truth_frame[truth.image_ids[i]] = static_cast<int>(i);
  }
  std::map<std::uint64_t, int> plane_of;
  for (const auto& [id, plane] : meta.landmark_plane) plane_of[id] = plane;

  double sum_sq = 0.0;
  int count = 0;
  for (const LandmarkRecord& rec : records) {
    const auto frame_it = truth_frame.find(rec.source_image_id);
    const auto plane_it = plane_of.find(rec.id);
    if (frame_it == truth_frame.end() || plane_it == plane_of.end()) continue;
    const int frame = frame_it->second;
    const ScenePlane& plane = meta.planes.at(plane_it->second);
    const Pose& pose = truth.poses[frame];
    const Intrinsics& cam = truth.cameras[truth.image_camera[frame]];
    const Vec3 origin = camera_center(pose);
    const Vec3 dir = pose.R.transpose() * pixel_ray(cam, rec.anchor, 8);
    const double denom = dir.dot(plane.normal);
    if (std::abs(denom) < 1e-12) continue;
    const double depth = (plane.center - origin).dot(plane.normal) / denom;
    if (depth <= 0.0) continue;
    const Vec3 truth_point = origin + depth * dir;
    sum_sq += (alignment.apply(rec.world) - truth_point).squaredNorm();
    ++count;
  }
  if (matched != nullptr) *matched = count;
  return count > 0 ? std::sqrt(sum_sq / count) : 0.0;
}

}  // namespace pba
