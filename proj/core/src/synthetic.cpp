#include "photoba/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"

#include "photoba/camera.hpp"
#include "photoba/image_io.hpp"

namespace pba {
namespace {

namespace fs = std::filesystem;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based uniform in [0, 1): no generator state, so draws are
/// independent of evaluation order and identical across platforms.
double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL * (stream + 1));
  h = mix64(h + 0x9e3779b97f4a7c15ULL * (counter + 1));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double hash_range(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                  double lo, double hi) {
  return lo + (hi - lo) * hash_uniform(seed, stream, counter);
}

Vec3 hash_unit_vector(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  const double z = hash_range(seed, stream, 2 * counter, -1.0, 1.0);
  const double phi = hash_range(seed, stream, 2 * counter + 1, 0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return Vec3(r * std::cos(phi), r * std::sin(phi), z);
}

// Random-draw streams; lattice noise hashes its own coordinates separately.
enum Stream : std::uint64_t {
  kStreamLandmark = 1,
  kStreamGain = 2,
  kStreamBias = 3,
  kStreamRotation = 4,
  kStreamTranslation = 5,
  kStreamFocal = 6,
  kStreamDepth = 7,
};

double lattice_value(std::uint64_t seed, int plane, int octave, std::int64_t ix,
                     std::int64_t iy) {
  std::uint64_t h = mix64(seed ^ 0x5851f42d4c957f2dULL);
  h = mix64(h + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(plane + 1));
  h = mix64(h + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(octave + 1));
  h = mix64(h + static_cast<std::uint64_t>(ix) * 0xc2b2ae3d27d4eb4fULL);
  h = mix64(h + static_cast<std::uint64_t>(iy) * 0x165667b19e3779f9ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth01(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, int plane, int octave, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const double tx = smooth01(x - fx);
  const double ty = smooth01(y - fy);
  const double v00 = lattice_value(seed, plane, octave, ix, iy);
  const double v10 = lattice_value(seed, plane, octave, ix + 1, iy);
  const double v01 = lattice_value(seed, plane, octave, ix, iy + 1);
  const double v11 = lattice_value(seed, plane, octave, ix + 1, iy + 1);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

// Wavelengths in world units. The coarsest octave keeps the photometric
// basin wide enough to pull back pose errors of a few dozen pixels; the
// finest (~8 px at the working depth) gives patches their contrast.
// Mid wavelengths (30-70 px at the working depth) get most of the energy:
// they set the width of the photometric attraction basin, while the finest
// octave supplies patch-scale contrast.
constexpr double kWavelengths[] = {1.28, 0.32, 0.22, 0.16, 0.08};
constexpr double kAmplitudes[] = {0.35, 0.45, 0.45, 0.40, 0.095};
constexpr int kOctaves = 5;
constexpr double kContrast = 310.0;

Pose look_at(const Vec3& position, const Vec3& target) {
  const Vec3 z = (target - position).normalized();
  const Vec3 x = Vec3::UnitY().cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 rot;
  rot.row(0) = x.transpose();
  rot.row(1) = y.transpose();
  rot.row(2) = z.transpose();
  return Pose{rot, -(rot * position)};
}

ScenePlane make_plane(const Vec3& center, const Vec3& normal, double half_u, double half_v) {
  ScenePlane p;
  p.center = center;
  p.normal = normal.normalized();
  p.u = p.normal.cross(Vec3::UnitY()).normalized();
  p.v = p.normal.cross(p.u);
  p.half_u = half_u;
  p.half_v = half_v;
  return p;
}

std::vector<ScenePlane> desk_planes() {
  std::vector<ScenePlane> planes;
  planes.push_back(make_plane(Vec3(0.0, -0.05, 3.1), Vec3(0.10, -0.08, -1.0), 2.30, 1.75));
  planes.push_back(make_plane(Vec3(-1.35, 0.0, 2.35), Vec3(0.75, -0.05, -0.66), 0.95, 1.45));
  planes.push_back(make_plane(Vec3(0.45, 0.85, 2.30), Vec3(0.10, -0.90, -0.44), 1.50, 0.95));
  return planes;
}

struct PlaneHit {
  int plane = -1;
  double depth = 0.0;  ///< camera-frame z (ray parameter for a z=1 direction)
  double u = 0.0;
  double v = 0.0;
};

PlaneHit intersect_planes(const std::vector<ScenePlane>& planes, const Vec3& origin,
                          const Vec3& dir) {
  PlaneHit best;
  for (int p = 0; p < static_cast<int>(planes.size()); ++p) {
    const ScenePlane& pl = planes[p];
    const double denom = dir.dot(pl.normal);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (pl.center - origin).dot(pl.normal) / denom;
    if (t <= 1e-6) continue;
    if (best.plane >= 0 && t >= best.depth) continue;
    const Vec3 point = origin + t * dir;
    const Vec3 rel = point - pl.center;
    const double u = rel.dot(pl.u);
    const double v = rel.dot(pl.v);
    if (std::abs(u) > pl.half_u || std::abs(v) > pl.half_v) continue;
    best = PlaneHit{p, t, u, v};
  }
  return best;
}

double scene_diameter_of(const std::vector<ScenePlane>& planes,
                         const std::vector<Pose>& poses) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  auto absorb = [&](const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const ScenePlane& pl : planes) {
    for (int su = -1; su <= 1; su += 2) {
      for (int sv = -1; sv <= 1; sv += 2) {
        absorb(pl.center + su * pl.half_u * pl.u + sv * pl.half_v * pl.v);
      }
    }
  }
  for (const Pose& pose : poses) absorb(camera_center(pose));
  return (hi - lo).norm();
}

// True when every sample of the patch grid, and every pixel its bilinear
// interpolation touches, shows this landmark's own plane in this frame. Depth
// agreement alone is not enough: where two planes meet, the occluder's depth
// nearly matches the occluded surface, so the rays of the touched pixels are
// re-cast against the scene and must hit the same plane.
bool frame_sees_grid(const WorldPatchGrid& grid, const std::vector<ScenePlane>& planes,
                     int plane, const ProblemState& state, int width, int height, int frame) {
  const Pose& pose = state.poses[frame];
  const Intrinsics& cam = state.camera_for(frame);
  const Mat3 rot_wc = pose.R.transpose();
  const Vec3 origin = camera_center(pose);
  for (int m = 0; m < grid.points.cols(); ++m) {
    const Vec3 local = transform_point(pose, grid.points.col(m));
    if (local.z() <= 0.0) return false;
    const Vec2 px = project_point(pose, cam, grid.points.col(m));
    const int x0 = static_cast<int>(std::floor(px.x()));
    const int y0 = static_cast<int>(std::floor(px.y()));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= width || y0 + 1 >= height) return false;
    for (int dy = 0; dy <= 1; ++dy) {
      for (int dx = 0; dx <= 1; ++dx) {
        const Vec3 dir = rot_wc * pixel_ray(cam, Vec2(x0 + dx, y0 + dy), 8);
        const PlaneHit hit = intersect_planes(planes, origin, dir);
        if (hit.plane != plane) return false;
        if (std::abs(local.z() - hit.depth) > 0.01 * local.z()) return false;
      }
    }
  }
  return true;
}

nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::string frame_name(int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%03d.%s", index, ext);
  return buf;
}

}  // namespace

double plane_texture(std::uint64_t seed, int plane, double u, double v) {
  double n = 0.0;
  for (int o = 0; o < kOctaves; ++o) {
    n += kAmplitudes[o] *
         (value_noise(seed, plane, o, u / kWavelengths[o], v / kWavelengths[o]) - 0.5);
  }
  // Smooth range compression instead of a hard clamp: a clamp kink would make
  // the image non-differentiable exactly where bright or dark pools peak,
  // which resampling then turns into view-dependent artifacts.
  return 128.0 + 127.0 * std::tanh(kContrast * n / 127.0);
}

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SyntheticSpec& spec) {
  if (spec.num_frames < 2) throw std::invalid_argument("need at least two frames");
  if (spec.num_landmarks < 1) throw std::invalid_argument("need at least one landmark");

  SyntheticScene scene;
  scene.seed = seed;
  scene.planes = desk_planes();

  // One camera shared by every frame; square focal, principal point exactly
  // at the intrinsics prior's neutral position so the prior vanishes at truth.
  Intrinsics cam;
  cam.s = Vec4(spec.focal, spec.focal, 0.5 * spec.width, 0.5 * spec.height);
  cam.l = spec.radial;
  cam.width = spec.width;
  cam.height = spec.height;

  // Arc with deliberate height and radius stagger: the camera centers must
  // span all three dimensions or similarity alignment on them is ill-posed.
  const Vec3 pivot(0.0, 0.0, 2.6);
  std::vector<Pose> poses;
  for (int i = 0; i < spec.num_frames; ++i) {
    const double theta = ((spec.num_frames > 1 ? i / double(spec.num_frames - 1) : 0.5) - 0.5) *
                         (24.0 * M_PI / 180.0);
    const double height = 0.28 * std::sin(2.3 * i + 0.7);
    const double orbit = 2.6 + 0.25 * std::sin(1.3 * i + 2.0);
    const Vec3 position = pivot + Vec3(-orbit * std::sin(theta), height, -orbit * std::cos(theta));
    const Vec3 target = pivot + Vec3(0.04 * std::sin(1.7 * i), 0.03 * std::cos(2.1 * i), 0.0);
    poses.push_back(look_at(position, target));
  }
  scene.scene_diameter = scene_diameter_of(scene.planes, poses);

  // Render images and depth maps from the true geometry with the same
  // camera model the refiner uses (high-accuracy undistortion).
  scene.gains.resize(spec.num_frames, 1.0);
  scene.biases.resize(spec.num_frames, 0.0);
  if (spec.relight) {
    for (int i = 0; i < spec.num_frames; ++i) {
      scene.gains[i] = hash_range(seed, kStreamGain, i, spec.gain_lo, spec.gain_hi);
      scene.biases[i] = hash_range(seed, kStreamBias, i, -spec.bias_max, spec.bias_max);
    }
  }
  for (int i = 0; i < spec.num_frames; ++i) {
    GrayImage img;
    img.width = spec.width;
    img.height = spec.height;
    img.data.resize(static_cast<std::size_t>(spec.width) * spec.height);
    DepthMap depth = img;
    const Mat3 rot_wc = poses[i].R.transpose();
    const Vec3 origin = camera_center(poses[i]);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const Vec3 dir_cam = pixel_ray(cam, Vec2(x, y), 8);
        const Vec3 dir = rot_wc * dir_cam;
        const PlaneHit hit = intersect_planes(scene.planes, origin, dir);
        double value;
        if (hit.plane >= 0) {
          value = plane_texture(seed, hit.plane, hit.u, hit.v);
        } else {
          value = 35.0 + 10.0 * x / (spec.width - 1) + 5.0 * y / (spec.height - 1);
        }
        img.data[static_cast<std::size_t>(y) * spec.width + x] =
            static_cast<float>(scene.gains[i] * value + scene.biases[i]);
        depth.data[static_cast<std::size_t>(y) * spec.width + x] =
            static_cast<float>(hit.plane >= 0 ? hit.depth : 0.0);
      }
    }
    scene.images.push_back(std::move(img));
    scene.depths.push_back(std::move(depth));
  }

  scene.truth.cameras = {cam};
  scene.truth.camera_ids = {1};
  scene.truth.poses = poses;
  for (int i = 0; i < spec.num_frames; ++i) {
    scene.truth.image_ids.push_back(i + 1);
    scene.truth.image_camera.push_back(0);
    scene.truth.image_names.push_back(frame_name(i, "pfm"));
  }

  // Landmarks sampled on the planes, area-weighted, margined away from the
  // borders so their patch grids stay on-plane. Candidates occluded or out of
  // frame in all but one view are rejected and redrawn — as in a real
  // reconstruction, every point has multi-view support — and the surviving
  // visibility (against the true depth maps) ships with the scene.
  std::vector<double> area_cum;
  double area_total = 0.0;
  for (const ScenePlane& pl : scene.planes) {
    area_total += 4.0 * pl.half_u * pl.half_v;
    area_cum.push_back(area_total);
  }
  const double margin = 0.88;
  const ProblemState truth_state = scene.truth.camera_state();
  std::vector<IngestPoint> points;
  std::uint64_t attempt = 0;
  const std::uint64_t max_attempts = 60ULL * static_cast<std::uint64_t>(spec.num_landmarks);
  while (static_cast<int>(points.size()) < spec.num_landmarks) {
    if (attempt >= max_attempts) {
      throw std::runtime_error("scene layout leaves too few multi-view landmark sites");
    }
    const double pick = hash_uniform(seed, kStreamLandmark, 3 * attempt) * area_total;
    int p = 0;
    while (p + 1 < static_cast<int>(area_cum.size()) && pick >= area_cum[p]) ++p;
    const ScenePlane& pl = scene.planes[p];
    const double u =
        hash_range(seed, kStreamLandmark, 3 * attempt + 1, -1.0, 1.0) * margin * pl.half_u;
    const double v =
        hash_range(seed, kStreamLandmark, 3 * attempt + 2, -1.0, 1.0) * margin * pl.half_v;
    ++attempt;
    const Vec3 position = pl.center + u * pl.u + v * pl.v;
    // A frame supports the candidate only if the whole 4x4 patch grid around
    // it is unoccluded there, including every bilinear interpolation corner,
    // so no shipped observation straddles an occlusion or silhouette edge.
    std::vector<int> views = visible_frames(position, truth_state, scene.depths, 0.01);
    if (views.size() < 2) continue;
    // Grid spacing of 2 level-0 pixels (mean across views): generously covers
    // the 1px-spaced patch footprint of whichever frame becomes the source,
    // including the frames that see the site least zoomed.
    const auto grid = world_patch_grid(position, pl.normal, views, truth_state, 2.0);
    if (!grid) continue;
    std::vector<int> supported;
    for (int frame : views) {
      if (frame_sees_grid(*grid, scene.planes, p, truth_state, spec.width, spec.height, frame)) {
        supported.push_back(frame);
      }
    }
    views = std::move(supported);
    if (views.size() < 2) continue;
    IngestPoint pt;
    pt.id = static_cast<std::uint64_t>(points.size() + 1);
    pt.position = position;
    pt.normal = pl.normal;
    pt.track = views;
    points.push_back(pt);
    scene.visibility.push_back(std::move(views));
    scene.landmark_plane.push_back(p);
  }
  scene.truth.points = points;

  // Perturbed twin: fixed-magnitude, random-direction errors so every run
  // starts a known distance from the optimum.
  scene.initial = scene.truth;
  const double angle = spec.rotation_perturb_deg * M_PI / 180.0;
  const double shift = spec.translation_perturb_rel * scene.scene_diameter;
  for (int i = 0; i < spec.num_frames; ++i) {
    Pose& pose = scene.initial.poses[i];
    pose.R = pose.R * rotation_exp<double>(angle * hash_unit_vector(seed, kStreamRotation, i));
    pose.t += shift * hash_unit_vector(seed, kStreamTranslation, i);
  }
  for (std::size_t c = 0; c < scene.initial.cameras.size(); ++c) {
    const double sign = hash_uniform(seed, kStreamFocal, c) < 0.5 ? -1.0 : 1.0;
    const double scale = 1.0 + sign * spec.focal_perturb_rel;
    scene.initial.cameras[c].s[0] *= scale;
    scene.initial.cameras[c].s[1] *= scale;
  }
  // Depth error is applied along the ray to the first frame that sees each
  // point, scaling that view's depth by a fixed fraction of random sign.
  for (int k = 0; k < spec.num_landmarks; ++k) {
    const double sign = hash_uniform(seed, kStreamDepth, k) < 0.5 ? -1.0 : 1.0;
    const double scale = 1.0 + sign * spec.depth_perturb_rel;
    IngestPoint& pt = scene.initial.points[k];
    const Vec3 anchor_center = camera_center(scene.truth.poses[pt.track.front()]);
    pt.position = anchor_center + scale * (pt.position - anchor_center);
  }
  return scene;
}

void write_synthetic_scene(const std::string& directory, const SyntheticScene& scene) {
  fs::create_directories(fs::path(directory) / "images");
  fs::create_directories(fs::path(directory) / "depths");
  write_colmap_model((fs::path(directory) / "truth").string(), scene.truth);
  write_colmap_model((fs::path(directory) / "initial").string(), scene.initial);
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    write_pfm((fs::path(directory) / "images" / frame_name(static_cast<int>(i), "pfm")).string(),
              scene.images[i]);
    write_depth_raster(
        (fs::path(directory) / "depths" / frame_name(static_cast<int>(i), "bin")).string(),
        scene.depths[i]);
  }

  std::vector<std::pair<std::uint64_t, std::vector<int>>> lists;
  for (std::size_t k = 0; k < scene.visibility.size(); ++k) {
    std::vector<int> image_ids;
    for (int frame : scene.visibility[k]) image_ids.push_back(scene.truth.image_ids.at(frame));
    lists.emplace_back(scene.truth.points[k].id, std::move(image_ids));
  }
  write_visibility_json((fs::path(directory) / "visibility.json").string(), lists);

  nlohmann::json meta;
  meta["seed"] = scene.seed;
  meta["scene_diameter"] = scene.scene_diameter;
  meta["gains"] = scene.gains;
  meta["biases"] = scene.biases;
  nlohmann::json planes = nlohmann::json::array();
  for (const ScenePlane& pl : scene.planes) {
    planes.push_back({{"center", vec3_json(pl.center)},
                      {"u", vec3_json(pl.u)},
                      {"v", vec3_json(pl.v)},
                      {"normal", vec3_json(pl.normal)},
                      {"half_u", pl.half_u},
                      {"half_v", pl.half_v}});
  }
  meta["planes"] = planes;
  nlohmann::json assignment = nlohmann::json::array();
  for (std::size_t k = 0; k < scene.landmark_plane.size(); ++k) {
    assignment.push_back(
        {{"point_id", scene.truth.points[k].id}, {"plane", scene.landmark_plane[k]}});
  }
  meta["landmark_plane"] = assignment;

  std::ofstream out(fs::path(directory) / "scene_meta.json");
  if (!out) throw std::runtime_error("cannot write scene_meta.json under " + directory);
  out << meta.dump(2) << "\n";
}

SceneMeta read_scene_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json meta = nlohmann::json::parse(in);
  SceneMeta out;
  out.seed = meta.value("seed", std::uint64_t{0});
  out.scene_diameter = meta.value("scene_diameter", 0.0);
  out.gains = meta.value("gains", std::vector<double>{});
  out.biases = meta.value("biases", std::vector<double>{});
  for (const auto& j : meta.at("planes")) {
    ScenePlane pl;
    pl.center = vec3_from_json(j.at("center"));
    pl.u = vec3_from_json(j.at("u"));
    pl.v = vec3_from_json(j.at("v"));
    pl.normal = vec3_from_json(j.at("normal"));
    pl.half_u = j.at("half_u").get<double>();
    pl.half_v = j.at("half_v").get<double>();
    out.planes.push_back(pl);
  }
  for (const auto& j : meta.at("landmark_plane")) {
    out.landmark_plane.emplace_back(j.at("point_id").get<std::uint64_t>(),
                                    j.at("plane").get<int>());
  }
  return out;
}

}  // namespace pba
