#include "photoba/colmap_model.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>

namespace pba {

namespace {

namespace fs = std::filesystem;

[[noreturn]] void parse_fail(const std::string& file, int line, const std::string& what) {
  throw std::runtime_error(file + ":" + std::to_string(line) + ": " + what);
}

/// Yields non-comment, non-blank lines with their 1-based line numbers.
class LineReader {
 public:
  LineReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) {
      throw std::runtime_error("cannot open " + path);
    }
  }

  bool next(std::string* line, int* number) {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      const auto first = raw.find_first_not_of(" \t\r");
      if (first == std::string::npos || raw[first] == '#') {
        continue;
      }
      *line = raw;
      *number = line_;
      return true;
    }
    return false;
  }

  /// Next raw line regardless of content (used for the 2D-point rows of
  /// images.txt, which may legitimately be empty).
  bool next_raw(std::string* line, int* number) {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      const auto first = raw.find_first_not_of(" \t\r");
      if (first != std::string::npos && raw[first] == '#') {
        continue;
      }
      *line = raw;
      *number = line_;
      return true;
    }
    return false;
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  int line_ = 0;
};

struct RawCamera {
  Intrinsics cam;
};

std::map<int, RawCamera> read_cameras(const std::string& path) {
  LineReader reader(path);
  std::map<int, RawCamera> cameras;
  std::string line;
  int num = 0;
  while (reader.next(&line, &num)) {
    std::istringstream ss(line);
    int id = 0;
    std::string model;
    int width = 0;
    int height = 0;
    if (!(ss >> id >> model >> width >> height)) {
      parse_fail(path, num, "malformed camera line");
    }
    std::vector<double> params;
    double value = 0.0;
    while (ss >> value) {
      params.push_back(value);
    }
    Intrinsics cam;
    cam.width = width;
    cam.height = height;
    if (model == "PINHOLE" && params.size() == 4) {
      cam.s << params[0], params[1], params[2], params[3];
    } else if (model == "SIMPLE_PINHOLE" && params.size() == 3) {
      cam.s << params[0], params[0], params[1], params[2];
    } else if (model == "SIMPLE_RADIAL" && params.size() == 4) {
      cam.s << params[0], params[0], params[1], params[2];
      cam.l << params[3], 0.0;
    } else if (model == "RADIAL" && params.size() == 5) {
      cam.s << params[0], params[0], params[1], params[2];
      cam.l << params[3], params[4];
    } else if (model == "OPENCV" && params.size() == 8) {
      if (params[6] != 0.0 || params[7] != 0.0) {
        parse_fail(path, num, "OPENCV camera with tangential distortion is not supported");
      }
      cam.s << params[0], params[1], params[2], params[3];
      cam.l << params[4], params[5];
    } else {
      parse_fail(path, num, "unsupported camera model '" + model + "'");
    }
    if (width <= 0 || height <= 0) {
      parse_fail(path, num, "non-positive image size");
    }
    // File principal points use the pixel-corner origin; internally integer
    // coordinates are pixel centers.
    cam.s[2] -= 0.5;
    cam.s[3] -= 0.5;
    cameras.emplace(id, RawCamera{cam});
  }
  if (cameras.empty()) {
    throw std::runtime_error(path + ": no cameras found");
  }
  return cameras;
}

struct RawImage {
  Pose pose;
  int camera_id = 0;
  std::string name;
};

std::map<int, RawImage> read_images(const std::string& path) {
  LineReader reader(path);
  std::map<int, RawImage> images;
  std::string line;
  int num = 0;
  while (reader.next(&line, &num)) {
    std::istringstream ss(line);
    int id = 0;
    double qw = 0.0, qx = 0.0, qy = 0.0, qz = 0.0;
    Vec3 t;
    int camera_id = 0;
    std::string name;
    if (!(ss >> id >> qw >> qx >> qy >> qz >> t.x() >> t.y() >> t.z() >> camera_id >> name)) {
      parse_fail(path, num, "malformed image line");
    }
    RawImage img;
    img.pose.R = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
    img.pose.t = t;
    img.camera_id = camera_id;
    img.name = name;
    images.emplace(id, img);
    // The 2D observation row is not used; tracks come from points3D.txt.
    std::string obs;
    int obs_num = 0;
    if (!reader.next_raw(&obs, &obs_num)) {
      parse_fail(path, num, "missing 2D observation line for image " + std::to_string(id));
    }
  }
  if (images.empty()) {
    throw std::runtime_error(path + ": no images found");
  }
  return images;
}

}  // namespace

ProblemState InitialReconstruction::camera_state() const {
  ProblemState state;
  state.poses = poses;
  state.cameras = cameras;
  state.camera_of_frame = image_camera;
  return state;
}

InitialReconstruction read_colmap_model(const std::string& directory) {
  const fs::path dir(directory);
  const auto cameras = read_cameras((dir / "cameras.txt").string());
  const auto images = read_images((dir / "images.txt").string());

  InitialReconstruction recon;
  std::map<int, int> camera_index;
  for (const auto& [id, raw] : cameras) {
    camera_index.emplace(id, static_cast<int>(recon.cameras.size()));
    recon.cameras.push_back(raw.cam);
    recon.camera_ids.push_back(id);
  }
  std::map<int, int> image_index;
  for (const auto& [id, raw] : images) {
    const auto cam_it = camera_index.find(raw.camera_id);
    if (cam_it == camera_index.end()) {
      throw std::runtime_error((dir / "images.txt").string() + ": image " + std::to_string(id) +
                               " references unknown camera " + std::to_string(raw.camera_id));
    }
    image_index.emplace(id, static_cast<int>(recon.poses.size()));
    recon.poses.push_back(raw.pose);
    recon.image_ids.push_back(id);
    recon.image_camera.push_back(cam_it->second);
    recon.image_names.push_back(raw.name);
  }

  const std::string points_path = (dir / "points3D.txt").string();
  LineReader reader(points_path);
  std::string line;
  int num = 0;
  while (reader.next(&line, &num)) {
    std::istringstream ss(line);
    IngestPoint pt;
    Vec3 rgb;
    double error = 0.0;
    if (!(ss >> pt.id >> pt.position.x() >> pt.position.y() >> pt.position.z() >> rgb.x() >>
          rgb.y() >> rgb.z() >> error)) {
      parse_fail(points_path, num, "malformed 3D point line");
    }
    int image_id = 0;
    int point2d_idx = 0;
    while (ss >> image_id >> point2d_idx) {
      const auto it = image_index.find(image_id);
      if (it == image_index.end()) {
        parse_fail(points_path, num,
                   "track references unknown image " + std::to_string(image_id));
      }
      if (std::find(pt.track.begin(), pt.track.end(), it->second) == pt.track.end()) {
        pt.track.push_back(it->second);
      }
    }
    recon.points.push_back(std::move(pt));
  }

  const fs::path normals_path = dir / "normals.txt";
  if (fs::exists(normals_path)) {
    std::map<std::uint64_t, size_t> point_index;
    for (size_t i = 0; i < recon.points.size(); ++i) {
      point_index.emplace(recon.points[i].id, i);
    }
    LineReader nreader(normals_path.string());
    while (nreader.next(&line, &num)) {
      std::istringstream ss(line);
      std::uint64_t id = 0;
      Vec3 n;
      if (!(ss >> id >> n.x() >> n.y() >> n.z())) {
        parse_fail(normals_path.string(), num, "malformed normal line");
      }
      const auto it = point_index.find(id);
      if (it != point_index.end()) {
        recon.points[it->second].normal = n;
      }
    }
  }
  return recon;
}

void write_colmap_model(const std::string& directory, const InitialReconstruction& recon) {
  const fs::path dir(directory);
  fs::create_directories(dir);

  {
    std::ofstream out(dir / "cameras.txt");
    if (!out) {
      throw std::runtime_error("cannot write " + (dir / "cameras.txt").string());
    }
    out.precision(17);
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
    for (size_t c = 0; c < recon.cameras.size(); ++c) {
      const Intrinsics& cam = recon.cameras[c];
      const double cx = cam.s[2] + 0.5;
      const double cy = cam.s[3] + 0.5;
      out << recon.camera_ids[c] << ' ';
      if (cam.l.isZero(0.0)) {
        out << "PINHOLE " << cam.width << ' ' << cam.height << ' ' << cam.s[0] << ' ' << cam.s[1]
            << ' ' << cx << ' ' << cy << '\n';
      } else {
        out << "OPENCV " << cam.width << ' ' << cam.height << ' ' << cam.s[0] << ' ' << cam.s[1]
            << ' ' << cx << ' ' << cy << ' ' << cam.l[0] << ' ' << cam.l[1] << " 0 0\n";
      }
    }
  }
  {
    std::ofstream out(dir / "images.txt");
    if (!out) {
      throw std::runtime_error("cannot write " + (dir / "images.txt").string());
    }
    out.precision(17);
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
    for (size_t f = 0; f < recon.poses.size(); ++f) {
      const Eigen::Quaterniond q(recon.poses[f].R);
      const Vec3& t = recon.poses[f].t;
      out << recon.image_ids[f] << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z()
          << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' '
          << recon.camera_ids[recon.image_camera[f]] << ' ' << recon.image_names[f] << "\n\n";
    }
  }
  {
    std::ofstream out(dir / "points3D.txt");
    if (!out) {
      throw std::runtime_error("cannot write " + (dir / "points3D.txt").string());
    }
    out.precision(17);
    out << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n";
    for (const IngestPoint& pt : recon.points) {
      out << pt.id << ' ' << pt.position.x() << ' ' << pt.position.y() << ' ' << pt.position.z()
          << " 128 128 128 0";
      for (const int f : pt.track) {
        out << ' ' << recon.image_ids[f] << " 0";
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "normals.txt");
    if (!out) {
      throw std::runtime_error("cannot write " + (dir / "normals.txt").string());
    }
    out.precision(17);
    out << "# POINT3D_ID, NX, NY, NZ\n";
    for (const IngestPoint& pt : recon.points) {
      out << pt.id << ' ' << pt.normal.x() << ' ' << pt.normal.y() << ' ' << pt.normal.z()
          << '\n';
    }
  }
}

std::vector<Landmark> init_landmarks_from_points(const InitialReconstruction& recon,
                                                 long* dropped) {
  std::vector<Landmark> landmarks;
  long drop_count = 0;
  for (const IngestPoint& pt : recon.points) {
    int anchor_frame = -1;
    for (const int f : pt.track) {
      if (transform_point(recon.poses[f], pt.position).z() > kMinDepth) {
        anchor_frame = f;
        break;
      }
    }
    if (anchor_frame < 0) {
      ++drop_count;
      continue;
    }
    const Pose& pose = recon.poses[anchor_frame];
    const Intrinsics& cam = recon.cameras[recon.image_camera[anchor_frame]];
    const Vec3 in_cam = transform_point(pose, pt.position);
    Landmark lm;
    lm.id = pt.id;
    lm.source = anchor_frame;
    lm.anchor =
        affine_map<double>(cam.s, distort<double>(cam.l, perspective_divide<double>(in_cam)));
    Vec3 normal = pt.normal;
    if (normal.squaredNorm() < 1e-24) {
      normal = pose.R.row(2).transpose();  // fronto-parallel fallback
    }
    lm.n = plane_from_point_normal(pose, pt.position, normal);
    for (const int f : pt.track) {
      if (f != anchor_frame) {
        lm.targets.push_back(f);
      }
    }
    landmarks.push_back(std::move(lm));
  }
  if (dropped != nullptr) {
    *dropped = drop_count;
  }
  return landmarks;
}

InitialReconstruction reconstruction_from_state(const ProblemState& state,
                                                const InitialReconstruction& base) {
  InitialReconstruction out = base;
  out.poses = state.poses;
  out.cameras = state.cameras;
  out.image_camera = state.camera_of_frame;
  if (out.cameras.size() != base.cameras.size()) {
    // Intrinsics sharing can collapse the camera list; renumber from 1.
    out.camera_ids.resize(out.cameras.size());
    for (size_t c = 0; c < out.cameras.size(); ++c) {
      out.camera_ids[c] = static_cast<int>(c) + 1;
    }
  }
  out.points.clear();
  for (const Landmark& lm : state.landmarks) {
    Vec3 X;
    if (!landmark_world_point(state, lm, &X)) {
      continue;
    }
    IngestPoint pt;
    pt.id = lm.id;
    pt.position = X;
    pt.normal = state.poses[lm.source].R.transpose() * lm.n.normalized();
    pt.track.push_back(lm.source);
    for (const int j : lm.targets) {
      pt.track.push_back(j);
    }
    out.points.push_back(std::move(pt));
  }
  return out;
}

}  // namespace pba
