#pragma once

#include <string>
#include <vector>

#include "photoba/imaging.hpp"
#include "photoba/preprocess.hpp"
#include "photoba/scene.hpp"

namespace pba {

/// Loads a grayscale image by extension: binary PGM (P5) and PPM (P6,
/// converted by luma weights), or PFM (32-bit float, kept as-is).
GrayImage read_image(const std::string& path);

/// 8-bit binary PGM with values clamped and rounded to [0, 255].
void write_pgm(const std::string& path, const GrayImage& img);

/// Grayscale PFM ('Pf'), little-endian, bottom-up rows; preserves float
/// intensities exactly.
void write_pfm(const std::string& path, const GrayImage& img);
GrayImage read_pfm(const std::string& path);

/// Per-view depth raster: uint32 width, uint32 height, then width*height
/// little-endian float32 depths, row-major. Zero marks "no depth".
void write_depth_raster(const std::string& path, const DepthMap& depth);
DepthMap read_depth_raster(const std::string& path);

/// Visibility sidecar: JSON array of {landmark_id, visible_image_ids}.
void write_visibility_json(const std::string& path,
                           const std::vector<std::pair<std::uint64_t, std::vector<int>>>& lists);
std::vector<std::pair<std::uint64_t, std::vector<int>>> read_visibility_json(
    const std::string& path);

/// ASCII PLY point cloud: one vertex per landmark with world position, plane
/// normal direction (world), and mean photometric cost.
struct CloudPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  double cost = 0.0;
};
void write_point_cloud_ply(const std::string& path, const std::vector<CloudPoint>& points);

}  // namespace pba
