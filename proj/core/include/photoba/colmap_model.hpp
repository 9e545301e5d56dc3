#pragma once

#include <string>
#include <vector>

#include "photoba/preprocess.hpp"
#include "photoba/scene.hpp"

namespace pba {

/// Parsed text-model reconstruction. Images are ordered by id; point tracks
/// hold frame indices into that order (not raw file ids).
struct InitialReconstruction {
  std::vector<Intrinsics> cameras;
  std::vector<int> camera_ids;

  std::vector<Pose> poses;
  std::vector<int> image_ids;
  std::vector<int> image_camera;  ///< per image: index into `cameras`
  std::vector<std::string> image_names;

  std::vector<IngestPoint> points;

  /// Poses/intrinsics/frame-camera mapping as a solver state (no landmarks).
  ProblemState camera_state() const;
};

/// Reads the text model triplet (cameras.txt, images.txt, points3D.txt) plus
/// an optional normals.txt sidecar (`POINT3D_ID NX NY NZ` per line).
/// Supported camera models: PINHOLE, SIMPLE_PINHOLE, SIMPLE_RADIAL, RADIAL,
/// and OPENCV with zero tangential terms. Principal points are shifted from
/// the file's pixel-corner origin to the pixel-center convention used
/// internally.
InitialReconstruction read_colmap_model(const std::string& directory);

/// Writes the reconstruction in the same text-model format (plus
/// normals.txt), applying the inverse principal-point shift. Cameras with
/// zero distortion are written as PINHOLE, others as OPENCV with zero
/// tangential terms.
void write_colmap_model(const std::string& directory, const InitialReconstruction& recon);

/// Provisional landmark list straight from the reconstruction points: the
/// anchor is the first track frame that sees the point at positive depth,
/// the anchor pixel its exact projection, and the plane is built from the
/// point's position and normal in that frame. Points behind every track
/// camera are dropped and counted.
std::vector<Landmark> init_landmarks_from_points(const InitialReconstruction& recon,
                                                 long* dropped = nullptr);

/// Reconstruction snapshot of a refined state, preserving ids and names from
/// `base` and refreshing poses, intrinsics, and landmark-derived points
/// (position from the anchor ray/plane intersection, normal from the plane).
InitialReconstruction reconstruction_from_state(const ProblemState& state,
                                                const InitialReconstruction& base);

}  // namespace pba
