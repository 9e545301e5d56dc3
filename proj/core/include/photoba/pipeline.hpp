#pragma once

#include <string>
#include <vector>

#include "photoba/colmap_model.hpp"
#include "photoba/evalmetrics.hpp"
#include "photoba/imaging.hpp"
#include "photoba/preprocess.hpp"
#include "photoba/solver.hpp"

namespace pba {

/// Everything one refinement run needs. Paths other than `model_dir` and
/// `images_dir` are optional; outputs are written only when `output_dir` is
/// non-empty.
struct RunConfig {
  std::string model_dir;
  std::string images_dir;
  std::string depths_dir;       ///< per-image <stem>.bin rasters
  std::string visibility_path;  ///< explicit visibility JSON (alternative to depths)
  std::string output_dir;
  std::vector<std::string> stages = {"half", "full"};
  SolveOptions solve;
  PreprocessOptions preprocess;
  bool shared_intrinsics = false;
  double cull_percent = 0.0;  ///< drop this percentage of worst landmarks from outputs
};

struct PipelineResult {
  ProblemState state;  ///< refined, all surviving landmarks (culling affects outputs only)
  PreprocessReport report;
  OptimizeResult optimize;
  double initial_cost = 0.0;  ///< total cost at the last stage before refinement
  std::vector<double> mean_costs;  ///< per landmark, robust mean over valid blocks
  std::vector<LandmarkRecord> initial_records;
  std::vector<LandmarkRecord> refined_records;  ///< culled landmarks excluded
  std::vector<int> kept;  ///< landmark indices that survived culling
  long culled = 0;
  double wall_time_s = 0.0;
};

/// Maps stage names to pyramid levels: "full" works at level 0, "half" at
/// level 1. Throws on anything else or on an empty list.
std::vector<StageParams> parse_stages(const std::vector<std::string>& names,
                                      const SolveOptions& solve);

/// Refinement on an already-loaded reconstruction. Visibility comes from the
/// depth maps, or from `explicit_visibility` (frame indices per input point)
/// when given. Writes the output bundle if `config.output_dir` is set.
PipelineResult run_pipeline(const InitialReconstruction& model,
                            const std::vector<GrayImage>& images,
                            const std::vector<DepthMap>& depths,
                            const std::vector<std::vector<int>>* explicit_visibility,
                            const RunConfig& config);

/// Loads the model, images, and depth/visibility sidecars from the paths in
/// `config`, then runs the refinement.
PipelineResult run_pipeline_from_disk(const RunConfig& config);

}  // namespace pba
