#include "photoba/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "photoba/image_io.hpp"
#include "photoba/photocost.hpp"

namespace pba {
namespace {

namespace fs = std::filesystem;

std::string depth_path_for(const std::string& depths_dir, const std::string& image_name) {
  return (fs::path(depths_dir) / fs::path(image_name).stem()).string() + ".bin";
}

/// Per-landmark robust cost averaged over valid blocks; 1.0 marks a landmark
/// with no valid block at all (the no-signal sentinel).
std::vector<double> mean_block_costs(const ProblemState& state,
                                     const std::vector<Pyramid>& pyramids,
                                     const StageCache& cache, const RobustKernel& kernel) {
  std::vector<double> means(state.landmarks.size(), 1.0);
  for (std::size_t k = 0; k < state.landmarks.size(); ++k) {
    int valid = 0;
    const double cost = landmark_cost(state, pyramids, cache, kernel, static_cast<int>(k), &valid);
    if (valid > 0) means[k] = cost / valid;
  }
  return means;
}

const char* mode_name(CostMode mode) { return mode == CostMode::kNcc ? "ncc" : "ssd"; }
const char* solver_name(SolverMode mode) {
  return mode == SolverMode::kVarPro ? "varpro" : "alternate";
}

void write_outputs(const RunConfig& config, const InitialReconstruction& model,
                   const PipelineResult& result) {
  const fs::path out(config.output_dir);
  fs::create_directories(out);

  ProblemState kept_state = result.state;
  kept_state.landmarks.clear();
  for (int k : result.kept) kept_state.landmarks.push_back(result.state.landmarks[k]);
  write_colmap_model((out / "model").string(), reconstruction_from_state(kept_state, model));

  std::vector<CloudPoint> cloud;
  std::vector<std::pair<std::uint64_t, std::vector<int>>> visibility;
  for (int k : result.kept) {
    const Landmark& lm = result.state.landmarks[k];
    CloudPoint cp;
    if (!landmark_world_point(result.state, lm, &cp.position)) continue;
    const double len = lm.n.norm();
    const Vec3 unit = len > 0.0 ? Vec3(lm.n / len) : Vec3(0.0, 0.0, 1.0);
    cp.normal = result.state.poses[lm.source].R.transpose() * unit;
    cp.cost = result.mean_costs[k];
    cloud.push_back(cp);

    std::vector<int> ids;
    ids.push_back(model.image_ids.at(lm.source));
    for (int t : lm.targets) ids.push_back(model.image_ids.at(t));
    std::sort(ids.begin(), ids.end());
    visibility.emplace_back(lm.id, std::move(ids));
  }
  write_point_cloud_ply((out / "cloud.ply").string(), cloud);
  write_visibility_json((out / "visibility.json").string(), visibility);
  write_iteration_csv((out / "iterations.csv").string(), result.optimize.log);
  write_landmark_records((out / "landmarks_initial.json").string(), result.initial_records);
  write_landmark_records((out / "landmarks_refined.json").string(), result.refined_records);

  nlohmann::json summary;
  summary["mode"] = mode_name(config.solve.mode);
  summary["solver"] = solver_name(config.solve.solver);
  summary["stages"] = config.stages;
  summary["outer_iterations"] = config.solve.outer_iterations;
  summary["tau"] = config.solve.tau;
  summary["fixed_scale"] = config.solve.fixed_scale;
  summary["shared_intrinsics"] = config.shared_intrinsics;
  summary["freeze"] = {{"poses", config.solve.freeze_poses},
                       {"intrinsics", config.solve.freeze_intrinsics},
                       {"structure", config.solve.freeze_structure}};
  summary["cull_percent"] = config.cull_percent;
  summary["threads"] = config.solve.threads;
  summary["preprocess"] = {{"input_points", result.report.input_points},
                           {"too_few_visible", result.report.too_few_visible},
                           {"no_source", result.report.no_source},
                           {"textureless", result.report.textureless},
                           {"degenerate", result.report.degenerate},
                           {"surviving", result.report.surviving}};
  summary["cost"] = {{"initial_total", result.initial_cost},
                     {"final_total", result.optimize.final_cost.total()},
                     {"final_photometric", result.optimize.final_cost.photometric},
                     {"final_regularizer", result.optimize.final_cost.regularizer},
                     {"valid_blocks", result.optimize.final_cost.valid_blocks},
                     {"invalid_blocks", result.optimize.final_cost.invalid_blocks}};
  summary["landmarks"] = {{"refined", result.state.landmarks.size()},
                          {"culled", result.culled},
                          {"written", result.kept.size()}};
  summary["iterations_run"] = result.optimize.log.size();
  summary["wall_time_s"] = result.wall_time_s;

  std::ofstream stream(out / "summary.json");
  if (!stream) throw std::runtime_error("cannot write summary.json under " + config.output_dir);
  stream << summary.dump(2) << "\n";
}

}  // namespace

std::vector<StageParams> parse_stages(const std::vector<std::string>& names,
                                      const SolveOptions& solve) {
  if (names.empty()) throw std::invalid_argument("at least one stage is required");
  std::vector<StageParams> stages;
  for (const std::string& name : names) {
    StageParams stage;
    if (name == "full") {
      stage.source_level = 0;
    } else if (name == "half") {
      stage.source_level = 1;
    } else {
      throw std::invalid_argument("unknown stage '" + name + "' (expected half or full)");
    }
    stage.fixed_scale = solve.fixed_scale;
    stage.undistort_steps = solve.undistort_steps;
    stages.push_back(stage);
  }
  return stages;
}

PipelineResult run_pipeline(const InitialReconstruction& model_in,
                            const std::vector<GrayImage>& images,
                            const std::vector<DepthMap>& depths,
                            const std::vector<std::vector<int>>* explicit_visibility,
                            const RunConfig& config) {
  if (images.size() != model_in.poses.size()) {
    throw std::invalid_argument("image count does not match the reconstruction");
  }
  InitialReconstruction model = model_in;
  if (config.shared_intrinsics && model.cameras.size() > 1) {
    model.cameras.resize(1);
    std::fill(model.image_camera.begin(), model.image_camera.end(), 0);
  }

  const std::vector<StageParams> stages = parse_stages(config.stages, config.solve);
  std::vector<Pyramid> pyramids;
  pyramids.reserve(images.size());
  for (const GrayImage& img : images) pyramids.push_back(build_pyramid(img));

  PipelineResult result;
  ProblemState state = model.camera_state();
  PreprocessResult pre = preprocess_landmarks(model.points, state, pyramids, depths,
                                              explicit_visibility, config.preprocess);
  result.report = pre.report;
  state.landmarks = std::move(pre.landmarks);
  if (state.landmarks.empty()) {
    throw std::runtime_error("preprocessing rejected every landmark");
  }

  const RobustKernel kernel = config.solve.kernel();
  const StageCache final_stage_cache =
      build_stage_cache(state, pyramids, stages.back(), config.solve.mode);
  result.initial_cost = total_cost(state, pyramids, final_stage_cache, kernel).total();
  result.initial_records = landmark_records_from_state(
      state, model.image_ids, mean_block_costs(state, pyramids, final_stage_cache, kernel));

  const auto start = std::chrono::steady_clock::now();
  result.optimize = optimize(&state, pyramids, stages, config.solve);
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const StageCache refined_cache =
      build_stage_cache(state, pyramids, stages.back(), config.solve.mode);
  result.mean_costs = mean_block_costs(state, pyramids, refined_cache, kernel);

  // Output culling: order landmarks by mean cost (no-signal ones first) and
  // drop the requested percentage from the written artifacts only.
  const long total = static_cast<long>(state.landmarks.size());
  long cull = 0;
  if (config.cull_percent > 0.0) {
    cull = std::min<long>(total, static_cast<long>(config.cull_percent * total / 100.0));
  }
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return result.mean_costs[a] > result.mean_costs[b]; });
  std::vector<char> drop(total, 0);
  for (long i = 0; i < cull; ++i) drop[order[i]] = 1;
  for (int k = 0; k < total; ++k) {
    if (!drop[k]) result.kept.push_back(k);
  }
  result.culled = cull;

  std::vector<double> kept_costs;
  ProblemState kept_state = state;
  kept_state.landmarks.clear();
  for (int k : result.kept) {
    kept_state.landmarks.push_back(state.landmarks[k]);
    kept_costs.push_back(result.mean_costs[k]);
  }
  result.refined_records = landmark_records_from_state(kept_state, model.image_ids, kept_costs);
  result.state = std::move(state);

  if (!config.output_dir.empty()) write_outputs(config, model, result);
  return result;
}

PipelineResult run_pipeline_from_disk(const RunConfig& config) {
  const InitialReconstruction model = read_colmap_model(config.model_dir);
  std::vector<GrayImage> images;
  std::vector<DepthMap> depths;
  for (const std::string& name : model.image_names) {
    images.push_back(read_image((fs::path(config.images_dir) / name).string()));
    if (!config.depths_dir.empty()) {
      depths.push_back(read_depth_raster(depth_path_for(config.depths_dir, name)));
    }
  }

  std::vector<std::vector<int>> visibility;
  const std::vector<std::vector<int>>* visibility_ptr = nullptr;
  if (!config.visibility_path.empty()) {
    std::map<int, int> frame_of;
    for (std::size_t i = 0; i < model.image_ids.size(); ++i) {
      frame_of[model.image_ids[i]] = static_cast<int>(i);
    }
    std::map<std::uint64_t, std::vector<int>> by_id;
    for (const auto& [id, image_ids] : read_visibility_json(config.visibility_path)) {
      std::vector<int> frames;
      for (int image_id : image_ids) {
        auto it = frame_of.find(image_id);
        if (it != frame_of.end()) frames.push_back(it->second);
      }
      by_id[id] = std::move(frames);
    }
    for (const IngestPoint& pt : model.points) {
      auto it = by_id.find(pt.id);
      visibility.push_back(it != by_id.end() ? it->second : std::vector<int>{});
    }
    visibility_ptr = &visibility;
  }
  return run_pipeline(model, images, depths, visibility_ptr, config);
}

}  // namespace pba
