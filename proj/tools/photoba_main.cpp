#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "photoba/derivative_check.hpp"
#include "photoba/evalmetrics.hpp"
#include "photoba/pipeline.hpp"
#include "photoba/synthetic.hpp"

namespace {

struct RefineArgs {
  pba::RunConfig config;
  std::string mode = "ncc";
  std::string solver = "varpro";
  std::vector<std::string> freeze;
};

int run_refine(const RefineArgs& args) {
  pba::RunConfig config = args.config;
  config.solve.mode = args.mode == "ssd" ? pba::CostMode::kSsd : pba::CostMode::kNcc;
  config.solve.solver =
      args.solver == "alternate" ? pba::SolverMode::kAlternate : pba::SolverMode::kVarPro;
  for (const std::string& what : args.freeze) {
    if (what == "poses") config.solve.freeze_poses = true;
    if (what == "intrinsics") config.solve.freeze_intrinsics = true;
    if (what == "structure") config.solve.freeze_structure = true;
  }

  const pba::PipelineResult result = pba::run_pipeline_from_disk(config);
  std::cout << "landmarks: " << result.report.surviving << " of " << result.report.input_points
            << " survived preprocessing";
  if (result.culled > 0) std::cout << ", " << result.culled << " culled from outputs";
  std::cout << "\ncost: " << result.initial_cost << " -> " << result.optimize.final_cost.total()
            << " over " << result.optimize.log.size() << " iterations ("
            << result.wall_time_s << " s)\n";
  if (!config.output_dir.empty()) std::cout << "outputs written to " << config.output_dir << "\n";
  return 0;
}

struct SynthArgs {
  std::string output;
  std::uint64_t seed = 1;
  pba::SyntheticSpec spec;
};

int run_synth(const SynthArgs& args) {
  const pba::SyntheticScene scene = pba::generate_synthetic_scene(args.seed, args.spec);
  pba::write_synthetic_scene(args.output, scene);
  std::cout << "wrote " << scene.images.size() << " frames, "
            << scene.truth.points.size() << " landmarks, "
            << scene.planes.size() << " planes to " << args.output << "\n";
  return 0;
}

struct EvalArgs {
  std::string model_dir;
  std::string truth_dir;
  std::string landmarks_path;
  std::string meta_path;
  std::string output_path;
};

int run_eval(const EvalArgs& args) {
  const pba::InitialReconstruction estimate = pba::read_colmap_model(args.model_dir);
  const pba::InitialReconstruction truth = pba::read_colmap_model(args.truth_dir);
  pba::SimilarityTransform alignment;
  pba::EvalReport report = pba::evaluate_model(estimate, truth, &alignment);
  if (!args.landmarks_path.empty() && !args.meta_path.empty()) {
    const auto records = pba::read_landmark_records(args.landmarks_path);
    const pba::SceneMeta meta = pba::read_scene_meta(args.meta_path);
    report.landmark_rmse =
        pba::truth_landmark_rmse(records, truth, meta, alignment, &report.matched_landmarks);
  }

  nlohmann::json doc = {{"matched_images", report.matched_images},
                        {"alignment_rms", report.alignment_rms},
                        {"rotation_error_deg", report.rotation_error_deg},
                        {"translation_error", report.translation_error},
                        {"focal_error_pct", report.focal_error_pct},
                        {"matched_landmarks", report.matched_landmarks},
                        {"landmark_rmse", report.landmark_rmse}};
  std::cout << doc.dump(2) << "\n";
  if (!args.output_path.empty()) {
    std::ofstream out(args.output_path);
    if (!out) throw std::runtime_error("cannot write " + args.output_path);
    out << doc.dump(2) << "\n";
  }
  return 0;
}

struct CheckArgs {
  std::uint64_t seed = 1;
  std::string mode = "ncc";
  int samples = 24;
  double step = 1e-6;
  double tolerance = 1e-4;
  bool fixed_scale = false;
};

int run_check(const CheckArgs& args) {
  pba::SyntheticSpec spec;
  spec.num_frames = 4;
  spec.width = 192;
  spec.height = 144;
  spec.focal = 170.0;
  spec.num_landmarks = 80;
  const pba::SyntheticScene scene = pba::generate_synthetic_scene(args.seed, spec);

  std::vector<pba::Pyramid> pyramids;
  for (const pba::GrayImage& img : scene.images) pyramids.push_back(pba::build_pyramid(img));
  pba::ProblemState state = scene.initial.camera_state();
  pba::PreprocessResult pre = pba::preprocess_landmarks(
      scene.initial.points, state, pyramids, scene.depths, nullptr, pba::PreprocessOptions{});
  state.landmarks = std::move(pre.landmarks);
  if (state.landmarks.empty()) throw std::runtime_error("no landmarks survived preprocessing");

  pba::StageParams stage;
  stage.fixed_scale = args.fixed_scale;
  const pba::CostMode mode = args.mode == "ssd" ? pba::CostMode::kSsd : pba::CostMode::kNcc;
  const pba::StageCache cache = pba::build_stage_cache(state, pyramids, stage, mode);

  double worst = 0.0;
  int worst_lane = -1;
  long checked = 0;
  long one_sided = 0;
  for (std::size_t k = 0; k < state.landmarks.size() && checked < args.samples; ++k) {
    for (std::size_t j = 0; j < state.landmarks[k].targets.size() && checked < args.samples; ++j) {
      const auto check = pba::check_block_derivatives(state, pyramids, cache, static_cast<int>(k),
                                                      static_cast<int>(j), args.step);
      if (!check) continue;
      ++checked;
      one_sided += check->one_sided;
      if (check->max_rel_error > worst) {
        worst = check->max_rel_error;
        worst_lane = check->worst_lane;
      }
    }
  }
  std::cout << "checked " << checked << " residual blocks (" << args.mode
            << " mode): max relative error " << worst << " (lane " << worst_lane << "), "
            << one_sided << " lanes at interpolation-cell boundaries\n";
  if (checked == 0) {
    std::cerr << "no checkable blocks\n";
    return 1;
  }
  if (worst > args.tolerance) {
    std::cerr << "derivative mismatch above tolerance " << args.tolerance << "\n";
    return 1;
  }
  std::cout << "derivatives agree within " << args.tolerance << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photometric refinement of camera poses, intrinsics, and planar landmarks"};
  app.require_subcommand(1);

  RefineArgs refine;
  CLI::App* refine_cmd =
      app.add_subcommand("refine", "Refine a reconstruction against its images");
  refine_cmd->add_option("--model", refine.config.model_dir, "Input text-model directory")
      ->required();
  refine_cmd->add_option("--images", refine.config.images_dir, "Image directory")->required();
  refine_cmd->add_option("--depths", refine.config.depths_dir,
                         "Depth raster directory (<image stem>.bin)");
  refine_cmd->add_option("--visibility", refine.config.visibility_path,
                         "Explicit visibility JSON (alternative to --depths)");
  refine_cmd->add_option("--output", refine.config.output_dir, "Output directory")->required();
  refine_cmd->add_option("--mode", refine.mode, "Residual mode")
      ->check(CLI::IsMember({"ncc", "ssd"}))
      ->capture_default_str();
  refine_cmd->add_option("--solver", refine.solver, "Camera update scheme")
      ->check(CLI::IsMember({"varpro", "alternate"}))
      ->capture_default_str();
  refine_cmd->add_option("--stages", refine.config.stages, "Resolution schedule")
      ->delimiter(',')
      ->check(CLI::IsMember({"half", "full"}))
      ->capture_default_str();
  refine_cmd->add_flag("--fixed-scale", refine.config.solve.fixed_scale,
                       "Sample targets at the source pyramid level");
  refine_cmd->add_option("--freeze", refine.freeze, "Parameter groups to hold fixed")
      ->delimiter(',')
      ->check(CLI::IsMember({"poses", "intrinsics", "structure"}));
  refine_cmd->add_flag("--shared-intrinsics", refine.config.shared_intrinsics,
                       "Optimize a single camera shared by all images");
  refine_cmd->add_option("--iters", refine.config.solve.outer_iterations,
                         "Outer iterations per stage")
      ->capture_default_str();
  refine_cmd->add_option("--tau", refine.config.solve.tau, "Robust scale (ncc mode)")
      ->capture_default_str();
  refine_cmd->add_option("--threads", refine.config.solve.threads, "Worker threads (0 = auto)")
      ->capture_default_str();
  refine_cmd->add_option("--cull-percent", refine.config.cull_percent,
                         "Drop this percentage of worst landmarks from outputs")
      ->capture_default_str();

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark scene");
  synth_cmd->add_option("--output", synth.output, "Scene directory to create")->required();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--frames", synth.spec.num_frames, "Camera count")
      ->capture_default_str();
  synth_cmd->add_option("--landmarks", synth.spec.num_landmarks, "Scene point count")
      ->capture_default_str();
  synth_cmd->add_option("--rotation-deg", synth.spec.rotation_perturb_deg,
                        "Initial rotation error per camera, degrees")
      ->capture_default_str();
  synth_cmd->add_option("--translation-rel", synth.spec.translation_perturb_rel,
                        "Initial translation error, fraction of scene diameter")
      ->capture_default_str();
  synth_cmd->add_option("--focal-rel", synth.spec.focal_perturb_rel,
                        "Initial relative focal error")
      ->capture_default_str();
  synth_cmd->add_option("--depth-rel", synth.spec.depth_perturb_rel,
                        "Initial relative landmark depth error")
      ->capture_default_str();
  bool no_relight = false;
  synth_cmd->add_flag("--no-relight", no_relight, "Disable per-view gain and bias");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Compare a model against ground truth");
  eval_cmd->add_option("--model", eval.model_dir, "Estimated model directory")->required();
  eval_cmd->add_option("--truth", eval.truth_dir, "Ground-truth model directory")->required();
  eval_cmd->add_option("--landmarks", eval.landmarks_path, "Landmark records JSON");
  eval_cmd->add_option("--meta", eval.meta_path, "Scene metadata JSON (plane geometry)");
  eval_cmd->add_option("--output", eval.output_path, "Write the report here as JSON");

  CheckArgs check;
  CLI::App* check_cmd =
      app.add_subcommand("check-jacobians", "Verify residual derivatives by finite differences");
  check_cmd->add_option("--seed", check.seed, "Random seed for the probe scene")
      ->capture_default_str();
  check_cmd->add_option("--mode", check.mode, "Residual mode")
      ->check(CLI::IsMember({"ncc", "ssd"}))
      ->capture_default_str();
  check_cmd->add_option("--samples", check.samples, "Residual blocks to check")
      ->capture_default_str();
  check_cmd->add_option("--step", check.step, "Finite-difference step")->capture_default_str();
  check_cmd->add_option("--tol", check.tolerance, "Maximum relative error")
      ->capture_default_str();
  check_cmd->add_flag("--fixed-scale", check.fixed_scale,
                      "Sample targets at the source pyramid level");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*refine_cmd) return run_refine(refine);
    if (*synth_cmd) {
      synth.spec.relight = !no_relight;
      return run_synth(synth);
    }
    if (*eval_cmd) return run_eval(eval);
    if (*check_cmd) return run_check(check);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
