#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "photoba/photocost.hpp"
#include "photoba/scene.hpp"
#include "photoba/types.hpp"

namespace pba {

/// Camera-update strategy: variable projection (structure eliminated through
/// its projector) or plain alternation (structure held fixed during the
/// camera step).
enum class SolverMode { kVarPro, kAlternate };

struct SolveOptions {
  int outer_iterations = 10;
  double tau = 0.5;            ///< robust scale for the normalized-patch mode
  double huber_delta = 40.0;   ///< Huber transition for the raw-intensity mode
  CostMode mode = CostMode::kNcc;
  SolverMode solver = SolverMode::kVarPro;
  bool fixed_scale = false;
  bool freeze_poses = false;
  bool freeze_intrinsics = false;
  bool freeze_structure = false;
  bool sqrt_weighting = false;  ///< IRLS-style sqrt(rho') stacks instead of rho'
  int undistort_steps = 3;
  int max_retries = 25;
  int threads = 0;              ///< 0 = runtime default

  RobustKernel kernel() const {
    return mode == CostMode::kNcc ? RobustKernel::geman_mcclure(tau)
                                  : RobustKernel::huber(huber_delta);
  }
};

/// Levenberg-style damping schedule: start heavy, relax tenfold on success,
/// back off by a doubling growth factor on failure.
struct DampingState {
  double lambda = 1.0;
  double omega = 10.0;

  void init(double landmark_count) {
    lambda = std::max(landmark_count, 1e-6);
    omega = 10.0;
  }
  void on_accept() {
    lambda /= 10.0;
    omega = 10.0;
  }
  void on_reject() {
    lambda = std::max(lambda * omega, 1e-6);
    omega *= 2.0;
  }
};

/// Global column layout of the reduced camera system: six columns per
/// unfrozen frame pose followed by six per unfrozen camera.
struct ParameterLayout {
  std::vector<int> pose_col;    ///< per frame, -1 when frozen
  std::vector<int> camera_col;  ///< per camera entry, -1 when frozen
  int cols = 0;

  static ParameterLayout build(const ProblemState& state, bool freeze_poses,
                               bool freeze_intrinsics);
};

/// Accumulated normal equations of the camera parameters with the structure
/// directions projected out landmark by landmark.
struct ReducedCameraSystem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  long valid_blocks = 0;
  long invalid_blocks = 0;
  long skipped_landmarks = 0;
};

/// Process-wide accounting of live per-landmark scratch (residual and
/// Jacobian stacks). The streaming contract keeps the peak proportional to
/// the number of workers, never the number of landmarks.
namespace scratch_counters {
void add(std::size_t bytes);
void sub(std::size_t bytes);
void reset();
std::size_t current();
std::size_t peak();
}  // namespace scratch_counters

/// Streams all landmarks once, building each landmark's weighted stacks,
/// projecting out its plane directions (unless `apply_projector` is off),
/// and summing the contribution into H/g before moving on.
ReducedCameraSystem accumulate_rcs(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                                   const StageCache& cache, const ParameterLayout& layout,
                                   const SolveOptions& opt, bool apply_projector);

/// Damped solve of the reduced system with the intrinsics prior appended:
/// delta = -(H + J_reg^T J_reg + lambda I)^{-1} (g + J_reg^T r_reg).
Eigen::VectorXd solve_camera_update(const ReducedCameraSystem& rcs, const ProblemState& state,
                                    const ParameterLayout& layout, double lambda);

/// Applies a stacked camera delta to the poses and intrinsics it addresses.
void apply_camera_delta(ProblemState* state, const ParameterLayout& layout,
                        const Eigen::VectorXd& delta);

/// Gauss-Newton refinement of one landmark's plane, accepting steps only
/// while the landmark's local robust cost decreases. Returns the number of
/// accepted steps.
int epi_update(ProblemState* state, const std::vector<Pyramid>& pyramids, const StageCache& cache,
               const RobustKernel& kernel, const SolveOptions& opt, int landmark);

/// Point iterations over every landmark (parallel; landmarks are
/// independent). Returns the total number of accepted plane steps.
long run_epis(ProblemState* state, const std::vector<Pyramid>& pyramids, const StageCache& cache,
              const RobustKernel& kernel, const SolveOptions& opt);

struct IterationLog {
  std::string stage;
  int iteration = 0;
  double lambda = 0.0;
  double cost = 0.0;
  bool accepted = false;
  long invalid_blocks = 0;
  double wall_time_s = 0.0;
  int retries = 0;
};

struct OptimizeResult {
  std::vector<IterationLog> log;
  CostBreakdown final_cost;
};

/// Full refinement schedule: a structure-only warm-up at the first stage,
/// then the damped joint loop at every stage in order.
OptimizeResult optimize(ProblemState* state, const std::vector<Pyramid>& pyramids,
                        const std::vector<StageParams>& stages, const SolveOptions& opt);

/// Writes the per-iteration log as CSV (header + one row per iteration).
void write_iteration_csv(const std::string& path, const std::vector<IterationLog>& log);

}  // namespace pba
