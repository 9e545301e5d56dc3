#include "photoba/solver.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pba {

namespace scratch_counters {
namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

void add(std::size_t bytes) {
  const std::size_t now = g_current.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}
void sub(std::size_t bytes) { g_current.fetch_sub(bytes); }
void reset() {
  g_current = 0;
  g_peak = 0;
}
std::size_t current() { return g_current.load(); }
std::size_t peak() { return g_peak.load(); }
}  // namespace scratch_counters

namespace {

using D27 = Dual<kFullLanes>;
using D3 = Dual<kPlaneLanes>;

int resolve_threads(int requested) {
#ifdef _OPENMP
  return requested > 0 ? requested : omp_get_max_threads();
#else
  (void)requested;
  return 1;
#endif
}

/// Registers per-landmark scratch bytes for the lifetime of the stacks.
class ScratchAllocation {
 public:
  explicit ScratchAllocation(std::size_t bytes) : bytes_(bytes) { scratch_counters::add(bytes_); }
  ~ScratchAllocation() { scratch_counters::sub(bytes_); }
  ScratchAllocation(const ScratchAllocation&) = delete;
  ScratchAllocation& operator=(const ScratchAllocation&) = delete;

 private:
  std::size_t bytes_;
};

/// Symmetric 3x3 (pseudo-)inverse with eigenvalue thresholding; directions
/// with eigenvalues below 1e-12 of the largest are dropped, which covers
/// both rank deficiency and the all-zero structure Jacobian.
Mat3 pseudo_inverse_3x3(const Mat3& A) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(A);
  const Vec3 evals = es.eigenvalues();
  const double emax = evals.cwiseAbs().maxCoeff();
  Vec3 inv = Vec3::Zero();
  for (int i = 0; i < 3; ++i) {
    if (evals[i] > 0.0 && evals[i] > emax * 1e-12) {
      inv[i] = 1.0 / evals[i];
    }
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

struct AccumulateTotals {
  long valid = 0;
  long invalid = 0;
  long skipped = 0;
};

/// Read-only bundles shared by every landmark of one accumulation pass. A
/// frame appears with two seedings because its lanes differ by role; a
/// camera shared between the two frames of a block reuses the source lanes,
/// which makes the chain rule sum the two contributions.
struct SeededProblem {
  std::vector<SeededPose<D27>> pose_as_source;
  std::vector<SeededPose<D27>> pose_as_target;
  std::vector<SeededCamera<D27>> cam_as_source;
  std::vector<SeededCamera<D27>> cam_as_target;
};

SeededProblem seed_problem(const ProblemState& state, const ParameterLayout& layout) {
  SeededProblem sp;
  const size_t nf = state.poses.size();
  const size_t nc = state.cameras.size();
  sp.pose_as_source.resize(nf);
  sp.pose_as_target.resize(nf);
  sp.cam_as_source.resize(nc);
  sp.cam_as_target.resize(nc);
  for (size_t f = 0; f < nf; ++f) {
    const int lane0 = layout.pose_col[f] >= 0 ? 0 : -1;
    const int lane6 = layout.pose_col[f] >= 0 ? 6 : -1;
    sp.pose_as_source[f] = seed_pose<D27>(state.poses[f], lane0);
    sp.pose_as_target[f] = seed_pose<D27>(state.poses[f], lane6);
  }
  for (size_t c = 0; c < nc; ++c) {
    const int lane12 = layout.camera_col[c] >= 0 ? 12 : -1;
    const int lane18 = layout.camera_col[c] >= 0 ? 18 : -1;
    sp.cam_as_source[c] = seed_camera<D27>(state.cameras[c], lane12);
    sp.cam_as_target[c] = seed_camera<D27>(state.cameras[c], lane18);
  }
  return sp;
}

/// Builds one landmark's weighted stacks, reduces them (projector applied
/// unless disabled), and adds the result into the caller's H/g.
void accumulate_landmark(int k, const ProblemState& state, const std::vector<Pyramid>& pyramids,
                         const StageCache& cache, const ParameterLayout& layout,
                         const SolveOptions& opt, const RobustKernel& kernel,
                         const SeededProblem& sp, bool apply_projector, Eigen::MatrixXd* H,
                         Eigen::VectorXd* g, AccumulateTotals* totals) {
  const Landmark& lm = state.landmarks[k];
  if (!cache.source[k].valid) {
    totals->invalid += static_cast<long>(lm.targets.size());
    ++totals->skipped;
    return;
  }
  const int src = lm.source;
  const int src_cam = state.camera_of_frame[src];

  // Landmark-local column map: the union of 6-wide parameter groups its
  // blocks touch, each entry holding the group's global column.
  std::vector<int> group_cols;
  group_cols.reserve(2 + 2 * lm.targets.size());
  const auto local_of = [&group_cols](int global_col) {
    for (size_t i = 0; i < group_cols.size(); ++i) {
      if (group_cols[i] == global_col) {
        return static_cast<int>(6 * i);
      }
    }
    group_cols.push_back(global_col);
    return static_cast<int>(6 * (group_cols.size() - 1));
  };
  const int src_pose_off = layout.pose_col[src] >= 0 ? local_of(layout.pose_col[src]) : -1;
  const int src_cam_off = layout.camera_col[src_cam] >= 0 ? local_of(layout.camera_col[src_cam]) : -1;
  std::vector<int> tgt_pose_off(lm.targets.size(), -1);
  std::vector<int> tgt_cam_off(lm.targets.size(), -1);
  std::vector<bool> tgt_shares_cam(lm.targets.size(), false);
  for (size_t ji = 0; ji < lm.targets.size(); ++ji) {
    const int j = lm.targets[ji];
    const int cj = state.camera_of_frame[j];
    tgt_shares_cam[ji] = (cj == src_cam);
    if (layout.pose_col[j] >= 0) {
      tgt_pose_off[ji] = local_of(layout.pose_col[j]);
    }
    if (layout.camera_col[cj] >= 0) {
      tgt_cam_off[ji] = local_of(layout.camera_col[cj]);
    }
  }
  const int local_cols = static_cast<int>(6 * group_cols.size());
  const int max_rows = static_cast<int>(kPatchSize * lm.targets.size());

  const ScratchAllocation scratch(static_cast<std::size_t>(max_rows) *
                                  (local_cols + kPlaneLanes + 1) * sizeof(double));
  Eigen::MatrixXd Jbar(max_rows, local_cols);
  Eigen::MatrixXd Jhat(max_rows, kPlaneLanes);
  Eigen::VectorXd E(max_rows);

  const SourceRays<D27> rays =
      compute_source_rays<D27>(sp.cam_as_source[src_cam], lm.anchor, cache.stage);
  const Vec3T<D27> plane = seed_plane<D27>(lm.n, apply_projector ? 24 : -1);

  int rows = 0;
  for (size_t ji = 0; ji < lm.targets.size(); ++ji) {
    const int j = lm.targets[ji];
    const int cj = state.camera_of_frame[j];
    const SeededCamera<D27>& tgt_cam = tgt_shares_cam[ji] ? sp.cam_as_source[cj]
                                                          : sp.cam_as_target[cj];
    PatchT<D27> res;
    if (!evaluate_block<D27>(sp.pose_as_source[src], rays, sp.pose_as_target[j], tgt_cam, plane,
                             cache.source[k].values, pyramids[j], cache.stage, cache.mode,
                             &res)) {
      ++totals->invalid;
      continue;
    }
    double sq = 0.0;
    for (int m = 0; m < kPatchSize; ++m) {
      sq += res[m].value() * res[m].value();
    }
    double w = kernel.drho(sq);
    if (opt.sqrt_weighting) {
      w = std::sqrt(w);
    }
    for (int m = 0; m < kPatchSize; ++m) {
      const int r = rows + m;
      E[r] = w * res[m].value();
      const auto& d = res[m].partials();
      Jbar.row(r).setZero();
      if (src_pose_off >= 0) {
        Jbar.row(r).segment<6>(src_pose_off) += w * d.segment<6>(0).transpose();
      }
      if (tgt_pose_off[ji] >= 0) {
        Jbar.row(r).segment<6>(tgt_pose_off[ji]) += w * d.segment<6>(6).transpose();
      }
      if (src_cam_off >= 0) {
        Jbar.row(r).segment<6>(src_cam_off) += w * d.segment<6>(12).transpose();
      }
      if (tgt_cam_off[ji] >= 0 && !tgt_shares_cam[ji]) {
        Jbar.row(r).segment<6>(tgt_cam_off[ji]) += w * d.segment<6>(18).transpose();
      }
      if (apply_projector) {
        Jhat.row(r) = w * d.segment<3>(24).transpose();
      }
    }
    rows += kPatchSize;
    ++totals->valid;
  }
  if (rows == 0) {
    ++totals->skipped;
    return;
  }

  const auto Jb = Jbar.topRows(rows);
  const auto Ev = E.head(rows);
  Eigen::MatrixXd Hk;
  Eigen::VectorXd gk;
  if (apply_projector) {
    const auto Jh = Jhat.topRows(rows);
    const Mat3 A = Jh.transpose() * Jh;
    const Mat3 Ainv = pseudo_inverse_3x3(A);
    const Eigen::MatrixXd B = Jh.transpose() * Jb;
    const Vec3 c = Jh.transpose() * Ev;
    Hk = Jb.transpose() * Jb - B.transpose() * Ainv * B;
    gk = Jb.transpose() * Ev - B.transpose() * (Ainv * c);
  } else {
    Hk = Jb.transpose() * Jb;
    gk = Jb.transpose() * Ev;
  }
  for (size_t a = 0; a < group_cols.size(); ++a) {
    g->segment<6>(group_cols[a]) += gk.segment<6>(6 * a);
    for (size_t b = 0; b < group_cols.size(); ++b) {
      H->block<6, 6>(group_cols[a], group_cols[b]) += Hk.block<6, 6>(6 * a, 6 * b);
    }
  }
}

}  // namespace

ParameterLayout ParameterLayout::build(const ProblemState& state, bool freeze_poses,
                                       bool freeze_intrinsics) {
  ParameterLayout layout;
  layout.pose_col.assign(state.poses.size(), -1);
  layout.camera_col.assign(state.cameras.size(), -1);
  int col = 0;
  if (!freeze_poses) {
    for (size_t f = 0; f < state.poses.size(); ++f) {
      layout.pose_col[f] = col;
      col += 6;
    }
  }
  if (!freeze_intrinsics) {
    for (size_t c = 0; c < state.cameras.size(); ++c) {
      layout.camera_col[c] = col;
      col += 6;
    }
  }
  layout.cols = col;
  return layout;
}

ReducedCameraSystem accumulate_rcs(const ProblemState& state, const std::vector<Pyramid>& pyramids,
                                   const StageCache& cache, const ParameterLayout& layout,
                                   const SolveOptions& opt, bool apply_projector) {
  const RobustKernel kernel = opt.kernel();
  const SeededProblem sp = seed_problem(state, layout);
  const int num_landmarks = static_cast<int>(state.landmarks.size());
  const int threads = resolve_threads(opt.threads);

  std::vector<Eigen::MatrixXd> Hs(threads, Eigen::MatrixXd::Zero(layout.cols, layout.cols));
  std::vector<Eigen::VectorXd> gs(threads, Eigen::VectorXd::Zero(layout.cols));
  std::vector<AccumulateTotals> totals(threads);

#ifdef _OPENMP
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
#pragma omp for schedule(dynamic, 16)
    for (int k = 0; k < num_landmarks; ++k) {
      accumulate_landmark(k, state, pyramids, cache, layout, opt, kernel, sp, apply_projector,
                          &Hs[tid], &gs[tid], &totals[tid]);
    }
  }
#else
  for (int k = 0; k < num_landmarks; ++k) {
    accumulate_landmark(k, state, pyramids, cache, layout, opt, kernel, sp, apply_projector,
                        &Hs[0], &gs[0], &totals[0]);
  }
#endif

  ReducedCameraSystem rcs;
  rcs.H = Eigen::MatrixXd::Zero(layout.cols, layout.cols);
  rcs.g = Eigen::VectorXd::Zero(layout.cols);
  for (int t = 0; t < threads; ++t) {
    rcs.H += Hs[t];
    rcs.g += gs[t];
    rcs.valid_blocks += totals[t].valid;
    rcs.invalid_blocks += totals[t].invalid;
    rcs.skipped_landmarks += totals[t].skipped;
  }
  rcs.H = 0.5 * (rcs.H + rcs.H.transpose()).eval();
  return rcs;
}

Eigen::VectorXd solve_camera_update(const ReducedCameraSystem& rcs, const ProblemState& state,
                                    const ParameterLayout& layout, double lambda) {
  Eigen::MatrixXd H = rcs.H;
  Eigen::VectorXd rhs = rcs.g;
  for (size_t c = 0; c < state.cameras.size(); ++c) {
    const int col = layout.camera_col[c];
    if (col < 0) {
      continue;
    }
    const Intrinsics& cam = state.cameras[c];
    const SeededCamera<Dual<6>> sc = seed_camera<Dual<6>>(cam, 0);
    const Vec3T<Dual<6>> r = intrinsics_regularizer<Dual<6>>(sc.s, cam.width, cam.height);
    Eigen::Matrix<double, 3, 6> J;
    Vec3 rv;
    for (int i = 0; i < 3; ++i) {
      rv[i] = r[i].value();
      J.row(i) = r[i].partials().transpose();
    }
    H.block<6, 6>(col, col) += J.transpose() * J;
    rhs.segment<6>(col) += J.transpose() * rv;
  }
  H.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() != Eigen::Success) {
    throw std::runtime_error(
        "camera update: symmetric factorization failed; raise the damping and retry");
  }
  return -ldlt.solve(rhs);
}

void apply_camera_delta(ProblemState* state, const ParameterLayout& layout,
                        const Eigen::VectorXd& delta) {
  for (size_t f = 0; f < state->poses.size(); ++f) {
    if (layout.pose_col[f] >= 0) {
      apply_pose_update(&state->poses[f], delta.segment<6>(layout.pose_col[f]));
    }
  }
  for (size_t c = 0; c < state->cameras.size(); ++c) {
    if (layout.camera_col[c] >= 0) {
      apply_intrinsics_update(&state->cameras[c], delta.segment<6>(layout.camera_col[c]));
    }
  }
}

int epi_update(ProblemState* state, const std::vector<Pyramid>& pyramids, const StageCache& cache,
               const RobustKernel& kernel, const SolveOptions& opt, int landmark) {
  constexpr int kMaxInner = 10;
  const Landmark& lm = state->landmarks[landmark];
  if (!cache.source[landmark].valid) {
    return 0;
  }
  int valid = 0;
  landmark_cost(*state, pyramids, cache, kernel, landmark, &valid);
  if (valid < 2) {
    return 0;
  }
  const SeededPose<D3> src_pose = seed_pose<D3>(state->poses[lm.source], -1);
  const SeededCamera<D3> src_cam = seed_camera<D3>(state->camera_for(lm.source), -1);
  const SourceRays<D3> rays = compute_source_rays<D3>(src_cam, lm.anchor, cache.stage);
  std::vector<SeededPose<D3>> tgt_poses;
  std::vector<SeededCamera<D3>> tgt_cams;
  tgt_poses.reserve(lm.targets.size());
  tgt_cams.reserve(lm.targets.size());
  for (const int j : lm.targets) {
    tgt_poses.push_back(seed_pose<D3>(state->poses[j], -1));
    tgt_cams.push_back(seed_camera<D3>(state->camera_for(j), -1));
  }

  int accepted = 0;
  // The comparison set is pinned on entry: every inner trial is scored on the
  // blocks valid at the start, with blocks a trial pushes out of view charged
  // rather than dropped. A sequence of steps therefore cannot win by shedding
  // residuals one at a time.
  std::vector<char> mask(lm.targets.size(), 0);
  double current = 0.0;
  for (int it = 0; it < kMaxInner; ++it) {
    const Vec3T<D3> plane = seed_plane<D3>(state->landmarks[landmark].n, 0);
    Mat3 A = Mat3::Zero();
    Vec3 c = Vec3::Zero();
    int blocks = 0;
    for (size_t ji = 0; ji < lm.targets.size(); ++ji) {
      PatchT<D3> res;
      if (!evaluate_block<D3>(src_pose, rays, tgt_poses[ji], tgt_cams[ji], plane,
                              cache.source[landmark].values, pyramids[lm.targets[ji]],
                              cache.stage, cache.mode, &res)) {
        continue;
      }
      double sq = 0.0;
      for (int m = 0; m < kPatchSize; ++m) {
        sq += res[m].value() * res[m].value();
      }
      if (it == 0) {
        mask[ji] = 1;
        current += kernel.rho(sq);
      }
      double w = kernel.drho(sq);
      if (opt.sqrt_weighting) {
        w = std::sqrt(w);
      }
      for (int m = 0; m < kPatchSize; ++m) {
        const Vec3 row = w * res[m].partials();
        A += row * row.transpose();
        c += row * (w * res[m].value());
      }
      ++blocks;
    }
    if (blocks < 2) {
      break;
    }
    const Vec3 dn = -(pseudo_inverse_3x3(A) * c);
    if (!dn.allFinite() || dn.isZero(0.0)) {
      break;
    }
    const Vec3 trial = state->landmarks[landmark].n + dn;
    const double trial_cost =
        landmark_cost_on_mask(*state, pyramids, cache, kernel, landmark, trial, mask);
    if (!(trial_cost < current)) {
      break;
    }
    state->landmarks[landmark].n = trial;
    ++accepted;
    const double rel = (current - trial_cost) / std::max(current, 1e-300);
    current = trial_cost;
    if (rel < 1e-9) {
      break;
    }
  }
  return accepted;
}

long run_epis(ProblemState* state, const std::vector<Pyramid>& pyramids, const StageCache& cache,
              const RobustKernel& kernel, const SolveOptions& opt) {
  const int num_landmarks = static_cast<int>(state->landmarks.size());
  const int threads = resolve_threads(opt.threads);
  long accepted = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads) reduction(+ : accepted)
  for (int k = 0; k < num_landmarks; ++k) {
    accepted += epi_update(state, pyramids, cache, kernel, opt, k);
  }
#else
  (void)threads;
  for (int k = 0; k < num_landmarks; ++k) {
    accepted += epi_update(state, pyramids, cache, kernel, opt, k);
  }
#endif
  return accepted;
}

namespace {

/// Scale used to detect a numerically dead camera step: compares the step
/// against the magnitude of the translation and intrinsics entries.
double parameter_scale(const ProblemState& state) {
  double m = 0.0;
  for (const Pose& p : state.poses) {
    m = std::max(m, p.t.cwiseAbs().maxCoeff());
  }
  for (const Intrinsics& cam : state.cameras) {
    m = std::max(m, cam.s.cwiseAbs().maxCoeff());
    m = std::max(m, cam.l.cwiseAbs().maxCoeff());
  }
  return m;
}

/// While the cameras are still far from their optimum, a landmark chasing the
/// moving photometric surface can slide into a false correlation basin and
/// stay there after the cameras settle, out of reach of local descent. The
/// structure the pipeline was handed is an independent hypothesis whose value
/// returns once the cameras are good — but its raw cost is deceptive, sitting
/// on the slope of a basin that may be narrower than the initial error. So
/// each landmark's entry plane is first re-descended under the current
/// cameras, and only the outcome competes with the current plane. Scores
/// cover all target blocks, charging unevaluable ones, so the two hypotheses
/// are compared on identical terms.
void revert_regressed_landmarks(ProblemState* state, const std::vector<Pyramid>& pyramids,
                                const StageCache& cache, const RobustKernel& kernel,
                                const std::vector<Vec3>& entry_planes, const SolveOptions& opt) {
  const int num_landmarks = static_cast<int>(state->landmarks.size());
  const int threads = resolve_threads(opt.threads);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads)
#endif
  for (int k = 0; k < num_landmarks; ++k) {
    if (!cache.source[k].valid) {
      continue;
    }
    Landmark& lm = state->landmarks[k];
    const std::vector<char> all(lm.targets.size(), 1);
    const Vec3 kept = lm.n;
    const double keep_cost =
        landmark_cost_on_mask(*state, pyramids, cache, kernel, k, kept, all);
    lm.n = entry_planes[k];
    for (int round = 0; round < 3; ++round) {
      if (epi_update(state, pyramids, cache, kernel, opt, k) == 0) {
        break;
      }
    }
    const double entry_cost =
        landmark_cost_on_mask(*state, pyramids, cache, kernel, k, lm.n, all);
    if (!(entry_cost < keep_cost)) {
      lm.n = kept;
    }
  }
#ifndef _OPENMP
  (void)threads;
#endif
}

}  // namespace

OptimizeResult optimize(ProblemState* state, const std::vector<Pyramid>& pyramids,
                        const std::vector<StageParams>& stages, const SolveOptions& opt) {
  using Clock = std::chrono::steady_clock;
  if (stages.empty()) {
    throw std::invalid_argument("optimize: stage list is empty");
  }
  OptimizeResult result;
  const RobustKernel kernel = opt.kernel();
  const ParameterLayout layout =
      ParameterLayout::build(*state, opt.freeze_poses, opt.freeze_intrinsics);
  const bool camera_part = layout.cols > 0;
  const bool structure_part = !opt.freeze_structure;
  const bool apply_projector = (opt.solver == SolverMode::kVarPro) && structure_part;
  const double L = static_cast<double>(state->landmarks.size());
  std::vector<Vec3> entry_planes;
  entry_planes.reserve(state->landmarks.size());
  for (const Landmark& lm : state->landmarks) {
    entry_planes.push_back(lm.n);
  }

  // Structure-only warm-up at the first stage's resolution.
  if (structure_part) {
    const auto t0 = Clock::now();
    StageParams stage = stages.front();
    stage.fixed_scale = opt.fixed_scale;
    stage.undistort_steps = opt.undistort_steps;
    const StageCache cache = build_stage_cache(*state, pyramids, stage, opt.mode);
    const std::string tag = "structure-L" + std::to_string(stage.source_level);
    double prev = total_cost(*state, pyramids, cache, kernel).total();
    for (int it = 0; it < opt.outer_iterations; ++it) {
      const auto it0 = Clock::now();
      const long moved = run_epis(state, pyramids, cache, kernel, opt);
      const CostBreakdown cb = total_cost(*state, pyramids, cache, kernel);
      if (!std::isfinite(cb.total())) {
        throw std::runtime_error("optimize: non-finite cost in stage " + tag);
      }
      result.log.push_back({tag, it, 0.0, cb.total(), moved > 0, cb.invalid_blocks,
                            std::chrono::duration<double>(Clock::now() - it0).count(), 0});
      // Stop once the per-landmark passes stall or barely move the total.
      const bool stalled = moved == 0 || cb.total() > prev - 1e-6 * std::abs(prev);
      prev = cb.total();
      if (stalled) {
        break;
      }
    }
    (void)t0;
  }

  for (const StageParams& stage_in : stages) {
    StageParams stage = stage_in;
    stage.fixed_scale = opt.fixed_scale;
    stage.undistort_steps = opt.undistort_steps;
    const StageCache cache = build_stage_cache(*state, pyramids, stage, opt.mode);
    const std::string tag = "joint-L" + std::to_string(stage.source_level);

    DampingState damping;
    damping.init(L);
    double prev = total_cost(*state, pyramids, cache, kernel).total();
    bool converged = false;

    for (int it = 0; it < opt.outer_iterations && !converged; ++it) {
      const auto it0 = Clock::now();
      ReducedCameraSystem rcs;
      if (camera_part) {
        rcs = accumulate_rcs(*state, pyramids, cache, layout, opt, apply_projector);
      }
      const ProblemState snapshot = *state;
      // Candidates are compared against the current state through the current
      // state's valid-block set; blocks a candidate pushes out of view are
      // charged, so a step cannot win the comparison by shedding residuals.
      const std::vector<std::vector<char>> mask = valid_block_mask(*state, pyramids, cache);
      const double prev_masked = total_cost_on_mask(*state, pyramids, cache, kernel, mask);
      const double scale = 1.0 + parameter_scale(*state);
      bool accepted = false;
      int retries = 0;
      double cost_after = prev;

      while (true) {
        double step_inf = 0.0;
        // An unfactorable or non-finite trial is handled like any other bad
        // step: restore, raise the damping, retry.
        bool usable = true;
        if (camera_part) {
          Eigen::VectorXd delta;
          try {
            delta = solve_camera_update(rcs, *state, layout, damping.lambda);
          } catch (const std::runtime_error&) {
            usable = false;
          }
          if (usable && !delta.allFinite()) {
            usable = false;
          }
          if (usable) {
            step_inf = delta.cwiseAbs().maxCoeff();
            apply_camera_delta(state, layout, delta);
          }
        }
        double cand_masked = std::numeric_limits<double>::infinity();
        if (usable) {
          if (structure_part) {
            run_epis(state, pyramids, cache, kernel, opt);
          }
          const CostBreakdown cb = total_cost(*state, pyramids, cache, kernel);
          if (std::isfinite(cb.total())) {
            cost_after = cb.total();
            cand_masked = total_cost_on_mask(*state, pyramids, cache, kernel, mask);
          }
        }
        if (cand_masked < prev_masked) {
          damping.on_accept();
          accepted = true;
          prev = cost_after;
          break;
        }
        *state = snapshot;
        damping.on_reject();
        // A step this small can no longer change the cost: the stage is done.
        if (usable && camera_part && step_inf <= 1e-14 * scale) {
          converged = true;
          break;
        }
        if (!camera_part) {
          // Structure alone could not decrease the cost; nothing will change.
          converged = true;
          break;
        }
        if (++retries >= opt.max_retries) {
          break;
        }
      }

      result.log.push_back({tag, it, damping.lambda, accepted ? prev : cost_after, accepted,
                            rcs.invalid_blocks,
                            std::chrono::duration<double>(Clock::now() - it0).count(), retries});
    }

    // With this stage's cameras settled, give stranded landmarks their exit:
    // re-descend each entry hypothesis and keep it where it beats the
    // current plane.
    if (structure_part) {
      const auto r0 = Clock::now();
      revert_regressed_landmarks(state, pyramids, cache, kernel, entry_planes, opt);
      const CostBreakdown cb = total_cost(*state, pyramids, cache, kernel);
      result.log.push_back({"repair-L" + std::to_string(stage.source_level), 0, 0.0, cb.total(),
                            true, cb.invalid_blocks,
                            std::chrono::duration<double>(Clock::now() - r0).count(), 0});
    }
  }

  // Final cost at the last stage's resolution.
  StageParams stage = stages.back();
  stage.fixed_scale = opt.fixed_scale;
  stage.undistort_steps = opt.undistort_steps;
  const StageCache cache = build_stage_cache(*state, pyramids, stage, opt.mode);
  result.final_cost = total_cost(*state, pyramids, cache, kernel);
  return result;
}

void write_iteration_csv(const std::string& path, const std::vector<IterationLog>& log) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open log file: " + path);
  }
  out << "stage,iteration,lambda,cost,accepted,invalid_blocks,wall_time_s,retries\n";
  out.precision(17);
  for (const IterationLog& row : log) {
    out << row.stage << ',' << row.iteration << ',' << row.lambda << ',' << row.cost << ','
        << (row.accepted ? 1 : 0) << ',' << row.invalid_blocks << ',' << row.wall_time_s << ','
        << row.retries << '\n';
  }
}

}  // namespace pba
