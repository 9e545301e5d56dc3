#pragma once

#include <optional>
#include <vector>

#include "photoba/photocost.hpp"
#include "photoba/scene.hpp"

namespace pba {

struct BlockDerivativeCheck {
  double max_rel_error = 0.0;
  int worst_lane = -1;
  int worst_output = -1;
  long compared = 0;   ///< (output, lane) pairs checked
  long one_sided = 0;  ///< lanes straddling an interpolation-cell boundary
};

/// Compares the automatic derivatives of one landmark/target residual block
/// against central finite differences over all 27 parameter lanes (source
/// pose, target pose, source camera, target camera, plane). When source and
/// target share a camera the shared lanes carry the summed derivative and the
/// spare lanes must differentiate to zero, which the check also verifies.
/// Returns nothing if the block is invalid at the linearization point.
std::optional<BlockDerivativeCheck> check_block_derivatives(
    const ProblemState& state, const std::vector<Pyramid>& pyramids, const StageCache& cache,
    int landmark, int target_index, double step);

}  // namespace pba
