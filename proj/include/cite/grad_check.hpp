#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cite/tape.hpp"

namespace cite {

// One evaluation of a scalar loss.
struct LossEval {
  double loss = 0.0;
  // Tape::kink_signature() of the forward pass.
  std::uint64_t kink_signature = 0;
  // Optional additive decomposition of `loss`. When both stencil points
  // provide one, the difference is taken term by term, which keeps the
  // rounding error at the scale of the terms instead of the total.
  std::vector<double> terms;
};

// Evaluates the loss at the current parameter values. When `with_backward`
// is true it must also add the analytic gradient into each Parameter::grad.
using LossFn = std::function<LossEval(bool with_backward)>;

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t samples_per_tensor = 200;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  // Coordinates whose +-h stencil crosses a ReLU/|.| kink.
  std::size_t skipped = 0;
};

// Compares analytic gradients with central differences on a random subsample
// of each tensor (all coordinates when the tensor is small enough). The
// relative error of one coordinate is |ga - gn| / max(|ga|, |gn|, 1e-8).
// NumericError on a non-finite loss.
GradCheckResult grad_check(const LossFn& loss_fn, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

}  // namespace cite
