#pragma once

#include <optional>
#include <vector>

#include "cite/tape.hpp"

// Differentiable layers recorded on a Tape. Every op validates shapes and
// throws DimensionError on mismatch.
namespace cite {

enum class Mode { kTrain, kInfer };

struct BatchNormState {
  Parameter gamma;
  Parameter beta;
  Matrix running_mean;
  Matrix running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  BatchNormState(const std::string& prefix, std::size_t width);
};

// out = x W + b, with x: n x d, W: d x m, b: 1 x m (optional).
Var affine(Tape& t, Var x, Var w, std::optional<Var> b = std::nullopt);

// max(0, x); subgradient at 0 is 0.
Var relu(Tape& t, Var x);

// Per-column normalization. Train mode uses population batch statistics
// (n >= 2, else ValidationError) and updates the running stats with
// momentum unless `update_running` is false; infer mode uses the running
// stats only.
Var batch_norm(Tape& t, Var x, BatchNormState& state, Mode mode, bool update_running = true);

// Each row divided by max(||row||_2, eps).
Var l2_normalize_rows(Tape& t, Var x, double eps = 1e-10);

Var hadamard(Tape& t, Var a, Var b);

// Max-shifted row softmax.
Var softmax_rows(Tape& t, Var x);

// Embedding fusion: out[n, :] = sum_k u[n, k] * c_k[n, :].
Var fuse(Tape& t, const std::vector<Var>& cond, Var u);

// Sum over unmasked entries of log(1 + exp(-y x)). Labels must be +1/-1;
// mask (same shape, 0 = skip) is optional. Returns a 1x1 node.
Var logistic_loss(Tape& t, Var scores, const Matrix& labels, const Matrix* mask = nullptr);

// Sum of |x|; 1x1 node.
Var l1_norm(Tape& t, Var x);

// a + scale * b for 1x1 nodes.
Var add_scaled(Tape& t, Var a, Var b, double scale);

// Scalar helpers shared with the oracles and the loss code.
double softplus(double z);
double sigmoid(double z);

}  // namespace cite
