#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "cite/matrix.hpp"

namespace cite {

// A trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

enum class OpKind {
  kConstant,
  kParameter,
  kAffine,
  kRelu,
  kBatchNorm,
  kL2Normalize,
  kHadamard,
  kSoftmax,
  kFuse,
  kLogisticLoss,
  kL1Norm,
  kAddScaled,
};

// Linear record of a forward pass. Nodes are appended in forward order and
// backward() walks them in exact reverse order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With track_params == false, param() records a read-only reference and
  // never writes to the Parameter (used for inference on shared models).
  explicit Tape(bool track_params = true) : track_params_(track_params) {}

  Var constant(Matrix value);
  // Records a reference to p.value; p must outlive the tape.
  Var param(Parameter& p);
  Var param(const Parameter& p);

  // Appends an op node. `inputs` decide whether it requires a gradient.
  Var record(OpKind kind, Matrix value, const std::vector<Var>& inputs, BackwardFn backward);

  const Matrix& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v; zero matrix if unreached.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Accumulates into the gradient of node `v` (used by op backward fns).
  Matrix& grad_buffer(Var v);

  // Reverse pass from a 1x1 node. Parameter gradients are *added* into
  // Parameter::grad; callers zero them beforehand. StateError if the tape
  // is empty or the target is not a recorded scalar.
  void backward(Var loss, double loss_grad = 1.0);
  bool backward_done() const { return backward_done_; }

  // Order in which the last backward() visited op nodes (for tests).
  const std::vector<std::size_t>& backward_order() const { return backward_order_; }

  // Hash of the sign patterns at every non-differentiable point source
  // (ReLU inputs, L1 arguments). Two forward passes with equal signatures
  // lie in the same smooth piece of the loss.
  std::uint64_t kink_signature() const { return kink_hash_; }
  void mix_kink(const Matrix& x);

 private:
  struct Node {
    OpKind kind;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    const Matrix* ref = nullptr;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // stable references across appends
  std::vector<std::size_t> backward_order_;
  std::uint64_t kink_hash_ = 1469598103934665603ull;
  bool backward_done_ = false;
  bool track_params_ = true;
};

}  // namespace cite
