#include "cite/tape.hpp"

#include "cite/error.hpp"

namespace cite {

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), {}, false, nullptr, nullptr, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (!track_params_) return param(static_cast<const Parameter&>(p));
  nodes_.push_back(Node{OpKind::kParameter, {}, {}, true, &p, &p.value, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
  nodes_.push_back(Node{OpKind::kParameter, {}, {}, false, nullptr, &p.value, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(OpKind kind, Matrix value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) {
    if (!in.valid() || in.id >= nodes_.size()) throw StateError("tape: input not recorded");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(value), {}, needs, nullptr, nullptr, std::move(backward)});
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw StateError("tape: unknown value");
  const Node& n = nodes_[v.id];
  return n.ref != nullptr ? *n.ref : n.value;
}

const Matrix& Tape::grad(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw StateError("tape: unknown value");
  return const_cast<Tape*>(this)->grad_buffer(v);
}

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
OpKind Tape::kind(Var v) const { return nodes_.at(v.id).kind; }

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  const Matrix& val = n.ref != nullptr ? *n.ref : n.value;
  if (!n.grad.same_shape(val)) n.grad = Matrix(val.rows(), val.cols());
  return n.grad;
}

void Tape::backward(Var loss, double loss_grad) {
  if (nodes_.empty()) throw StateError("backward called before any forward pass");
  if (!loss.valid() || loss.id >= nodes_.size()) throw StateError("backward: unknown loss node");
  if (value(loss).size() != 1) throw StateError("backward: loss must be a scalar");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad) {
      const Matrix& val = value(Var{i});
      nodes_[i].grad = Matrix(val.rows(), val.cols());
    }
  }
  grad_buffer(loss)[0] = loss_grad;
  backward_order_.clear();
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.param != nullptr) {
      Matrix& pg = n.param->grad;
      if (!pg.same_shape(*n.ref)) pg = Matrix(n.ref->rows(), n.ref->cols());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      continue;
    }
    if (n.backward) {
      backward_order_.push_back(i);
      n.backward(*this, i);
    }
  }
  backward_done_ = true;
}

void Tape::mix_kink(const Matrix& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::uint64_t s = x[i] > 0.0 ? 1u : (x[i] < 0.0 ? 2u : 3u);
    kink_hash_ = (kink_hash_ ^ s) * 1099511628211ull;
  }
}

}  // namespace cite
