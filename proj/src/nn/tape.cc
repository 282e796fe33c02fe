#include "dapr/nn/tape.h"

#include <string>

namespace dapr::nn {

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  nodes_.push_back({std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamVector& params, std::string_view segment) {
  const Segment& seg = params.segment(segment);
  const std::size_t offset = seg.offset;
  Tensor value = params.tensor(segment);
  if (!value.all_finite()) {
    throw NumericError("non-finite parameter in segment '" + std::string(segment) + "'");
  }
  ParamVector* owner = &params;
  Backprop bp = [owner, offset](Tape&, std::span<const double> g) {
    auto grads = owner->grads();
    for (std::size_t i = 0; i < g.size(); ++i) grads[offset + i] += g[i];
  };
  nodes_.push_back({std::move(value), {}, std::move(bp), true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop,
                 std::string_view op) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backprop), op);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backprop backprop,
                 std::string_view op) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op));
  }
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("mixing vars from different tapes");
    needs = needs || nodes_[in.id()].needs_grad;
  }
  nodes_.push_back({std::move(value), {}, needs ? std::move(backprop) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_[v.id()];
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor(node.value.shape(), node.grad);
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     shape_string(loss.value().shape()));
  }
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.grad.empty() || !node.backprop) continue;
    node.backprop(*this, node.grad);
  }
}

}  // namespace dapr::nn
