#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "dapr/nn/param_vector.h"
#include "dapr/nn/tensor.h"

namespace dapr::nn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. One tape per forward pass: record, call backward() once,
// then drop the tape. Parameter leaves write their gradients straight into the
// owning ParamVector (accumulating, so callers zero grads first).
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(ParamVector& params, std::string_view segment);

  // Records an op result. Throws NumericError if the value is not finite.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop,
             std::string_view op);
  Var record(Tensor value, const std::vector<Var>& inputs, Backprop backprop,
             std::string_view op);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node, allocated on first use.
  std::vector<double>& grad_buffer(std::size_t id);
  // Gradient after backward(); zeros if nothing flowed into the node.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backprop backprop;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace dapr::nn
