#include "dapr/nn/layers.h"

#include <cmath>

#include <stdexcept>

namespace dapr::nn {

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kTanh: return tanh(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kSoftplus: return softplus(x);
  }
  throw std::logic_error("unknown activation");
}

void add_dense(ParamVector& params, const std::string& prefix, std::size_t in,
               std::size_t out) {
  params.add_segment(prefix + ".W", {out, in});
  params.add_segment(prefix + ".b", {out});
}

Dense Dense::bind(Tape& tape, ParamVector& params, const std::string& prefix) {
  return {tape.param(params, prefix + ".W"), tape.param(params, prefix + ".b")};
}

Dense Dense::bind_constant(Tape& tape, const ParamVector& params, const std::string& prefix) {
  return {tape.constant(params.tensor(prefix + ".W")), tape.constant(params.tensor(prefix + ".b"))};
}

Tensor activate(const Tensor& x, Activation act) {
  Tensor y = x;
  for (auto& v : y.data()) {
    switch (act) {
      case Activation::kIdentity: break;
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kSigmoid: v = sigmoid(v); break;
      case Activation::kSoftplus: v = softplus(v); break;
    }
  }
  return y;
}

void add_mlp(ParamVector& params, const std::string& prefix, const MlpSpec& spec) {
  std::size_t in = spec.input;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    add_dense(params, prefix + ".l" + std::to_string(i), in, spec.hidden[i]);
    in = spec.hidden[i];
  }
  add_dense(params, prefix + ".out", in, spec.output);
}

Mlp Mlp::bind(Tape& tape, ParamVector& params, const std::string& prefix,
              const MlpSpec& spec) {
  Mlp m;
  m.hidden_act = spec.hidden_act;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    m.layers.push_back(Dense::bind(tape, params, prefix + ".l" + std::to_string(i)));
  }
  m.layers.push_back(Dense::bind(tape, params, prefix + ".out"));
  return m;
}

Mlp Mlp::bind_constant(Tape& tape, const ParamVector& params, const std::string& prefix,
                       const MlpSpec& spec) {
  Mlp m;
  m.hidden_act = spec.hidden_act;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    m.layers.push_back(Dense::bind_constant(tape, params, prefix + ".l" + std::to_string(i)));
  }
  m.layers.push_back(Dense::bind_constant(tape, params, prefix + ".out"));
  return m;
}

Var Mlp::operator()(Var x) const {
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) x = activate(layers[i](x), hidden_act);
  return layers.back()(x);
}

void add_gru(ParamVector& params, const std::string& prefix, std::size_t input,
             std::size_t hidden) {
  add_dense(params, prefix + ".u", hidden + input, hidden);
  add_dense(params, prefix + ".r", hidden + input, hidden);
  add_dense(params, prefix + ".h", hidden + input, hidden);
}

GruCell GruCell::bind(Tape& tape, ParamVector& params, const std::string& prefix) {
  GruCell c;
  c.update = Dense::bind(tape, params, prefix + ".u");
  c.reset = Dense::bind(tape, params, prefix + ".r");
  c.candidate = Dense::bind(tape, params, prefix + ".h");
  c.hidden = c.update.w.value().dim(0);
  c.input = c.update.w.value().dim(1) - c.hidden;
  return c;
}

namespace {

void check_step(const Var& h_prev, const Var& x, std::size_t input, std::size_t state_width,
                const char* name) {
  const Tensor& h = h_prev.value();
  const Tensor& xv = x.value();
  // Either single vectors or batches [B, n] with matching B.
  const bool ranks_ok = h.rank() == xv.rank() && (h.rank() == 1 || h.rank() == 2);
  if (!ranks_ok || h.cols() != state_width || xv.cols() != input || h.rows() != xv.rows()) {
    throw ShapeError(std::string(name) + ": expected state [" + std::to_string(state_width) +
                     "] and input [" + std::to_string(input) + "], got " +
                     shape_string(h.shape()) + " and " + shape_string(xv.shape()));
  }
}

}  // namespace

Var GruCell::operator()(Var h_prev, Var x) const {
  check_step(h_prev, x, input, hidden, "gru_cell");
  Var hx = concat({h_prev, x});
  Var u = sigmoid(update(hx));
  Var r = sigmoid(reset(hx));
  Var cand = tanh(candidate(concat({mul(r, h_prev), x})));
  return add(mul(one_minus(u), h_prev), mul(u, cand));
}

Var gru_cell(const GruCell& cell, Var h_prev, Var x) { return cell(h_prev, x); }

void add_rnn(ParamVector& params, const std::string& prefix, std::size_t input,
             std::size_t hidden) {
  add_dense(params, prefix + ".step", hidden + input, hidden);
}

RnnCell RnnCell::bind(Tape& tape, ParamVector& params, const std::string& prefix) {
  RnnCell c;
  c.step = Dense::bind(tape, params, prefix + ".step");
  c.hidden = c.step.w.value().dim(0);
  c.input = c.step.w.value().dim(1) - c.hidden;
  return c;
}

Var RnnCell::operator()(Var h_prev, Var x) const {
  check_step(h_prev, x, input, hidden, "rnn_cell");
  return tanh(step(concat({h_prev, x})));
}

void add_lstm(ParamVector& params, const std::string& prefix, std::size_t input,
              std::size_t hidden) {
  add_dense(params, prefix + ".i", hidden + input, hidden);
  add_dense(params, prefix + ".f", hidden + input, hidden);
  add_dense(params, prefix + ".o", hidden + input, hidden);
  add_dense(params, prefix + ".g", hidden + input, hidden);
}

LstmCell LstmCell::bind(Tape& tape, ParamVector& params, const std::string& prefix) {
  LstmCell c;
  c.input_gate = Dense::bind(tape, params, prefix + ".i");
  c.forget_gate = Dense::bind(tape, params, prefix + ".f");
  c.output_gate = Dense::bind(tape, params, prefix + ".o");
  c.cell_gate = Dense::bind(tape, params, prefix + ".g");
  c.hidden = c.input_gate.w.value().dim(0);
  c.input = c.input_gate.w.value().dim(1) - c.hidden;
  return c;
}

Var LstmCell::operator()(Var state_prev, Var x) const {
  check_step(state_prev, x, input, 2 * hidden, "lstm_cell");
  Var h = slice(state_prev, 0, hidden);
  Var c = slice(state_prev, hidden, hidden);
  Var hx = concat({h, x});
  Var i = sigmoid(input_gate(hx));
  Var f = sigmoid(forget_gate(hx));
  Var o = sigmoid(output_gate(hx));
  Var g = tanh(cell_gate(hx));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  return concat({h_next, c_next});
}

}  // namespace dapr::nn
