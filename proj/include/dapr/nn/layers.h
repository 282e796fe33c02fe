#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dapr/nn/ops.h"
#include "dapr/nn/param_vector.h"
#include "dapr/nn/tape.h"

namespace dapr::nn {

enum class Activation { kIdentity, kTanh, kSigmoid, kSoftplus };

Var activate(Var x, Activation act);
Tensor activate(const Tensor& x, Activation act);

// Registers "<prefix>.W" [out, in] and "<prefix>.b" [out].
void add_dense(ParamVector& params, const std::string& prefix, std::size_t in,
               std::size_t out);

struct Dense {
  Var w;
  Var b;

  static Dense bind(Tape& tape, ParamVector& params, const std::string& prefix);
  // Weights enter the tape as constants: no gradient flows back to `params`.
  static Dense bind_constant(Tape& tape, const ParamVector& params, const std::string& prefix);
  Var operator()(Var x) const { return affine(x, w, b); }
};

// Fully connected stack: hidden layers use `hidden_act`, the output layer is
// linear. An empty hidden list gives a single affine map.
struct MlpSpec {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;
  Activation hidden_act = Activation::kTanh;
};

void add_mlp(ParamVector& params, const std::string& prefix, const MlpSpec& spec);

struct Mlp {
  std::vector<Dense> layers;
  Activation hidden_act = Activation::kTanh;

  static Mlp bind(Tape& tape, ParamVector& params, const std::string& prefix,
                  const MlpSpec& spec);
  static Mlp bind_constant(Tape& tape, const ParamVector& params, const std::string& prefix,
                           const MlpSpec& spec);
  Var operator()(Var x) const;
};

// Gated recurrent unit:
//   u = sigmoid(W_u [h, x] + b_u)
//   r = sigmoid(W_r [h, x] + b_r)
//   c = tanh(W_h [r*h, x] + b_h)
//   h' = (1 - u) * h + u * c
void add_gru(ParamVector& params, const std::string& prefix, std::size_t input,
             std::size_t hidden);

struct GruCell {
  Dense update;
  Dense reset;
  Dense candidate;
  std::size_t input = 0;
  std::size_t hidden = 0;

  static GruCell bind(Tape& tape, ParamVector& params, const std::string& prefix);
  Var operator()(Var h_prev, Var x) const;
};

Var gru_cell(const GruCell& cell, Var h_prev, Var x);

// Elman cell, h' = tanh(W [h, x] + b). Used as the loss-curve baseline.
void add_rnn(ParamVector& params, const std::string& prefix, std::size_t input,
             std::size_t hidden);

struct RnnCell {
  Dense step;
  std::size_t input = 0;
  std::size_t hidden = 0;

  static RnnCell bind(Tape& tape, ParamVector& params, const std::string& prefix);
  Var operator()(Var h_prev, Var x) const;
};

// LSTM baseline. The state is [h, c] packed into one vector of 2*hidden.
void add_lstm(ParamVector& params, const std::string& prefix, std::size_t input,
              std::size_t hidden);

struct LstmCell {
  Dense input_gate;
  Dense forget_gate;
  Dense output_gate;
  Dense cell_gate;
  std::size_t input = 0;
  std::size_t hidden = 0;

  static LstmCell bind(Tape& tape, ParamVector& params, const std::string& prefix);
  Var operator()(Var state_prev, Var x) const;
};

}  // namespace dapr::nn
