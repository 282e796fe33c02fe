#pragma once

#include <cstddef>
#include <vector>

#include "dapr/nn/tape.h"
#include "dapr/nn/tensor.h"

namespace dapr::nn {

// Scalar helpers, numerically stable.
double sigmoid(double x);
double softplus(double x);
double log_sigmoid(double x);

// Plain tensor functions (no graph).
// x is [in] or [batch, in]; W is [out, in]; b is [out].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
// Row-wise over the last dimension, max-subtracted.
Tensor softmax(const Tensor& v);
double mse(const Tensor& a, const Tensor& b);
// 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1); sigma must be > 0.
double kl_gauss(const Tensor& mu, const Tensor& sigma);

// Differentiable versions recorded on the inputs' tape.
Var affine(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var one_minus(Var a);
Var minimum(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var log_sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softmax(Var a);
// Concatenate along the last dimension; leading dimensions must agree.
Var concat(const std::vector<Var>& parts);
Var slice(Var a, std::size_t begin, std::size_t length);
// Row `index` of a [rows, cols] table, as a [cols] vector (embedding lookup).
Var row(Var table, std::size_t index);
// Batched lookup: result [indices.size(), cols].
Var gather_rows(Var table, const std::vector<std::size_t>& indices);
Var flatten(Var a);
Var sum(Var a);
Var mean(Var a);
// Sum over the last dimension: [B, C] -> [B], [C] -> [1].
Var sum_last(Var a);
Var mse(Var a, Var b);
Var kl_gauss(Var mu, Var sigma);

}  // namespace dapr::nn
