#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dapr/nn/adam.h"
#include "dapr/nn/layers.h"
#include "dapr/nn/ops.h"
#include "dapr/nn/param_vector.h"
#include "dapr/nn/tape.h"
#include "test_util.h"

namespace dapr::nn {
namespace {

using testing::max_fd_error;
using testing::random_vector;

// Scalar re-implementation of the GRU equations, independent of the tape.
std::vector<double> gru_oracle(const ParamVector& p, const std::string& prefix,
                               const std::vector<double>& h, const std::vector<double>& x) {
  const std::size_t H = h.size(), I = x.size();
  auto gate = [&](const std::string& name, const std::vector<double>& hv) {
    auto w = p.values(prefix + "." + name + ".W");
    auto b = p.values(prefix + "." + name + ".b");
    std::vector<double> out(H);
    for (std::size_t o = 0; o < H; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < H; ++i) acc += w[o * (H + I) + i] * hv[i];
      for (std::size_t i = 0; i < I; ++i) acc += w[o * (H + I) + H + i] * x[i];
      out[o] = acc;
    }
    return out;
  };
  auto u = gate("u", h);
  auto r = gate("r", h);
  for (auto& v : u) v = 1.0 / (1.0 + std::exp(-v));
  for (auto& v : r) v = 1.0 / (1.0 + std::exp(-v));
  std::vector<double> rh(H);
  for (std::size_t i = 0; i < H; ++i) rh[i] = r[i] * h[i];
  auto c = gate("h", rh);
  std::vector<double> out(H);
  for (std::size_t i = 0; i < H; ++i) out[i] = (1 - u[i]) * h[i] + u[i] * std::tanh(c[i]);
  return out;
}

TEST(Affine, IdentityCase) {
  Tensor y = affine(Tensor::vector({1, 2}), Tensor::matrix(2, 2, {1, 0, 0, 1}),
                    Tensor::vector({0, 0}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2}));
}

TEST(Affine, CancellingBias) {
  Tensor y = affine(Tensor::vector({1, 1}), Tensor::matrix(1, 2, {2, 3}), Tensor::vector({-5}));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 0.0);
}

TEST(Affine, MatchesNaiveLoop) {
  std::mt19937_64 rng(7);
  auto w = random_vector(rng, 12);
  auto x = random_vector(rng, 4);
  auto b = random_vector(rng, 3);
  Tensor y = affine(Tensor::vector(x), Tensor::matrix(3, 4, w), Tensor::vector(b));
  for (std::size_t o = 0; o < 3; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) acc += w[o * 4 + i] * x[i];
    EXPECT_NEAR(y[o], acc + b[o], 1e-12);
  }
}

TEST(Affine, BatchedRowsMatchSingle) {
  std::mt19937_64 rng(8);
  auto w = Tensor::matrix(3, 2, random_vector(rng, 6));
  auto b = Tensor::vector(random_vector(rng, 3));
  auto xs = random_vector(rng, 4);
  Tensor y = affine(Tensor::matrix(2, 2, xs), w, b);
  Tensor y0 = affine(Tensor::vector({xs[0], xs[1]}), w, b);
  Tensor y1 = affine(Tensor::vector({xs[2], xs[3]}), w, b);
  for (std::size_t o = 0; o < 3; ++o) {
    EXPECT_DOUBLE_EQ(y.at(0, o), y0[o]);
    EXPECT_DOUBLE_EQ(y.at(1, o), y1[o]);
  }
}

TEST(Affine, ShapeMismatchThrows) {
  EXPECT_THROW(affine(Tensor::vector({1, 2, 3}), Tensor::matrix(2, 2, {1, 0, 0, 1}),
                      Tensor::vector({0, 0})),
               ShapeError);
}

TEST(GruCell, ZeroWeightsHalveState) {
  ParamVector p;
  add_gru(p, "g", 2, 3);
  Tape tape;
  auto cell = GruCell::bind(tape, p, "g");
  Var h = tape.constant(Tensor::vector({0.4, -0.8, 1.0}));
  Var x = tape.constant(Tensor::vector({3.0, -2.0}));
  Var out = gru_cell(cell, h, x);
  EXPECT_NEAR(out.value()[0], 0.2, 1e-15);
  EXPECT_NEAR(out.value()[1], -0.4, 1e-15);
  EXPECT_NEAR(out.value()[2], 0.5, 1e-15);
}

TEST(GruCell, SaturatedUpdateGatePassesCandidate) {
  ParamVector p;
  add_gru(p, "g", 2, 2);
  std::mt19937_64 rng(3);
  testing::randomize(p, rng);
  for (auto& b : p.values("g.u.b")) b = 60.0;
  std::vector<double> x{0.3, -0.7};
  Tape tape;
  auto cell = GruCell::bind(tape, p, "g");
  Var out = cell(tape.constant(Tensor::vector({0, 0})), tape.constant(Tensor::vector(x)));
  // With h_prev = 0 and u = 1 the output is tanh(W_h[0, x] + b_h).
  auto w = p.values("g.h.W");
  auto b = p.values("g.h.b");
  for (std::size_t o = 0; o < 2; ++o) {
    const double cand = std::tanh(w[o * 4 + 2] * x[0] + w[o * 4 + 3] * x[1] + b[o]);
    EXPECT_NEAR(out.value()[o], cand, 1e-12);
  }
}

TEST(GruCell, MatchesScalarOracle) {
  ParamVector p;
  add_gru(p, "g", 3, 4);
  std::mt19937_64 rng(11);
  testing::randomize(p, rng, 1.0);
  auto h = random_vector(rng, 4);
  auto x = random_vector(rng, 3);
  Tape tape;
  Var out = GruCell::bind(tape, p, "g")(tape.constant(Tensor::vector(h)),
                                         tape.constant(Tensor::vector(x)));
  auto expect = gru_oracle(p, "g", h, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.value()[i], expect[i], 1e-12);
}

TEST(GruCell, ShapeMismatchThrows) {
  ParamVector p;
  add_gru(p, "g", 3, 4);
  Tape tape;
  auto cell = GruCell::bind(tape, p, "g");
  EXPECT_THROW(cell(tape.constant(Tensor::vector({0, 0})),
                    tape.constant(Tensor::vector({1, 2, 3}))),
               ShapeError);
}

TEST(GruCell, OutputBoundedByConvexCombination) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ParamVector p;
    add_gru(p, "g", 3, 4);
    testing::randomize(p, rng, 3.0);
    auto h = random_vector(rng, 4, -2.0, 2.0);
    double bound = 1.0;
    for (double v : h) bound = std::max(bound, std::abs(v));
    Tape tape;
    Var out = GruCell::bind(tape, p, "g")(tape.constant(Tensor::vector(h)),
                                           tape.constant(Tensor::vector(random_vector(rng, 3))));
    for (double v : out.value().data()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Softmax, SymmetricInputIsUniform) {
  Tensor y = softmax(Tensor::vector({0, 0, 0}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tensor y = softmax(Tensor::vector({1000, 0}));
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_GE(y[1], 0.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, MatchesDirectFormula) {
  Tensor y = softmax(Tensor::vector({1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(y[1], std::exp(2.0) / z, 1e-12);
  EXPECT_NEAR(y[2], std::exp(3.0) / z, 1e-12);
}

TEST(Softmax, EmptyThrows) { EXPECT_THROW(softmax(Tensor(Shape{0})), ShapeError); }

TEST(Softmax, AlwaysADistribution) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto v = random_vector(rng, 1 + trial % 17, -30.0, 30.0);
    Tensor y = softmax(Tensor::vector(v));
    double s = 0.0;
    for (double p : y.data()) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0 + 1e-15);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Mse, Examples) {
  EXPECT_EQ(mse(Tensor::vector({0.3, 2}), Tensor::vector({0.3, 2})), 0.0);
  EXPECT_EQ(mse(Tensor::vector({1, 1}), Tensor::vector({0, 0})), 1.0);
  std::mt19937_64 rng(4);
  auto a = random_vector(rng, 9);
  auto b = random_vector(rng, 9);
  double s = 0.0;
  for (std::size_t i = 0; i < 9; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(mse(Tensor::vector(a), Tensor::vector(b)), s / 9.0, 1e-15);
  EXPECT_THROW(mse(Tensor::vector({1}), Tensor::vector({1, 2})), ShapeError);
}

TEST(KlGauss, Examples) {
  EXPECT_EQ(kl_gauss(Tensor::vector({0, 0}), Tensor::vector({1, 1})), 0.0);
  EXPECT_NEAR(kl_gauss(Tensor::vector({1}), Tensor::vector({1})), 0.5, 1e-15);
  const double expect = 0.5 * ((0.25 + 4 - std::log(4.0) - 1) + (0.25 + 0.25 - std::log(0.25) - 1));
  EXPECT_NEAR(kl_gauss(Tensor::vector({0.5, -0.5}), Tensor::vector({2, 0.5})), expect, 1e-14);
  EXPECT_THROW(kl_gauss(Tensor::vector({0}), Tensor::vector({0})), std::invalid_argument);
  EXPECT_THROW(kl_gauss(Tensor::vector({0}), Tensor::vector({-1})), std::invalid_argument);
}

TEST(Backward, AffineMseMatchesFiniteDifferences) {
  ParamVector p;
  add_dense(p, "lin", 2, 2);
  std::mt19937_64 rng(21);
  testing::randomize(p, rng, 1.0);
  const Tensor x = Tensor::vector({0.7, -1.3});
  const Tensor y = Tensor::vector({0.2, 0.5});
  auto loss = [&] {
    Tape t;
    return mse(Dense::bind(t, p, "lin")(t.constant(x)), t.constant(y)).value().item();
  };
  p.zero_grads();
  Tape tape;
  Var l = mse(Dense::bind(tape, p, "lin")(tape.constant(x)), tape.constant(y));
  tape.backward(l);
  std::vector<double> g(p.grads().begin(), p.grads().end());
  EXPECT_LT(max_fd_error(p, g, loss), 1e-4);
}

TEST(Backward, UnusedSegmentGetsZeroGradient) {
  ParamVector p;
  add_dense(p, "used", 2, 1);
  add_dense(p, "unused", 2, 1);
  std::mt19937_64 rng(1);
  testing::randomize(p, rng);
  Tape tape;
  Var l = sum(Dense::bind(tape, p, "used")(tape.constant(Tensor::vector({1, 2}))));
  tape.backward(l);
  for (double g : p.grads("unused.W")) EXPECT_EQ(g, 0.0);
  for (double g : p.grads("unused.b")) EXPECT_EQ(g, 0.0);
  EXPECT_NE(p.grads("used.W")[1], 0.0);
}

TEST(Backward, GruChainMatchesFiniteDifferences) {
  ParamVector p;
  add_gru(p, "g", 3, 4);
  add_dense(p, "head", 4, 2);
  std::mt19937_64 rng(13);
  testing::randomize(p, rng, 0.8);
  std::vector<Tensor> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(Tensor::vector(random_vector(rng, 3)));
  const Tensor target = Tensor::vector({0.1, 0.9});
  auto forward = [&](Tape& t) {
    auto cell = GruCell::bind(t, p, "g");
    Var h = t.constant(Tensor(Shape{4}, 0.0));
    for (const auto& x : xs) h = cell(h, t.constant(x));
    return mse(softmax(Dense::bind(t, p, "head")(h)), t.constant(target));
  };
  auto loss = [&] {
    Tape t;
    return forward(t).value().item();
  };
  p.zero_grads();
  Tape tape;
  tape.backward(forward(tape));
  std::vector<double> g(p.grads().begin(), p.grads().end());
  EXPECT_LT(max_fd_error(p, g, loss), 1e-4);
}

TEST(Backward, ElementwiseOpsMatchFiniteDifferences) {
  ParamVector p;
  p.add_segment("a", {4});
  p.add_segment("b", {4});
  std::mt19937_64 rng(17);
  testing::randomize(p, rng, 1.0);
  auto forward = [&](Tape& t) {
    Var a = t.param(p, "a");
    Var b = t.param(p, "b");
    Var m = minimum(mul(a, b), softplus(a));
    Var s = add(log_sigmoid(b), exp(scale(a, 0.3)));
    Var k = kl_gauss(tanh(a), add_scalar(softplus(b), 0.1));
    Var both = concat({m, s, slice(sub(a, b), 1, 2)});
    return add(mean(square(both)), k);
  };
  auto loss = [&] {
    Tape t;
    return forward(t).value().item();
  };
  p.zero_grads();
  Tape tape;
  tape.backward(forward(tape));
  std::vector<double> g(p.grads().begin(), p.grads().end());
  EXPECT_LT(max_fd_error(p, g, loss), 1e-4);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  ParamVector p;
  p.add_segment("w", {3});
  Var w = tape.param(p, "w");
  EXPECT_THROW(tape.backward(w), ShapeError);
}

TEST(Tape, NonFiniteActivationAborts) {
  Tape tape;
  Var z = tape.constant(Tensor::vector({0.0, 1.0}));
  EXPECT_THROW(log(z), NumericError);
  EXPECT_THROW(exp(tape.constant(Tensor::vector({1e6}))), NumericError);
}

TEST(Tape, EmbeddingRowOutOfRangeThrows) {
  Tape tape;
  Var table = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(row(table, 1).value().values(), (std::vector<double>{4, 5, 6}));
  EXPECT_THROW(row(table, 2), std::out_of_range);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamVector p;
  p.add_segment("w", {3});
  p.values()[0] = 0.5;
  p.values()[2] = -2.0;
  std::vector<double> before(p.values().begin(), p.values().end());
  AdamState st(p.size());
  for (int i = 0; i < 10; ++i) adam_update(p, st, 0.01);
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamVector p;
  p.add_segment("w", {1});
  p.grads()[0] = 1.0;
  AdamState st(p.size());
  adam_update(p, st, 0.01);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.values()[0], -0.01 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.grads()[0], 1.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamVector p;
  p.add_segment("w", {1});
  p.values()[0] = 1.0;
  AdamState st(p.size());
  for (int i = 0; i < 100; ++i) {
    p.grads()[0] = 2.0 * p.values()[0];
    adam_update(p, st, 0.1);
  }
  EXPECT_LT(std::abs(p.values()[0]), 0.1);
  EXPECT_EQ(st.steps(), 100u);
}

TEST(Adam, RejectsNonPositiveLearningRate) {
  ParamVector p;
  p.add_segment("w", {1});
  AdamState st(p.size());
  EXPECT_THROW(adam_update(p, st, 0.0), std::invalid_argument);
  EXPECT_THROW(adam_update(p, st, -1e-3), std::invalid_argument);
}

TEST(Adam, FilterSkipsFrozenSegments) {
  ParamVector p;
  p.add_segment("frozen", {2});
  p.add_segment("live", {2});
  for (auto& g : p.grads()) g = 1.0;
  AdamState st(p.size());
  adam_update(p, st, 0.1, [](const Segment& s) { return s.name != "frozen"; });
  EXPECT_EQ(p.values("frozen")[0], 0.0);
  EXPECT_LT(p.values("live")[0], 0.0);
}

TEST(ParamVector, SegmentsTileTheArray) {
  ParamVector p;
  add_gru(p, "g", 3, 4);
  add_mlp(p, "m", {5, {6, 7}, 2});
  std::size_t expect = 0;
  for (const auto& s : p.segments()) {
    EXPECT_EQ(s.offset, expect);
    expect += s.size();
  }
  EXPECT_EQ(expect, p.size());
  EXPECT_THROW(p.add_segment("g.u.W", {1}), std::invalid_argument);
}

TEST(ParamVector, UniformInitBounds) {
  ParamVector p;
  add_dense(p, "d", 10, 6);
  std::mt19937_64 rng(9);
  p.init_uniform(rng);
  const double a = std::sqrt(6.0 / 16.0);
  for (double w : p.values("d.W")) EXPECT_LE(std::abs(w), a);
  for (double b : p.values("d.b")) EXPECT_EQ(b, 0.0);
}

TEST(ParamVector, SerializationRoundTripsBitExact) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    ParamVector p;
    add_mlp(p, "net", {static_cast<std::size_t>(1 + trial % 4), {3}, 2});
    p.add_segment("extra", {2, 2, 2});
    testing::randomize(p, rng, 1e3);
    p.values()[0] = -0.0;
    auto bytes = p.serialize();
    EXPECT_EQ(bytes.size(), p.serialized_size());
    ParamVector q = ParamVector::deserialize(bytes);
    ASSERT_TRUE(p.same_layout(q));
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(p.values()[i]),
                std::bit_cast<std::uint64_t>(q.values()[i]));
    }
  }
}

TEST(ParamVector, WireLayoutIsLengthPrefixedJsonThenLittleEndianDoubles) {
  ParamVector p;
  p.add_segment("w", {1});
  p.values()[0] = 1.0;  // 0x3FF0000000000000
  auto bytes = p.serialize();
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= std::uint64_t(bytes[i]) << (8 * i);
  std::string header(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  EXPECT_NE(header.find("\"segments\""), std::string::npos);
  ASSERT_EQ(bytes.size(), 8 + header_len + 8);
  EXPECT_EQ(bytes[8 + header_len + 7], 0x3F);
  EXPECT_EQ(bytes[8 + header_len + 6], 0xF0);
  EXPECT_EQ(bytes[8 + header_len], 0x00);
}

TEST(ParamVector, DeserializeRejectsCorruptInput) {
  ParamVector p;
  p.add_segment("w", {2});
  auto bytes = p.serialize();
  bytes.pop_back();
  EXPECT_THROW(ParamVector::deserialize(bytes), std::runtime_error);
  EXPECT_THROW(ParamVector::deserialize(std::vector<std::uint8_t>{1, 2, 3}), std::runtime_error);
}

}  // namespace
}  // namespace dapr::nn
