#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace vhcr;
using vhcr::testing::random_array;

namespace {

void zero_all(ParamStore& store) {
  for (std::size_t i = 0; i < store.size(); ++i)
    std::fill(store[i].value.data.begin(), store[i].value.data.end(), 0.0);
}

void randomize(ParamStore& store, Rng& rng, double scale = 1.0) {
  for (std::size_t i = 0; i < store.size(); ++i)
    for (double& v : store[i].value.data) v = scale * (2.0 * rng.uniform() - 1.0);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop GRU step, written independently of the tensor ops.
std::vector<double> gru_oracle(const GruCell& c, const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t in = c.input_dim, hd = c.hidden_dim;
  auto xw = [&](const Parameter* w, std::size_t j) {
    double s = 0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w->value.data[i * hd + j];
    return s;
  };
  auto hu = [&](const Parameter* u, const std::vector<double>& v, std::size_t j) {
    double s = 0;
    for (std::size_t i = 0; i < hd; ++i) s += v[i] * u->value.data[i * hd + j];
    return s;
  };
  std::vector<double> r(hd), out(hd);
  for (std::size_t j = 0; j < hd; ++j) r[j] = sig(xw(c.w_r, j) + hu(c.u_r, h, j) + c.b_r->value.data[j]);
  std::vector<double> rh(hd);
  for (std::size_t j = 0; j < hd; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < hd; ++j) {
    const double z = sig(xw(c.w_z, j) + hu(c.u_z, h, j) + c.b_z->value.data[j]);
    const double cand = std::tanh(xw(c.w_h, j) + hu(c.u_h, rh, j) + c.b_h->value.data[j]);
    out[j] = (1 - z) * h[j] + z * cand;
  }
  return out;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(GruStep, ZeroParametersHalveTheState) {
  ParamStore store;
  Rng rng(1);
  GruCell cell = GruCell::create(store, "g", 3, 2, rng);
  zero_all(store);
  Tape tape;
  Tensor x = tape.constant(Array::vector({0.3, -0.1, 2.0}));
  EXPECT_EQ(to_vec(gru_step(tape, cell, x, tape.constant(Array::vector({1, -1})))), (std::vector<double>{0.5, -0.5}));
  EXPECT_EQ(to_vec(gru_step(tape, cell, x, tape.constant(Array::vector({0, 0})))), (std::vector<double>{0, 0}));
}

TEST(GruStep, MatchesScalarOracle) {
  ParamStore store;
  Rng rng(2);
  GruCell cell = GruCell::create(store, "g", 3, 3, rng);
  randomize(store, rng);
  for (int trial = 0; trial < 5; ++trial) {
    Array x = random_array({3}, rng), h = random_array({3}, rng);
    Tape tape;
    auto got = to_vec(gru_step(tape, cell, tape.constant(x), tape.constant(h)));
    auto want = gru_oracle(cell, x.data, h.data);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
  }
}

TEST(GruStep, DimensionErrorNamesParameter) {
  ParamStore store;
  Rng rng(3);
  GruCell cell = GruCell::create(store, "context", 3, 2, rng);
  Tape tape;
  try {
    gru_step(tape, cell, tape.constant(Array::vector({1, 2})), tape.constant(Array::vector({0, 0})));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("context.w_z"), std::string::npos) << e.what();
  }
  try {
    gru_step(tape, cell, tape.constant(Array::vector({1, 2, 3})), tape.constant(Array::vector({0, 0, 0})));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("context.u_z"), std::string::npos) << e.what();
  }
}

TEST(GruStep, OutputWithinConvexEnvelope) {
  ParamStore store;
  Rng rng(4);
  GruCell cell = GruCell::create(store, "g", 4, 5, rng);
  for (int trial = 0; trial < 50; ++trial) {
    randomize(store, rng, 3.0);
    Array x = random_array({4}, rng, -5, 5), h = random_array({5}, rng, -3, 3);
    Tape tape;
    auto out = to_vec(gru_step(tape, cell, tape.constant(x), tape.constant(h)));
    for (std::size_t j = 0; j < 5; ++j) EXPECT_LE(std::abs(out[j]), std::max(std::abs(h.data[j]), 1.0));
  }
}

TEST(GruUnroll, EmptyAndSingleStep) {
  ParamStore store;
  Rng rng(5);
  GruCell cell = GruCell::create(store, "g", 3, 2, rng);
  Tape tape;
  Tensor h0 = tape.constant(Array::vector({0.2, -0.4}));
  GruRun empty = gru_unroll(tape, cell, tape.constant(Array(Shape{0, 3})), h0);
  EXPECT_FALSE(empty.states.valid());
  EXPECT_EQ(empty.last.id(), h0.id());

  Array x = random_array({1, 3}, rng);
  GruRun one = gru_unroll(tape, cell, tape.constant(x), h0);
  Tensor step = gru_step(tape, cell, tape.constant(Array::vector(x.data)), h0);
  EXPECT_EQ(to_vec(one.last), to_vec(step));
}

TEST(GruUnroll, BitExactWithChainedSteps) {
  ParamStore store;
  Rng rng(6);
  GruCell cell = GruCell::create(store, "g", 3, 4, rng);
  randomize(store, rng);
  Array xs = random_array({4, 3}, rng);
  Tape tape;
  Tensor h = tape.constant(random_array({4}, rng));
  GruRun run = gru_unroll(tape, cell, tape.constant(xs), h);
  for (std::size_t t = 0; t < 4; ++t) {
    Array xt = Array::vector({xs.data[t * 3], xs.data[t * 3 + 1], xs.data[t * 3 + 2]});
    h = gru_step(tape, cell, tape.constant(xt), h);
    EXPECT_EQ(to_vec(run.steps[t]), to_vec(h)) << "step " << t;
  }
  EXPECT_EQ(run.states.shape(), (Shape{4, 4}));
  EXPECT_EQ(to_vec(run.last), to_vec(h));
}

TEST(BiGru, SingleInputAndEmpty) {
  ParamStore store;
  Rng rng(7);
  BiGru net = BiGru::create(store, "conv", 3, 4, 2, rng);
  Tape tape;
  Tensor v = tape.constant(random_array({3}, rng));
  EXPECT_EQ(to_vec(bigru_encode(tape, net, {v})), to_vec(bigru_encode(tape, net, {v})));
  EXPECT_THROW(bigru_encode(tape, net, {}), ContractError);
}

TEST(BiGru, ReversingInputsSwapsDirections) {
  ParamStore store;
  Rng rng(8);
  BiGru net = BiGru::create(store, "conv", 3, 4, 2, rng);
  // Give both directions the same cell so the swap is observable exactly.
  for (const char* p : {"w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"}) {
    store.find(std::string("conv.bwd.") + p)->value = store.find(std::string("conv.fwd.") + p)->value;
  }
  Tape tape;
  std::vector<Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(tape.constant(random_array({3}, rng)));
  std::vector<Tensor> rev(xs.rbegin(), xs.rend());
  auto a = to_vec(bigru_states(tape, net, xs));
  auto b = to_vec(bigru_states(tape, net, rev));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(a[j], b[4 + j]);
    EXPECT_EQ(a[4 + j], b[j]);
  }
}

TEST(BiGru, ZeroParametersGiveFiniteOutput) {
  ParamStore store;
  Rng rng(9);
  BiGru net = BiGru::create(store, "conv", 3, 4, 2, rng);
  zero_all(store);
  Tape tape;
  auto out = to_vec(bigru_encode(tape, net, {tape.constant(random_array({3}, rng))}));
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, ZeroWeightsGiveFinalBias) {
  ParamStore store;
  Rng rng(10);
  Mlp net = Mlp::create(store, "m", 3, 5, 2, rng);
  zero_all(store);
  store.find("m.1.bias")->value = Array::vector({0.25, -1.5});
  Tape tape;
  EXPECT_EQ(to_vec(mlp_forward(tape, net, tape.constant(random_array({3}, rng)))),
            (std::vector<double>{0.25, -1.5}));
}

TEST(Mlp, UnitNetIsTanh) {
  ParamStore store;
  Rng rng(11);
  Mlp net = Mlp::create(store, "m", 1, 1, 1, rng);
  zero_all(store);
  store.find("m.0.weight")->value.data[0] = 1.0;
  store.find("m.1.weight")->value.data[0] = 1.0;
  Tape tape;
  EXPECT_NEAR(mlp_forward(tape, net, tape.constant(Array::vector({0.7}))).item(), std::tanh(0.7), 1e-15);
}

TEST(Mlp, MatchesScalarOracle) {
  ParamStore store;
  Rng rng(12);
  Mlp net = Mlp::create(store, "m", 3, 4, 2, rng);
  randomize(store, rng);
  Array x = random_array({3}, rng);
  const auto& w0 = store.find("m.0.weight")->value.data;
  const auto& b0 = store.find("m.0.bias")->value.data;
  const auto& w1 = store.find("m.1.weight")->value.data;
  const auto& b1 = store.find("m.1.bias")->value.data;
  std::vector<double> hid(4), out(2);
  for (std::size_t j = 0; j < 4; ++j) {
    double s = b0[j];
    for (std::size_t i = 0; i < 3; ++i) s += x.data[i] * w0[i * 4 + j];
    hid[j] = std::tanh(s);
  }
  for (std::size_t j = 0; j < 2; ++j) {
    out[j] = b1[j];
    for (std::size_t i = 0; i < 4; ++i) out[j] += hid[i] * w1[i * 2 + j];
  }
  Tape tape;
  auto got = to_vec(mlp_forward(tape, net, tape.constant(x)));
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(got[j], out[j], 1e-12);
  EXPECT_THROW(mlp_forward(tape, net, tape.constant(Array::vector({1, 2}))), DimensionError);
}

TEST(Blocks, PassGradientCheck) {
  ParamStore store;
  Rng rng(13);
  GruCell cell = GruCell::create(store, "gru", 3, 4, rng);
  BiGru bi = BiGru::create(store, "bi", 4, 3, 2, rng);
  Mlp mlp = Mlp::create(store, "mlp", 2, 3, 2, rng);
  randomize(store, rng);
  const Array xs = random_array({3, 3}, rng);
  auto loss = [&](Tape& tape) {
    GruRun run = gru_unroll(tape, cell, tape.constant(xs), tape.constant(Array(Shape{4})));
    Tensor enc = bigru_encode(tape, bi, run.steps);
    return sum(mul(mlp_forward(tape, mlp, enc), mlp_forward(tape, mlp, enc)));
  };
  auto report = grad_check_parameters(store, loss);
  EXPECT_LE(report.max_relative_error, 1e-4) << report.worst_parameter << "[" << report.worst_index << "]";

  // And with respect to the inputs of a single step.
  const Array h = random_array({4}, rng);
  EXPECT_LE(grad_check([&](Tape& t, const Tensor& x) { return sum(gru_step(t, cell, x, t.constant(h))); },
                       random_array({3}, rng)),
            1e-4);
}
