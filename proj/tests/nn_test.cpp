#include "tgsim/nn/grad_check.hpp"
#include "tgsim/nn/layers.hpp"
#include "tgsim/nn/optim.hpp"
#include "tgsim/nn/weights.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace tgsim::nn;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return uniform_tensor(r, c, scale, rng);
}

// Scalar probe with a nonzero gradient everywhere: sum(y * probe).
Var project(const Var& y, const Tensor& probe) { return sum(mul_const(y, probe)); }

}  // namespace

TEST(Linear, IdentityWeightsReproduceInput) {
  Rng rng(1);
  Linear layer(3, 3, rng);
  layer.weight->value = Tensor(3, 3, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  layer.bias->value = Tensor(3, 1);
  const Tensor x = Tensor::row({0.5, -2.0, 7.0});
  EXPECT_EQ(layer.forward(constant(x))->value, x);
}

TEST(Linear, ZeroWeightsGiveBias) {
  Rng rng(2);
  Linear layer(4, 2, rng);
  layer.weight->value.fill(0.0);
  layer.bias->value = Tensor::column({3.0, -1.0});
  for (int trial = 0; trial < 5; ++trial) {
    const Var y = layer.forward(constant(random_tensor(1, 4, rng, 10.0)));
    EXPECT_DOUBLE_EQ(y->value[0], 3.0);
    EXPECT_DOUBLE_EQ(y->value[1], -1.0);
  }
}

TEST(Linear, ShapeMismatchIsArgumentError) {
  Rng rng(3);
  Linear layer(4, 2, rng);
  EXPECT_THROW(layer.forward(constant(Tensor(1, 3))), std::invalid_argument);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Linear layer(5, 3, rng);
  const Var x = parameter(random_tensor(4, 5, rng));
  const Tensor probe = random_tensor(4, 3, rng);
  ParamList params;
  layer.collect(params, "lin");
  params.push_back({"x", x});
  const auto report = grad_check([&] { return project(layer.forward(x), probe); }, params, 1e-5);
  EXPECT_TRUE(report.passed) << report.worst_param << " " << report.max_relative_error;
}

TEST(NoisyLinear, ZeroSigmaReducesToLinear) {
  Rng rng(5);
  NoisyLinear noisy(3, 2, rng);
  noisy.weight_sigma->value.fill(0.0);
  noisy.bias_sigma->value.fill(0.0);
  const Var x = constant(random_tensor(2, 3, rng));
  const Var plain = linear(x, noisy.weight_mu, noisy.bias_mu);
  EXPECT_EQ(noisy.forward(x, Mode::train, &rng)->value, plain->value);
}

TEST(NoisyLinear, EvalModeIgnoresRng) {
  Rng init(6);
  NoisyLinear noisy(3, 2, init);
  const Var x = constant(random_tensor(1, 3, init));
  Rng a(100), b(200);
  EXPECT_EQ(noisy.forward(x, Mode::eval, &a)->value, noisy.forward(x, Mode::eval, &b)->value);
}

TEST(NoisyLinear, TrainModeResamplesNoise) {
  Rng rng(7);
  NoisyLinear noisy(3, 2, rng);
  const Var x = constant(random_tensor(1, 3, rng));
  const Tensor first = noisy.forward(x, Mode::train, &rng)->value;
  const Tensor second = noisy.forward(x, Mode::train, &rng)->value;
  EXPECT_FALSE(first == second);
  // Without an rng the current noise is reused.
  EXPECT_EQ(noisy.forward(x, Mode::train)->value, second);
}

TEST(NoisyLinear, InitialisationFollowsFactorisedScheme) {
  Rng rng(8);
  NoisyLinear noisy(16, 4, rng);
  for (double s : noisy.weight_sigma->value.data()) EXPECT_DOUBLE_EQ(s, 0.5 / 4.0);
  for (double m : noisy.weight_mu->value.data()) EXPECT_LE(std::abs(m), 0.25);
  // epsilon_w is the outer product of the bias noise and an input vector.
  for (std::size_t r = 1; r < 4; ++r) {
    const double ratio = noisy.epsilon_w(r, 0) / noisy.epsilon_w(0, 0);
    EXPECT_NEAR(ratio, noisy.epsilon_b[r] / noisy.epsilon_b[0], 1e-12);
  }
}

TEST(NoisyLinear, GradientWithFrozenNoise) {
  Rng rng(9);
  NoisyLinear noisy(4, 3, rng);
  const Var x = parameter(random_tensor(2, 4, rng));
  const Tensor probe = random_tensor(2, 3, rng);
  ParamList params;
  noisy.collect(params, "noisy");
  params.push_back({"x", x});
  const auto report =
      grad_check([&] { return project(noisy.forward(x, Mode::train), probe); }, params, 1e-5);
  EXPECT_TRUE(report.passed) << report.worst_param << " " << report.max_relative_error;
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  Rng rng(10);
  LstmCell cell(3, 5, rng);
  cell.weight_ih->value.fill(0.0);
  cell.weight_hh->value.fill(0.0);
  cell.bias->value.fill(0.0);
  LstmState s = cell.zero_state(2);
  for (int t = 0; t < 4; ++t) s = cell.step(constant(random_tensor(2, 3, rng, 50.0)), s);
  for (double v : s.h->value.data()) EXPECT_EQ(v, 0.0);
  for (double v : s.c->value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, GateAndStateRanges) {
  Rng rng(11);
  LstmCell cell(2, 6, rng);
  LstmState s = cell.zero_state(3);
  for (int t = 0; t < 20; ++t) {
    s = cell.step(constant(random_tensor(3, 2, rng, 1e3)), s);
    for (double v : s.h->value.data()) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
  // Cell state grows by at most one per step (|f c| <= |c|, |i g| < 1).
  for (double v : s.c->value.data()) EXPECT_LT(std::abs(v), 20.0);
}

TEST(Lstm, BackpropThroughTimeEightSteps) {
  Rng rng(12);
  LstmCell cell(3, 4, rng);
  std::vector<Var> inputs;
  for (int t = 0; t < 8; ++t) inputs.push_back(parameter(random_tensor(2, 3, rng)));
  const Tensor probe = random_tensor(2, 4, rng);
  ParamList params;
  cell.collect(params, "lstm");
  params.push_back({"x0", inputs.front()});
  auto fn = [&] {
    LstmState s = cell.zero_state(2);
    for (const auto& x : inputs) s = cell.step(x, s);
    return project(s.h, probe);
  };
  const auto report = grad_check(fn, params, 1e-4);
  EXPECT_TRUE(report.passed) << report.worst_param << " " << report.max_relative_error;
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(13);
  Linear layer(3, 2, rng);
  ParamList params;
  layer.collect(params, "l");
  const Tensor before = layer.weight->value;
  Adam adam(params, {});
  for (auto& p : params) p.var->grad_ref();
  adam.step(params);
  EXPECT_EQ(layer.weight->value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const Var theta = parameter(Tensor::row({1.0, -2.0, 0.5}));
  ParamList params{{"theta", theta}};
  Adam adam(params, {.lr = 0.001});
  theta->grad = Tensor::row({3.0, -0.2, 40.0});
  adam.step(params);
  EXPECT_LT(std::abs((theta->value[0] - 1.0) + 0.001), 1e-6);
  EXPECT_LT(std::abs((theta->value[1] + 2.0) - 0.001), 1e-6);
  EXPECT_LT(std::abs((theta->value[2] - 0.5) + 0.001), 1e-6);
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, IdenticalRunsAreIdentical) {
  auto run = [] {
    Rng rng(14);
    Linear layer(4, 2, rng);
    ParamList params;
    layer.collect(params, "l");
    Adam adam(params, {});
    const Var x = constant(random_tensor(8, 4, rng));
    for (int k = 0; k < 20; ++k) {
      zero_grad(params);
      backward(mean(square(layer.forward(x))));
      adam.step(params);
    }
    return layer.weight->value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ClipGradNormScalesJointNorm) {
  const Var a = parameter(Tensor::row({3.0}));
  const Var b = parameter(Tensor::row({4.0}));
  a->grad = Tensor::row({30.0});
  b->grad = Tensor::row({40.0});
  const double before = clip_grad_norm({{"a", a}, {"b", b}}, 10.0);
  EXPECT_DOUBLE_EQ(before, 50.0);
  EXPECT_NEAR(a->grad[0], 6.0, 1e-12);
  EXPECT_NEAR(b->grad[0], 8.0, 1e-12);
}

TEST(GradCheck, QuadraticHasGradientTwoTheta) {
  Rng rng(15);
  const Var theta = parameter(random_tensor(1, 6, rng));
  const ParamList params{{"theta", theta}};
  const auto report = grad_check([&] { return sum(square(theta)); }, params, 1e-6);
  EXPECT_TRUE(report.passed);
  zero_grad(params);
  backward(sum(square(theta)));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(theta->grad[i], 2.0 * theta->value[i]);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Rng rng(16);
  const Var theta = parameter(random_tensor(1, 4, rng));
  const ParamList params{{"theta", theta}};
  // A cube op whose backward forgets the factor 3.
  auto broken_cube = [&] {
    Tensor y = theta->value;
    for (double& v : y.data()) v = v * v * v;
    Node* p = theta.get();
    return sum(detail::make_op("broken", std::move(y), {theta}, [p](const Node& self) {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        p->grad_ref()[i] += self.grad[i] * p->value[i] * p->value[i];
      }
    }));
  };
  EXPECT_FALSE(grad_check(broken_cube, params, 1e-5).passed);
}

TEST(Autodiff, NonFiniteValuesAreTrapped) {
  const Var x = constant(Tensor::row({1e308}));
  EXPECT_THROW(scale(x, 10.0), std::domain_error);
}

TEST(Autodiff, SegmentMaxMatchesBruteForceAndUsesFallback) {
  Rng rng(17);
  const Var rows = parameter(random_tensor(5, 3, rng));
  const Var fallback = parameter(Tensor::row({-7.0, 8.0, 9.0}));
  const std::vector<std::size_t> seg{0, 2, 0, 2, 2};
  const Var y = segment_max(rows, seg, 3, fallback);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(y->value(0, c), std::max(rows->value(0, c), rows->value(2, c)));
    EXPECT_EQ(y->value(1, c), fallback->value(0, c));
    EXPECT_EQ(y->value(2, c),
              std::max({rows->value(1, c), rows->value(3, c), rows->value(4, c)}));
  }
  const Tensor probe = random_tensor(3, 3, rng);
  const ParamList params{{"rows", rows}, {"fallback", fallback}};
  const auto report =
      grad_check([&] { return project(segment_max(rows, seg, 3, fallback), probe); }, params, 1e-5);
  EXPECT_TRUE(report.passed) << report.worst_param << "[" << report.worst_index << "] " << report.analytic << " vs " << report.numeric;
}

TEST(Autodiff, LossOpsMatchFiniteDifferences) {
  Rng rng(18);
  const Var z = parameter(random_tensor(6, 1, rng, 3.0));
  const ParamList params{{"z", z}};
  EXPECT_TRUE(grad_check([&] { return bce_with_logits(z, 1.0); }, params, 1e-5).passed);
  EXPECT_TRUE(grad_check([&] { return bce_with_logits(z, 0.0); }, params, 1e-5).passed);
  EXPECT_TRUE(grad_check([&] { return sum(huber(z, 1.0)); }, params, 1e-5).passed);
}

TEST(Autodiff, LayersStayFiniteOnLargeInputs) {
  Rng rng(19);
  Linear lin(4, 8, rng);
  NoisyLinear noisy(8, 8, rng);
  LstmCell cell(8, 8, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Var x = constant(random_tensor(3, 4, rng, 1e3));
    const Var h = relu(noisy.forward(lin.forward(x), Mode::train, &rng));
    const LstmState s = cell.step(h, cell.zero_state(3));
    EXPECT_TRUE(s.h->value.all_finite());
    EXPECT_TRUE(bce_with_logits(h, 1.0)->value.all_finite());
  }
}

TEST(Weights, RoundTripIsBitExact) {
  Rng rng(20);
  WeightFile file;
  file.add("a", random_tensor(3, 4, rng, 1e6));
  file.add("b.weight", Tensor::row({-0.0, 1e-310, 3.14159}));
  file.add("empty", Tensor(0, 5));
  file.metadata["mode"] = "traffic_idm";
  const std::string bytes = serialize_weights(file);
  EXPECT_EQ(bytes.substr(0, 4), "TGSM");
  const WeightFile back = deserialize_weights(bytes);
  ASSERT_EQ(back.arrays.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back.arrays[k].first, file.arrays[k].first);
    EXPECT_EQ(back.arrays[k].second.rows(), file.arrays[k].second.rows());
    EXPECT_EQ(0, std::memcmp(back.arrays[k].second.data().data(), file.arrays[k].second.data().data(),
                             file.arrays[k].second.size() * sizeof(double)));
  }
  EXPECT_EQ(back.metadata, file.metadata);
  EXPECT_EQ(serialize_weights(back), bytes);
}

TEST(Weights, RejectsCorruptInput) {
  WeightFile file;
  file.add("x", Tensor::row({1.0, 2.0}));
  std::string bytes = serialize_weights(file);
  EXPECT_THROW(deserialize_weights(bytes.substr(0, bytes.size() - 3)), WeightFormatError);
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_weights(bytes), WeightFormatError);
}

TEST(Weights, LoadIntoReportsEveryMismatch) {
  Rng rng(21);
  Linear layer(3, 2, rng);
  ParamList params;
  layer.collect(params, "l");
  WeightFile file;
  file.add("l.weight", Tensor(2, 4));
  try {
    load_into(params, file);
    FAIL() << "expected mismatch";
  } catch (const WeightFormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("l.weight: expected 2x3, found 2x4"), std::string::npos);
    EXPECT_NE(msg.find("l.bias: missing"), std::string::npos);
  }
}

TEST(Autodiff, NoGradGuardSkipsTape) {
  const Var w = parameter(Tensor::row({2.0}));
  {
    const NoGradGuard guard;
    const Var y = mul(w, w);
    EXPECT_FALSE(y->requires_grad);
    EXPECT_TRUE(y->parents.empty());
    EXPECT_EQ(y->value[0], 4.0);
  }
  EXPECT_TRUE(mul(w, w)->requires_grad);
}
