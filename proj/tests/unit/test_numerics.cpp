#include <gtest/gtest.h>

#include <array>

#include "oracle.hpp"
#include "protoaudit/numerics/network.hpp"
#include "protoaudit/numerics/ops.hpp"
#include "protoaudit/numerics/sgd.hpp"

using namespace protoaudit::numerics;

namespace {
const Tensor* const kNoBias = nullptr;
}  // namespace

TEST(Conv2d, OneByOneKernelScales) {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  Tensor k({1, 1, 1, 1}, {2});
  const auto y = conv2d_forward(x, k, kNoBias, Conv2dGeometry{1, 0});
  EXPECT_EQ(y.values(), (std::vector<float>{2, 4, 6, 8}));
}

TEST(Conv2d, UnitKernelIsIdentity) {
  const Tensor x = oracle::random_tensor({1, 5, 7}, 3);
  Tensor k({1, 1, 1, 1}, {1});
  EXPECT_EQ(conv2d_forward(x, k, kNoBias, Conv2dGeometry{1, 0}), x);
}

TEST(Conv2d, AllOnesSumsWindow) {
  Tensor x({1, 3, 3}, 1.0f), k({1, 1, 3, 3}, 1.0f);
  const auto y = conv2d_forward(x, k, kNoBias, Conv2dGeometry{1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 9.0f);
}

TEST(Conv2d, MatchesBruteForceWithPaddingStrideBias) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor x = oracle::random_tensor({3, 9, 9}, seed);
    const Tensor k = oracle::random_tensor({4, 3, 3, 3}, seed + 100);
    const Tensor b = oracle::random_tensor({4}, seed + 200);
    for (std::size_t stride : {1u, 2u}) {
      const auto got = conv2d_forward(x, k, &b, {stride, 1});
      const auto want = oracle::conv2d(x, k, &b, stride, 1);
      ASSERT_EQ(got.shape(), want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
    }
  }
}

TEST(Conv2d, RejectsNonIntegralOutput) {
  Tensor x({1, 4, 4}), k({1, 1, 3, 3});
  EXPECT_THROW(conv2d_forward(x, k, kNoBias, Conv2dGeometry{2, 0}), ShapeError);
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor x({2, 4, 4}), k({1, 1, 3, 3});
  EXPECT_THROW(conv2d_forward(x, k, kNoBias, Conv2dGeometry{1, 1}), ShapeError);
}

TEST(Conv2dProperty, LinearInInputWithoutBias) {
  const Tensor x = oracle::random_tensor({2, 8, 8}, 11, 0, 1);
  const Tensor k = oracle::random_tensor({3, 2, 3, 3}, 12);
  const auto base = conv2d_forward(x, k, kNoBias, Conv2dGeometry{1, 1});
  for (float a : {-2.5f, 0.5f, 3.0f}) {
    Tensor ax = x;
    for (auto& v : ax.data()) v *= a;
    const auto y = conv2d_forward(ax, k, kNoBias, Conv2dGeometry{1, 1});
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_LE(std::abs(y[i] - a * base[i]), 1e-5 * std::max(1.0f, std::abs(a * base[i])));
    }
  }
}

TEST(MaxPool, PicksMaxAndRecordsArgmax) {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  const auto r = maxpool2d_forward(x, 2);
  EXPECT_EQ(r.output[0], 4.0f);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, TiesGoToFirstIndex) {
  Tensor x({2, 4, 4}, 0.7f);
  const auto r = maxpool2d_forward(x, 2);
  const std::vector<std::uint32_t> want{0, 2, 8, 10, 16, 18, 24, 26};
  EXPECT_EQ(r.argmax, want);
  for (float v : r.output.data()) EXPECT_EQ(v, 0.7f);
}

TEST(MaxPool, MatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = oracle::random_tensor({3, 4, 4}, seed);
    const auto got = maxpool2d_forward(x, 2);
    const auto want = oracle::maxpool(x, 2);
    EXPECT_EQ(got.output, want.values);
    EXPECT_EQ(got.argmax, want.argmax);
  }
}

TEST(MaxPool, RejectsIndivisibleWindow) {
  Tensor x({1, 5, 4});
  EXPECT_THROW(maxpool2d_forward(x, 2), ShapeError);
}

TEST(Dense, IdentityAndHandCases) {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor x({3}, {0.5f, -2, 7});
  Tensor zero({3});
  EXPECT_EQ(dense_forward(x, eye, &zero), x);
  Tensor w({1, 2}, {1, 1});
  EXPECT_EQ(dense_forward(Tensor({2}, {2, 3}), w, kNoBias)[0], 5.0f);
}

TEST(Dense, MatchesDotProductLoop) {
  const Tensor x = oracle::random_tensor({17}, 1), w = oracle::random_tensor({5, 17}, 2), b = oracle::random_tensor({5}, 3);
  const auto got = dense_forward(x, w, &b);
  const auto want = oracle::dense(x, w, &b);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
}

TEST(Dense, SquaredErrorGradientMatchesClosedForm) {
  // L = 0.5 * ||W x + b - t||^2  =>  dW = (y - t) x^T, db = y - t, dx = W^T (y - t)
  const Tensor x = oracle::random_tensor({4}, 5), w = oracle::random_tensor({3, 4}, 6), b = oracle::random_tensor({3}, 7);
  const Tensor t = oracle::random_tensor({3}, 8);
  const auto y = dense_forward(x, w, &b);
  Tensor r({3});
  for (std::size_t i = 0; i < 3; ++i) r[i] = y[i] - t[i];
  const auto g = dense_backward(x, w, true, r);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(g.bias[i], r[i], 1e-6);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g.weight[i * 4 + j], r[i] * x[j], 1e-6);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < 3; ++i) acc += w[i * 4 + j] * r[i];
    EXPECT_NEAR(g.input[j], acc, 1e-6);
  }
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tensor x({3}, {-1, 0, 2}), g({3}, {5, 5, 5});
  EXPECT_EQ(relu_backward(x, g).values(), (std::vector<float>{0, 0, 5}));
}

namespace {

std::vector<LayerSpec> toy_layers(bool bias) {
  return {LayerSpec::conv2d(2, 3, 3, 1, bias), LayerSpec::relu(), LayerSpec::maxpool2d(2),
          LayerSpec::conv2d(3, 2, 1, 0, bias), LayerSpec::sigmoid()};
}

Network<double> toy_network(std::uint64_t seed) {
  Network<double> net(toy_layers(true), {2, 6, 6});
  Rng rng(seed);
  for (auto& p : net.params()) {
    for (auto& v : p.weight.data()) v = rng.uniform(-0.8, 0.8);
    for (auto& v : p.bias.data()) v = rng.uniform(-0.2, 0.2);
  }
  return net;
}

// Loss = sum(output * probe) with probe fixed, so the seed gradient is `probe`.
double probe_loss(const Network<double>& net, const BasicTensor<double>& x, const BasicTensor<double>& probe) {
  const auto y = net.forward(x);
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * probe[i];
  return acc;
}

}  // namespace

TEST(Backward, ZeroSeedGivesZeroGradients) {
  const auto net = toy_network(1);
  const auto x = oracle::random_tensor({2, 6, 6}, 2, 0, 1).cast<double>();
  const auto cache = net.forward_cached(x);
  const auto tape = net.backward(cache, BasicTensor<double>(net.output_shape()), true);
  for (const auto& g : tape.grads) {
    for (double v : g.weight.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.bias.data()) EXPECT_EQ(v, 0.0);
  }
  for (double v : tape.input_grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RequiresCachedForward) {
  const auto net = toy_network(1);
  EXPECT_THROW(net.backward(ForwardCache<double>{}, BasicTensor<double>(net.output_shape())), std::logic_error);
}

TEST(BackwardProperty, EveryLayerKindMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto net = toy_network(seed);
    const auto x = oracle::random_tensor({2, 6, 6}, seed + 10, 0, 1).cast<double>();
    const auto probe = oracle::random_tensor(net.output_shape(), seed + 20).cast<double>();
    const auto tape = net.backward(net.forward_cached(x), probe, true);
    const double h = 1e-6;
    for (std::size_t l = 0; l < net.params().size(); ++l) {
      for (auto kind : std::array{&LayerParams<double>::weight, &LayerParams<double>::bias}) {
        auto& p = net.params()[l].*kind;
        const auto& g = tape.grads[l].*kind;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double o = p[i];
          p[i] = o + h;
          const double lp = probe_loss(net, x, probe);
          p[i] = o - h;
          const double lm = probe_loss(net, x, probe);
          p[i] = o;
          const double fd = (lp - lm) / (2 * h);
          EXPECT_LT(std::abs(fd - g[i]), 1e-4 * std::max(1.0, std::abs(fd))) << "layer " << l << " index " << i;
        }
      }
    }
    auto xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double o = xp[i];
      xp[i] = o + h;
      const double lp = probe_loss(net, xp, probe);
      xp[i] = o - h;
      const double lm = probe_loss(net, xp, probe);
      xp[i] = o;
      EXPECT_LT(std::abs((lp - lm) / (2 * h) - tape.input_grad[i]), 1e-4);
    }
  }
}

TEST(Network, DeterministicForward) {
  const auto net = toy_network(4).cast<float>();
  const Tensor x = oracle::random_tensor({2, 6, 6}, 9, 0, 1);
  EXPECT_EQ(net.forward(x), net.forward(x));
}

TEST(Network, OutputShapePropagates) {
  Network<float> net(toy_layers(false), {2, 6, 6});
  EXPECT_EQ(net.output_shape(), (Shape{2, 3, 3}));
  EXPECT_TRUE(net.params()[0].bias.empty());
}

TEST(Sgd, ZeroLearningRateLeavesParams) {
  Tensor p = oracle::random_tensor({4}, 1), g = oracle::random_tensor({4}, 2), v({4});
  const Tensor before = p;
  sgd_step(p, g, v, 0.0, 0.9);
  EXPECT_EQ(p, before);
}

TEST(Sgd, UnitStepOnOwnGradientZeroes) {
  Tensor p({3}, {1, -2, 3}), v({3});
  const Tensor g = p;
  sgd_step(p, g, v, 1.0, 0.0);
  for (float x : p.data()) EXPECT_EQ(x, 0.0f);
}

TEST(Sgd, TwoMomentumStepsFollowRecurrence) {
  Tensor p({1}, {1.0f}), v({1});
  sgd_step(p, Tensor({1}, {0.5f}), v, 0.1, 0.9);
  sgd_step(p, Tensor({1}, {0.25f}), v, 0.1, 0.9);
  // v1 = 0.5, p1 = 0.95; v2 = 0.9*0.5 + 0.25 = 0.7, p2 = 0.95 - 0.07 = 0.88
  EXPECT_NEAR(v[0], 0.7, 1e-7);
  EXPECT_NEAR(p[0], 0.88, 1e-7);
}

TEST(Sgd, NonFiniteUpdateThrowsAndKeepsParams) {
  Tensor p({2}, {1, 2}), v({2});
  const Tensor before = p;
  EXPECT_THROW(sgd_step(p, Tensor({2}, {1, std::numeric_limits<float>::infinity()}), v, 0.1, 0.0), NumericalError);
  EXPECT_EQ(p, before);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(42, {1, 2}), derive_seed(42, {1, 2}));
  EXPECT_NE(derive_seed(42, {1, 2}), derive_seed(42, {2, 1}));
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}
