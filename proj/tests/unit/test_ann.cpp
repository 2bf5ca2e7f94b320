#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "../support/reference.hpp"
#include "nlosid/ann.hpp"

using namespace nlosid;
using namespace nlosid::ann;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor vec(std::vector<double> v) {
  const auto n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace

TEST(ReferenceOps, DenseExample) {
  const Tensor W({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto y = dense_forward(vec({1, 0, -1}), W, vec({0.5, -0.5}));
  EXPECT_EQ(y.values, (std::vector<double>{-1.5, -2.5}));
  const Tensor I({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(dense_forward(vec({3, 3, 3}), I, vec({0, 0, 0})).values, (std::vector<double>{3, 3, 3}));
  EXPECT_THROW(dense_forward(vec({1, 2}), W, vec({0, 0})), ShapeError);
}

TEST(ReferenceOps, ConvExamples) {
  const Tensor diff({1, 2}, {1, -1});
  const auto y = conv1d_forward(vec({1, 2, 3, 4}), diff, 1);
  EXPECT_EQ(y.values, (std::vector<double>{-1, -1, -1}));
  const Tensor id({1, 1}, {1});
  EXPECT_EQ(conv1d_forward(vec({5, 6, 7}), id, 1).values, (std::vector<double>{5, 6, 7}));
  EXPECT_EQ(conv1d_forward(vec({5, 6, 7, 8, 9}), id, 2).values, (std::vector<double>{5, 7, 9}));
  // Output length ceil((n - w + 1) / s).
  for (std::size_t n = 3; n < 20; ++n)
    for (int s = 1; s <= 3; ++s) {
      const auto out = conv1d_forward(Tensor({n}), Tensor({2, 3}), s);
      EXPECT_EQ(out.shape[1], (n - 3 + 1 + static_cast<std::size_t>(s) - 1) / static_cast<std::size_t>(s));
    }
  EXPECT_THROW(conv1d_forward(vec({1, 2}), Tensor({1, 3}), 1), ShapeError);
}

TEST(ReferenceOps, RandomizedAgainstLoops) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + rng() % 40, m = 1 + rng() % 10;
    const auto x = random_vector(rng, n);
    const Tensor W({m, n}, random_vector(rng, m * n));
    const auto b = random_vector(rng, m);
    const auto y = dense_forward(vec(x), W, vec(b));
    for (std::size_t o = 0; o < m; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < n; ++i) acc += W[o * n + i] * x[i];
      EXPECT_NEAR(y[o], acc, 1e-12);
    }
    const std::size_t w = 1 + rng() % std::min<std::size_t>(n, 9), k = 1 + rng() % 4;
    const int s = 1 + static_cast<int>(rng() % 3);
    const Tensor K({k, w}, random_vector(rng, k * w));
    const auto c = conv1d_forward(vec(x), K, s);
    const std::size_t len = c.shape[1];
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t p = 0; p < len; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w; ++j) acc += K[kk * w + j] * x[p * static_cast<std::size_t>(s) + j];
        EXPECT_NEAR(c[kk * len + p], acc, 1e-12);
      }
  }
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const auto z = random_vector(rng, 1 + rng() % 12, -30.0, 30.0);
    const auto p = softmax(vec(z));
    double s = 0.0;
    for (double v : p.values) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    if (i % 100 == 0) {
      auto shifted = z;
      for (auto& v : shifted) v += 123.0;
      const auto q = softmax(vec(shifted));
      for (std::size_t j = 0; j < z.size(); ++j) EXPECT_NEAR(p[j], q[j], 1e-12);
    }
  }
  const auto big = softmax(vec({1000.0, 0.0}));
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);
  EXPECT_THROW(softmax(Tensor({0})), ShapeError);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(vec({1, 0, 0}), vec({1, 0, 0})), 0.0, 1e-15);
  EXPECT_NEAR(cross_entropy(vec({1.0 / 3, 1.0 / 3, 1.0 / 3}), vec({0, 1, 0})), std::log(3.0), 1e-12);
  // Zero probability is floored at 1e-12.
  EXPECT_NEAR(cross_entropy(vec({1, 0, 0}), vec({0, 0, 1})), 27.631021, 1e-5);
  EXPECT_THROW(cross_entropy(vec({0.5, 0.5}), vec({1, 1})), std::invalid_argument);
  EXPECT_THROW(cross_entropy(vec({0.5, 0.5}), vec({0.5, 0.5})), std::invalid_argument);
  EXPECT_THROW(cross_entropy(vec({0.5, 0.5}), vec({0, 0})), std::invalid_argument);
  EXPECT_THROW(cross_entropy(vec({0.5, 0.5}), vec({1, 0, 0})), ShapeError);
}

TEST(Network, ForwardMatchesNaiveOracle) {
  std::mt19937_64 rng(3);
  auto net = build_network(default_architecture(), 250, 3, 7, 42);
  for (auto& t : net.parameters)
    if (t.rank() == 1)
      for (auto& v : t.values) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  for (int i = 0; i < 5; ++i) {
    const auto x = random_vector(rng, 250, 0.0, 1.0);
    const auto got = forward(net, x);
    const auto want = oracle::naive_forward(net, x);
    ASSERT_EQ(got.class_probs.size(), 3u);
    ASSERT_EQ(got.loc_probs.size(), 7u);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got.class_probs[j], want.probs_class[j], 1e-12);
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(got.loc_probs[j], want.probs_loc[j], 1e-12);
  }
}

TEST(Network, BatchForwardMatchesSingleSample) {
  std::mt19937_64 rng(8);
  const auto net = build_network(default_architecture(), 250, 3, 7, 1);
  const std::size_t batch = 13;
  const auto x = random_vector(rng, batch * 250, 0.0, 1.0);
  Workspace ws;
  forward_batch(net, x, batch, ws);
  for (std::size_t s = 0; s < batch; ++s) {
    const auto one = forward(net, std::span<const double>(x.data() + s * 250, 250));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ws.acts.probs_class[s * 3 + j], one.class_probs[j]);
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(ws.acts.probs_loc[s * 7 + j], one.loc_probs[j]);
  }
}

TEST(Network, ZeroHeadsGiveUniformOutputs) {
  auto net = build_network(default_architecture(), 250, 3, 7, 9);
  for (int idx : {net.head_class.weight, net.head_class.bias, net.head_loc.weight, net.head_loc.bias}) {
    auto& t = net.parameters[static_cast<std::size_t>(idx)];
    std::fill(t.values.begin(), t.values.end(), 0.0);
  }
  std::mt19937_64 rng(1);
  const auto out = forward(net, random_vector(rng, 250, 0.0, 1.0));
  for (double p : out.class_probs.values) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  for (double p : out.loc_probs.values) EXPECT_NEAR(p, 1.0 / 7.0, 1e-15);
}

TEST(Network, InitializationIsSeededAndFanInScaled) {
  const auto a = build_network(default_architecture(), 250, 3, 7, 77);
  const auto b = build_network(default_architecture(), 250, 3, 7, 77);
  const auto c = build_network(default_architecture(), 250, 3, 7, 78);
  ASSERT_EQ(a.parameters.size(), b.parameters.size());
  bool differs = false;
  for (std::size_t k = 0; k < a.parameters.size(); ++k) {
    EXPECT_EQ(a.parameters[k].values, b.parameters[k].values);
    differs = differs || a.parameters[k].values != c.parameters[k].values;
    const auto fi = fan_in(a.parameters[k]);
    if (fi == 0) {
      for (double v : a.parameters[k].values) EXPECT_EQ(v, 0.0);
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(fi));
      for (double v : a.parameters[k].values) EXPECT_LE(std::abs(v), limit);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Network, ShapesOfDefaultArchitecture) {
  const auto net = build_network_shapes(default_architecture(), 250, 3, 7);
  // conv(16x9/2): (250-9)/2+1 = 121; conv(32x5/2): (121-5)/2+1 = 59.
  EXPECT_EQ(net.conv_branch[0].out.length, 121u);
  EXPECT_EQ(net.conv_branch[2].out.length, 59u);
  EXPECT_EQ(net.conv_branch.back().out.size(), 32u * 59u);
  EXPECT_EQ(net.trunk[0].in.size(), 32u * 59u + 64u);
  EXPECT_EQ(net.parameters[2].shape, (std::vector<std::size_t>{32, 16, 5}));
  EXPECT_EQ(net.parameter_names.size(), net.parameters.size());
}

TEST(Network, IncompatibleLayersNameBothSides) {
  Architecture arch = default_architecture();
  arch.conv_branch[0] = LayerSpec::conv1d(16, 251, 1);
  try {
    build_network_shapes(arch, 250, 3, 7);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'input'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("conv1d(16x251/1)"), std::string::npos) << msg;
  }
  arch = default_architecture();
  arch.conv_branch.pop_back();  // no flatten before concat
  EXPECT_THROW(build_network_shapes(arch, 250, 3, 7), ShapeError);
  arch = default_architecture();
  arch.trunk = {LayerSpec::conv1d(2, 3, 1), LayerSpec::flatten()};
  EXPECT_NO_THROW(build_network_shapes(arch, 250, 3, 7));
  arch.trunk.pop_back();  // heads cannot read a multi-channel map
  EXPECT_THROW(build_network_shapes(arch, 250, 3, 7), ShapeError);
  arch.trunk.push_back(LayerSpec::dense(4));
  EXPECT_THROW(build_network_shapes(arch, 250, 3, 7), ShapeError);
}

TEST(Gradients, MatchCentralDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = oracle::gradient_check(seed);
    EXPECT_GT(r.parameters, 200u);
    EXPECT_LT(r.max_rel, 1e-5) << "seed " << seed;
  }
}

TEST(Gradients, SingleHeadObjectives) {
  for (std::uint64_t seed = 20; seed < 23; ++seed) {
    EXPECT_LT(oracle::gradient_check(seed, 1e-5, {1.0, 0.0}).max_rel, 1e-5);
    EXPECT_LT(oracle::gradient_check(seed, 1e-5, {0.0, 1.0}).max_rel, 1e-5);
  }
}

TEST(Gradients, UnusedHeadGetsZeroGradient) {
  const auto net = build_network(oracle::small_architecture(), 16, 3, 7, 4);
  std::mt19937_64 rng(4);
  const auto x = random_vector(rng, 16, 0.0, 1.0);
  const auto g = backward(net, x, {1, 5}, {1.0, 0.0});
  for (double v : g[static_cast<std::size_t>(net.head_loc.weight)].values) EXPECT_EQ(v, 0.0);
  for (double v : g[static_cast<std::size_t>(net.head_loc.bias)].values) EXPECT_EQ(v, 0.0);
  const auto h = backward(net, x, {1, 5}, {0.0, 1.0});
  for (double v : h[static_cast<std::size_t>(net.head_class.weight)].values) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, ScaleLinearlyWithLossWeight) {
  const auto net = build_network(oracle::small_architecture(), 16, 3, 7, 6);
  std::mt19937_64 rng(6);
  const auto x = random_vector(rng, 16, 0.0, 1.0);
  const auto g1 = backward(net, x, {2, 3}, {1.0, 1.0});
  const auto g2 = backward(net, x, {2, 3}, {2.0, 2.0});
  for (std::size_t k = 0; k < g1.size(); ++k)
    for (std::size_t i = 0; i < g1[k].size(); ++i) EXPECT_NEAR(g2[k][i], 2.0 * g1[k][i], 1e-12);
  EXPECT_NEAR(loss(net, x, {2, 3}, {2.0, 2.0}), 2.0 * loss(net, x, {2, 3}), 1e-12);
}

TEST(Loss, JointIsSumOfHeads) {
  const auto net = build_network(default_architecture(), 250, 3, 7, 12);
  std::mt19937_64 rng(12);
  const auto x = random_vector(rng, 250, 0.0, 1.0);
  const Targets t{0, 4};
  const auto out = forward(net, x);
  const double want = -std::log(out.class_probs[0]) - std::log(out.loc_probs[4]);
  EXPECT_NEAR(loss(net, x, t), want, 1e-12);
  EXPECT_NEAR(loss(net, x, t), loss(net, x, t, {1.0, 0.0}) + loss(net, x, t, {0.0, 1.0}), 1e-12);
}

TEST(Conv, TranslationEquivariance) {
  std::mt19937_64 rng(2);
  const Tensor K({3, 5}, random_vector(rng, 15));
  const auto x = random_vector(rng, 40);
  std::vector<double> shifted(40, 0.0);
  for (std::size_t i = 0; i + 4 < 40; ++i) shifted[i + 4] = x[i];
  const auto a = conv1d_forward(vec(x), K, 1), b = conv1d_forward(vec(shifted), K, 1);
  const std::size_t len = a.shape[1];
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t p = 0; p + 4 < len; ++p) EXPECT_NEAR(b[k * len + p + 4], a[k * len + p], 1e-12);
  // Stride 2 with an even shift moves outputs by half the shift.
  const auto c = conv1d_forward(vec(x), K, 2), d = conv1d_forward(vec(shifted), K, 2);
  const std::size_t l2 = c.shape[1];
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t p = 0; p + 2 < l2; ++p) EXPECT_NEAR(d[k * l2 + p + 2], c[k * l2 + p], 1e-12);
}

TEST(Prediction, ArgmaxInvariantUnderPositiveScaling) {
  const auto net = build_network(default_architecture(), 250, 3, 7, 21);
  std::mt19937_64 rng(21);
  for (int i = 0; i < 5; ++i) {
    const auto x = random_vector(rng, 250, 0.0, 1.0);
    const auto p = forward(net, x);
    auto scaled = p.class_probs;
    for (auto& v : scaled.values) v *= 3.7;
    const auto argmax = [](const Tensor& t) {
      return std::max_element(t.values.begin(), t.values.end()) - t.values.begin();
    };
    EXPECT_EQ(argmax(scaled), argmax(p.class_probs));
  }
}
