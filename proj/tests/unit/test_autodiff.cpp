#include "oracles.hpp"

#include "pam/autodiff.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pam;

namespace {

TensorD rand_d(Shape s, std::mt19937_64& rng) { return TensorD::uniform(std::move(s), -1.0, 1.0, rng); }

double max_abs_diff(const TensorD& a, const TensorD& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv2d, MatchesNaiveLoops) {
  std::mt19937_64 rng(1);
  for (int k : {1, 2, 3})
    for (int stride : {1, 2})
      for (Index h : {5, 6, 8}) {
        const TensorD x = rand_d({2, 3, h, 7}, rng), w = rand_d({4, 3, k, k}, rng), b = rand_d({4}, rng);
        Graph<double> g(false);
        const auto y = conv2d(g.input(x), g.input(w), g.input(b), stride).value();
        EXPECT_LT(max_abs_diff(y, oracle::conv2d(x, w, &b, stride)), 1e-12)
            << "k=" << k << " s=" << stride << " h=" << h;
      }
}

TEST(Conv2d, SamePaddingHalvesWithStride2) {
  Graph<float> g(false);
  TensorF w({8, 3, 3, 3}), x({1, 3, 64, 64});
  const auto y = conv2d(g.input(x), g.input(w), Var<float>{}, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 32, 32}));
  EXPECT_EQ(conv2d(g.input(x), g.input(w), Var<float>{}, 1).shape(), (Shape{1, 8, 64, 64}));
}

TEST(Conv2d, RejectsChannelMismatch) {
  Graph<float> g(false);
  TensorF w({8, 2, 3, 3}), x({1, 3, 8, 8});
  EXPECT_THROW(conv2d(g.input(x), g.input(w), Var<float>{}, 1), std::invalid_argument);
}

TEST(TransposedConv2d, MatchesNaiveLoops) {
  std::mt19937_64 rng(2);
  const TensorD x = rand_d({2, 3, 3, 5}, rng), w = rand_d({3, 4, 2, 2}, rng);
  Graph<double> g(false);
  const auto y = transposed_conv2d(g.input(x), g.input(w)).value();
  EXPECT_EQ(y.shape(), (Shape{2, 4, 6, 10}));
  EXPECT_LT(max_abs_diff(y, oracle::transposed_conv2d(x, w)), 1e-12);
}

TEST(Softmax, StableForLargeLogits) {
  Graph<double> g(false);
  TensorD x({1, 2, 3}, std::vector<double>{1000, 1001, 999, -1000, -1000, -1000});
  const auto p = softmax_rows(g.input(x)).value();
  for (Index i = 0; i < p.numel(); ++i) EXPECT_TRUE(std::isfinite(p[i]));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(p[3], 1.0 / 3.0);
}

TEST(Resize, BilinearIdentityAndNearestRule) {
  std::mt19937_64 rng(3);
  const TensorD x = rand_d({1, 2, 5, 4}, rng);
  EXPECT_EQ(resize_bilinear(x, 5, 4).storage(), x.storage());
  const auto n = resize_nearest(x, 2, 8);
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 8; ++j)
        EXPECT_EQ(n.at({0, c, i, j}), x.at({0, c, i * 5 / 2, j * 4 / 8}));
}

TEST(Graph, BackwardTwiceThrows) {
  TensorD p({2}, 1.0);
  p.requires_grad = true;
  Graph<double> g;
  auto l = sum(mul(g.parameter(p), g.parameter(p)));
  g.backward(l);
  EXPECT_THROW(g.backward(l), std::logic_error);
  EXPECT_EQ(p.grad, (std::vector<double>{2.0, 2.0}));
}

TEST(Graph, GradientsAccumulateIntoParameters) {
  TensorD p({1}, 3.0);
  p.requires_grad = true;
  for (int i = 0; i < 2; ++i) {
    Graph<double> g;
    g.backward(sum(scale(g.parameter(p), 2.0)));
  }
  EXPECT_EQ(p.grad[0], 4.0);
}

TEST(Batching, ConvAndNormAreBatchInvariantBitwise) {
  std::mt19937_64 rng(4);
  const TensorF x = TensorF::uniform({5, 3, 17, 13}, -1.f, 1.f, rng);
  const TensorF w = TensorF::uniform({6, 3, 3, 3}, -1.f, 1.f, rng);
  const TensorF b = TensorF::uniform({6}, -1.f, 1.f, rng);
  const TensorF gm = TensorF::uniform({6}, 0.5f, 1.5f, rng), bt = TensorF::uniform({6}, -1.f, 1.f, rng);
  auto run = [&](const TensorF& in) {
    Graph<float> g(false);
    auto y = instance_norm(conv2d(g.input(in), g.input(w), g.input(b), 1), g.input(gm), g.input(bt));
    return sigmoid(leaky_relu(y)).value();
  };
  const auto all = run(x);
  const Index per = all.numel() / 5;
  for (Index n = 0; n < 5; ++n) {
    TensorF one({1, 3, 17, 13});
    std::copy_n(x.data() + n * one.numel(), one.numel(), one.data());
    const auto y = run(one);
    EXPECT_TRUE(std::equal(y.data(), y.data() + per, all.data() + n * per)) << "sample " << n;
  }
}

TEST(Matmul, GroupBroadcastPairsRowsWithTheirGroup) {
  std::mt19937_64 rng(5);
  const TensorD a = rand_d({4, 2, 3}, rng), b = rand_d({2, 3, 2}, rng);
  Graph<double> g(false);
  const auto c = matmul(g.input(a), g.input(b)).value();
  for (Index n = 0; n < 4; ++n)
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) {
        double s = 0;
        for (Index k = 0; k < 3; ++k) s += a.at({n, i, k}) * b.at({n / 2, k, j});
        EXPECT_NEAR(c.at({n, i, j}), s, 1e-14);
      }
  EXPECT_THROW(matmul(g.input(rand_d({3, 2, 3}, rng)), g.input(b)), std::invalid_argument);
}

TEST(DiceLoss, SpotValues) {
  Graph<double> g(false);
  TensorD p({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 0});
  TensorD m({1, 1, 2, 2}, std::vector<double>{1, 0, 1, 0});
  // 1 - 2*1/(2+2)
  EXPECT_NEAR(soft_dice_loss(g.input(p), g.input(m), 0.0).value()[0], 0.5, 1e-15);
  TensorD z({1, 1, 2, 2});
  EXPECT_NEAR(soft_dice_loss(g.input(z), g.input(z), 1e-6).value()[0], 1.0, 1e-15);
}
