#include "pam/box2mask.hpp"
#include "pam/propmask.hpp"
#include "pam/trainer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pam;

namespace {

Image random_image(Index r, std::mt19937_64& rng) {
  Image img(r, r);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng);
  return img;
}

Mask2D disc(Index r, double cx, double cy, double rad) {
  Mask2D m = Mask2D::Zero(r, r);
  for (Index y = 0; y < r; ++y)
    for (Index x = 0; x < r; ++x)
      m(y, x) = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= rad * rad;
  return m;
}

Image render(const Mask2D& m) { return m.cast<float>() * 0.6f + 0.2f; }

bool same(const Image& a, const Image& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

NetConfig small() { return {32, {4, 8, 8, 8}, 2, 0.01}; }

}  // namespace

TEST(Box2MaskNet, DeepSupervisionHeadsPerLevel) {
  Box2MaskNet<float> net(small(), 1);
  std::mt19937_64 rng(1);
  Graph<float> g(false);
  const auto outs = net.forward(g, g.input(pack_images<float>(std::vector<Image>{random_image(32, rng)}, 3)));
  ASSERT_EQ(outs.size(), 4u);
  for (std::size_t l = 0; l < outs.size(); ++l) {
    EXPECT_EQ(outs[l].dim(2), 32 >> l);
    for (Index i = 0; i < outs[l].value().numel(); ++i) {
      EXPECT_GT(outs[l].value()[i], 0.f);
      EXPECT_LT(outs[l].value()[i], 1.f);
    }
  }
}

TEST(Box2MaskNet, SeededInitIsReproducible) {
  EXPECT_EQ(Box2MaskNet<float>(small(), 3).params().hash(), Box2MaskNet<float>(small(), 3).params().hash());
  EXPECT_NE(Box2MaskNet<float>(small(), 3).params().hash(), Box2MaskNet<float>(small(), 4).params().hash());
}

TEST(Box2MaskNet, PredictionIsBatchInvariant) {
  Box2MaskNet<float> net(small(), 2);
  std::mt19937_64 rng(2);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(random_image(32, rng));
  const auto batched = net.predict(imgs);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    EXPECT_TRUE(same(net.predict({imgs[i]})[0], batched[i])) << i;
}

TEST(Box2MaskNet, RejectsWrongResolution) {
  Box2MaskNet<float> net(small(), 2);
  std::mt19937_64 rng(2);
  EXPECT_THROW(net.predict({random_image(16, rng)}), std::invalid_argument);
}

TEST(PropMaskNet, BatchedAdjacentSlicesEqualPerSliceRuns) {
  PropMaskNet<float> net(small(), 5);
  std::mt19937_64 rng(5);
  const Image guide = random_image(32, rng);
  const Image prompt = disc(32, 16, 16, 7).cast<float>();
  std::vector<Image> adj;
  for (int i = 0; i < 6; ++i) adj.push_back(random_image(32, rng));
  const auto feats = net.encode_guide(guide, prompt);
  const auto batched = net.predict(feats, adj, 16);
  const auto chunked = net.predict(feats, adj, 4);
  for (std::size_t i = 0; i < adj.size(); ++i) {
    EXPECT_TRUE(same(net.predict(feats, {adj[i]})[0], batched[i])) << i;
    EXPECT_TRUE(same(chunked[i], batched[i])) << i;
  }
  // permuting the batch permutes the outputs
  std::vector<Image> rev(adj.rbegin(), adj.rend());
  const auto out_rev = net.predict(feats, rev);
  for (std::size_t i = 0; i < adj.size(); ++i) EXPECT_TRUE(same(out_rev[i], batched[adj.size() - 1 - i]));
}

TEST(PropMaskNet, CachedGuideMatchesSingleGraphForward) {
  PropMaskNet<float> net(small(), 6);
  std::mt19937_64 rng(6);
  const Image guide = random_image(32, rng);
  const Image prompt = disc(32, 12, 18, 6).cast<float>();
  const std::vector<Image> adj{random_image(32, rng), random_image(32, rng)};
  Graph<float> g(false);
  const auto p = net.forward(g, g.input(pack_images<float>(std::vector<Image>{guide}, 3)),
                             g.input(pack_images<float>(std::vector<Image>{prompt}, 1)),
                             g.input(pack_images<float>(adj, 3)))
                     .value();
  const auto cached = net.predict(net.encode_guide(guide, prompt), adj);
  for (std::size_t i = 0; i < adj.size(); ++i) {
    Image one(32, 32);
    std::copy_n(p.data() + static_cast<Index>(i) * 1024, 1024, one.data());
    EXPECT_TRUE(same(one, cached[i]));
  }
}

TEST(PropMaskNet, ParameterNamesFollowLayout) {
  PropMaskNet<float> net(small(), 1);
  std::set<std::string> prefixes;
  for (const auto& e : net.params().entries()) prefixes.insert(e.name.substr(0, e.name.find('.')));
  EXPECT_EQ(prefixes, (std::set<std::string>{"dec", "head", "img_enc", "mask_enc"}));
}

TEST(CrossAttend, RejectsMismatchedShapes) {
  Graph<float> g(false);
  EXPECT_THROW(cross_attend(g.input(TensorF({2, 4, 2, 2})), g.input(TensorF({3, 4, 2, 2})),
                            g.input(TensorF({2, 4, 2, 2}))),
               std::invalid_argument);
  EXPECT_THROW(cross_attend(g.input(TensorF({1, 4, 2, 2})), g.input(TensorF({1, 3, 2, 2})),
                            g.input(TensorF({1, 4, 2, 2}))),
               std::invalid_argument);
}

// Overfit smoke tests on one fixed batch. Targets fill most of the crop,
// as tight-box ROIs do.
TEST(Overfit, Box2MaskSingleBatch) {
  const NetConfig cfg = NetConfig::desk();
  Box2MaskNet<float> net(cfg, 7);
  std::vector<Image> imgs;
  std::vector<Mask2D> masks;
  for (int i = 0; i < 4; ++i) {
    masks.push_back(disc(64, 30 + 2 * i, 33 - i, 18 + 3 * i));
    imgs.push_back(render(masks.back()));
  }
  const auto x = pack_images<float>(imgs, 3);
  const auto target = pack_images<float>(masks, 1);
  net.params().set_requires_grad(true);
  OptimizerState<float> state;
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    Graph<float> g;
    auto loss = box2mask_loss(net.forward(g, g.input(x)), target);
    losses.push_back(loss.value()[0]);
    net.params().zero_grad();
    g.backward(loss);
    adamw_step(net.params(), state, AdamWParams{1e-3, 1e-4});
  }
  for (int i = 1; i < 50; ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
  EXPECT_LT(losses.back(), 0.05);
}

TEST(Overfit, PropMaskSingleTask) {
  const NetConfig cfg = NetConfig::desk();
  PropMaskNet<float> net(cfg, 7);
  const Mask2D guide_mask = disc(64, 32, 32, 22);
  std::vector<Image> adj;
  std::vector<Mask2D> targets;
  for (int i = 0; i < 4; ++i) {
    targets.push_back(disc(64, 31 + i, 32 - i, 24 - 2 * i));
    adj.push_back(render(targets.back()));
  }
  const auto guide = pack_images<float>(std::vector<Image>{render(guide_mask)}, 3);
  const auto prompt = pack_images<float>(std::vector<Mask2D>{guide_mask}, 1);
  const auto adjacent = pack_images<float>(adj, 3);
  const auto target = pack_images<float>(targets, 1);
  net.params().set_requires_grad(true);
  OptimizerState<float> state;
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    Graph<float> g;
    auto loss = propmask_loss(net.forward(g, g.input(guide), g.input(prompt), g.input(adjacent)), target);
    losses.push_back(loss.value()[0]);
    net.params().zero_grad();
    g.backward(loss);
    adamw_step(net.params(), state, AdamWParams{1e-3, 1e-4});
  }
  for (int i = 1; i < 50; ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
  EXPECT_LT(losses.back(), 0.05);
}

TEST(Box2MaskNet, ZeroHeadsGiveOneHalf) {
  Box2MaskNet<float> net(small(), 1);
  for (auto& e : net.params().entries())
    if (e.name.rfind("head", 0) == 0) std::fill(e.tensor.storage().begin(), e.tensor.storage().end(), 0.f);
  std::mt19937_64 rng(1);
  const auto p = net.predict({random_image(32, rng)})[0];
  EXPECT_TRUE((p == 0.5f).all());
}

TEST(Box2MaskNet, ReferenceParameterCountMatchesHandCount) {
  const NetConfig cfg = NetConfig::reference();
  const std::vector<Index> ch{32, 64, 128, 256, 512, 512};
  Index n = 0;
  Index in = 3;
  for (Index c : ch) {  // two 3x3 conv (+bias) + instance-norm affine per stage
    n += in * c * 9 + c + 2 * c + c * c * 9 + c + 2 * c;
    in = c;
  }
  for (std::size_t l = 0; l + 1 < ch.size(); ++l) {  // up-conv, then two blocks on the concat
    const Index c = ch[l];
    n += ch[l + 1] * c * 4;
    n += 2 * c * c * 9 + c + 2 * c + c * c * 9 + c + 2 * c;
  }
  for (Index c : ch) n += c + 1;  // 1x1 heads
  EXPECT_EQ(Box2MaskNet<float>(cfg, 0).params().count(), n);
}

TEST(Box2MaskLoss, HandEvaluatedHalfProbabilities) {
  Graph<double> g(false);
  TensorD p({1, 1, 4, 4}, 0.5), m({1, 1, 4, 4});
  for (Index i = 0; i < 8; ++i) m[i] = 1;
  // 1 - 2 * 4 / (4 + 8 + 1e-6), the only head
  const double want = 1.0 - 8.0 / (12.0 + 1e-6);
  EXPECT_NEAR(box2mask_loss(std::vector<Var<double>>{g.input(p)}, m, 1e-6).value()[0], want, 1e-9);
}

TEST(Box2MaskInfer, ThresholdingStubRecoversMaskExactly) {
  const Mask2D truth = disc(64, 30, 34, 17);
  Image roi(64, 64);
  for (Index r = 0; r < 64; ++r)
    for (Index c = 0; c < 64; ++c) roi(r, c) = truth(r, c) ? 300.f + float(r + c) : 100.f;
  // Thresholds the normalized input: during the search the background sits at
  // the lower percentile (0) and the object is far above it.
  int calls = 0;
  const ProbabilityModel stub = [&](const std::vector<Image>& xs) {
    ++calls;
    std::vector<Image> out;
    for (const auto& x : xs) out.push_back((x > 0.5f).cast<float>());
    return out;
  };
  const auto r = box2mask_infer(roi, stub, PercentileGrid::desk(), 64);
  EXPECT_EQ(calls, 2);
  EXPECT_FALSE(r.low_confidence);
  // Final normalization uses the percentiles of the preliminary foreground.
  std::vector<double> fg;
  for (Index i = 0; i < roi.size(); ++i)
    if (truth.data()[i]) fg.push_back(roi.data()[i]);
  EXPECT_DOUBLE_EQ(r.params.v_min, percentile(fg, 0.5));
  EXPECT_DOUBLE_EQ(r.params.v_max, percentile(fg, 99.5));
  // The final pass thresholds at mid-range of the object's own intensities.
  Mask2D want = truth;
  for (Index i = 0; i < roi.size(); ++i)
    want.data()[i] = truth.data()[i] && (roi.data()[i] - r.params.v_min) / (r.params.v_max - r.params.v_min) > 0.5;
  EXPECT_TRUE((r.mask == want).all());
  EXPECT_EQ(PercentileGrid::reference().size(), 396u);
  EXPECT_EQ(PercentileGrid::desk().size(), 18u);
  EXPECT_EQ((PercentileGrid{{5}, {95}}.size()), 1u);
}

TEST(Box2MaskInfer, EmptyForegroundFlagsLowConfidence) {
  const ProbabilityModel nothing = [](const std::vector<Image>& xs) {
    return std::vector<Image>(xs.size(), Image::Zero(64, 64));
  };
  const auto r = box2mask_infer(Image::Random(64, 64), nothing, PercentileGrid::desk(), 64);
  EXPECT_TRUE(r.low_confidence);
  EXPECT_EQ(count(r.mask), 0);
}
