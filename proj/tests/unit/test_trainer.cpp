#include "pam/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace pam;

namespace {

NetConfig tiny() { return {16, {2, 3, 4}, 2, 0.01}; }

const PhantomGeometry kSmall{{40, 40, 20}, {1.0, 1.0, 2.5}};

const std::vector<PhantomCase>& suite() {
  static const auto s = make_phantom_suite({ShapeFamily::kEllipsoid, ShapeFamily::kBlob}, 4, 5, kSmall);
  return s;
}

TrainConfig quick() {
  TrainConfig c;
  c.epochs = 2;
  c.samples_per_epoch = 8;
  c.batch = 4;
  c.eval_interval = 1;
  c.seed = 3;
  return c;
}

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST(CosineLr, EndpointsAndMidpoint) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(cosine_lr(0, c), 1e-3);
  EXPECT_DOUBLE_EQ(cosine_lr(100, c), 1e-5);
  EXPECT_DOUBLE_EQ(cosine_lr(250, c), 1e-5);  // held after T_max
  EXPECT_NEAR(cosine_lr(50, c), 0.5 * (1e-3 + 1e-5), 1e-15);
  EXPECT_NEAR(cosine_lr(25, c), 1e-5 + (1e-3 - 1e-5) * (1 + std::cos(std::numbers::pi / 4)) / 2, 1e-15);
  for (int e = 1; e <= 100; ++e) EXPECT_LT(cosine_lr(e, c), cosine_lr(e - 1, c));
}

TEST(TrainConfig, DeskDefaultsAndValidation) {
  const auto b = TrainConfig::box2mask_desk();
  EXPECT_EQ(b.lr0, 1e-3);
  EXPECT_EQ(b.epochs, 60);
  EXPECT_EQ(b.t_max, 100);
  EXPECT_EQ(b.eta_min, 1e-5);
  EXPECT_EQ(b.weight_decay, 1e-4);
  EXPECT_EQ(TrainConfig::propmask_desk().lr0, 5e-4);
  const auto back = TrainConfig::from_json(b.to_json(), TrainConfig{});
  EXPECT_EQ(back.to_json(), b.to_json());
  TrainConfig bad = b;
  bad.eta_min = 2e-3;
  EXPECT_ANY_THROW(bad.validate());
  bad = b;
  bad.batch = 0;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(AdamW, MatchesHandTrace) {
  ParameterSet<double> ps;
  auto& w = ps.add("w", {2});
  w.storage() = {1.0, -2.0};
  OptimizerState<double> st;
  const AdamWParams hp{0.1, 0.01, 0.9, 0.999, 1e-8};
  // Independent double-precision trace of the update rule.
  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  const double g[3][2] = {{0.5, -1.0}, {0.5, 3.0}, {-0.25, 0.0}};
  for (int t = 1; t <= 3; ++t) {
    w.grad = {g[t - 1][0], g[t - 1][1]};
    adamw_step(ps, st, hp);
    for (int i = 0; i < 2; ++i) {
      ref[i] -= hp.lr * hp.weight_decay * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g[t - 1][i];
      v[i] = 0.999 * v[i] + 0.001 * g[t - 1][i] * g[t - 1][i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= hp.lr * mh / (std::sqrt(vh) + 1e-8);
    }
    EXPECT_NEAR(w[0], ref[0], 1e-12);
    EXPECT_NEAR(w[1], ref[1], 1e-12);
  }
  EXPECT_EQ(st.step, 3);
  // First step moves each coordinate by ~lr regardless of gradient scale.
  EXPECT_NEAR(ref[0], 0.999 - 0.1 + 0, 0.25);
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesWeights) {
  ParameterSet<float> ps;
  auto& w = ps.add("w", {3});
  w.storage() = {0.25f, -1.5f, 3.0f};
  const auto before = w.storage();
  OptimizerState<float> st;
  ps.zero_grad();
  adamw_step(ps, st, {1e-2, 0.0});
  EXPECT_EQ(w.storage(), before);
}

TEST(AdamW, NonFiniteGradientDiverges) {
  ParameterSet<float> ps;
  auto& w = ps.add("w", {2});
  w.storage() = {1.f, 2.f};
  w.grad = {std::nanf(""), 0.f};
  OptimizerState<float> st;
  EXPECT_EQ(error_code([&] { adamw_step(ps, st, {}); }), "diverged");
  EXPECT_EQ(w[0], 1.f);
}

TEST(Pools, DrawEligibleSlices) {
  RoiConfig rc;
  rc.resolution = 16;
  const auto rois = build_roi_pool(suite(), 20, rc, 1);
  ASSERT_EQ(rois.size(), 20u);
  for (const auto& s : rois) {
    EXPECT_EQ(s.image.rows(), 16);
    EXPECT_GT(count(s.target), 0);
  }
  TaskConfig tc;
  tc.resolution = 16;
  const auto tasks = build_task_pool(suite(), 6, tc, 1);
  ASSERT_EQ(tasks.size(), 6u);
  for (const auto& t : tasks) EXPECT_EQ(t.adjacent_images.size(), 4u);
  EXPECT_EQ(error_code([] { build_roi_pool({}, 3, RoiConfig{}, 1); }), "empty_dataset");
}

TEST(Training, Box2MaskSameSeedSameCheckpoint) {
  RoiConfig rc;
  rc.resolution = 16;
  const auto train = build_roi_pool(suite(), 16, rc, 1), val = build_roi_pool(suite(), 4, rc, 2);
  std::vector<MetricsRecord> seen;
  const auto a = train_box2mask(train, val, tiny(), quick(), nullptr,
                                [&](const MetricsRecord& r) { seen.push_back(r); });
  const auto b = train_box2mask(train, val, tiny(), quick());
  EXPECT_EQ(a.checkpoint.hash(), b.checkpoint.hash());
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  auto other = quick();
  other.seed = 4;
  EXPECT_NE(train_box2mask(train, val, tiny(), other).checkpoint.hash(), a.checkpoint.hash());

  // Train and validation records every epoch, DSC only on validation.
  ASSERT_EQ(seen.size(), 4u);
  EXPECT_EQ(seen[0].split, "train");
  EXPECT_FALSE(seen[0].dsc);
  EXPECT_EQ(seen[1].split, "val");
  ASSERT_TRUE(seen[1].dsc);
  EXPECT_GE(*seen[1].dsc, 0.0);
  EXPECT_LE(*seen[1].dsc, 1.0);
  EXPECT_DOUBLE_EQ(seen[0].lr, cosine_lr(0, quick()));
  EXPECT_EQ(a.checkpoint.kind, ModelKind::kBox2Mask);
  EXPECT_FALSE(a.checkpoint.finetuned);
}

TEST(Training, ZeroLearningRateLeavesWeights) {
  RoiConfig rc;
  rc.resolution = 16;
  const auto train = build_roi_pool(suite(), 8, rc, 1);
  auto cfg = quick();
  cfg.lr0 = 0;
  cfg.eta_min = 0;
  cfg.epochs = 1;
  const auto r = train_box2mask(train, {}, tiny(), cfg);
  Box2MaskNet<float> fresh(tiny(), cfg.seed);
  EXPECT_EQ(r.checkpoint.params.hash(), export_parameters(fresh.params()).hash());
}

TEST(Training, PropMaskFineTuneRecordsBase) {
  TaskConfig tc;
  tc.resolution = 16;
  const auto tasks = build_task_pool(suite(), 4, tc, 1);
  auto cfg = quick();
  cfg.samples_per_epoch = 4;
  cfg.batch = 2;
  const auto base = train_propmask(tasks, tasks, tiny(), cfg);
  EXPECT_EQ(base.checkpoint.kind, ModelKind::kPropMask);
  cfg.epochs = 1;
  const auto tuned = train_propmask(tasks, {}, tiny(), cfg, &base.checkpoint);
  EXPECT_TRUE(tuned.checkpoint.finetuned);
  ASSERT_TRUE(tuned.checkpoint.base_hash);
  EXPECT_EQ(*tuned.checkpoint.base_hash, base.checkpoint.hash());
  EXPECT_NE(tuned.checkpoint.hash(), base.checkpoint.hash());

  // Wrong kind or shape is refused.
  RoiConfig rc;
  rc.resolution = 16;
  const auto rois = build_roi_pool(suite(), 4, rc, 1);
  EXPECT_EQ(error_code([&] { train_box2mask(rois, {}, tiny(), cfg, &base.checkpoint); }),
            "checkpoint_mismatch");
  EXPECT_EQ(error_code([&] { box2mask_from(base.checkpoint); }), "checkpoint_mismatch");
  EXPECT_EQ(propmask_from(base.checkpoint)->params().hash(), [&] {
    PropMaskNet<float> n(tiny(), 0);
    assign_parameters(n.params(), base.checkpoint.params);
    return n.params().hash();
  }());
}

TEST(Training, KeepBestReturnsBestValidationSnapshot) {
  RoiConfig rc;
  rc.resolution = 16;
  const auto train = build_roi_pool(suite(), 16, rc, 1), val = build_roi_pool(suite(), 4, rc, 2);
  auto cfg = quick();
  cfg.epochs = 3;
  cfg.keep_best = true;
  const auto r = train_box2mask(train, val, tiny(), cfg);
  double best = -1;
  for (const auto& rec : r.log)
    if (rec.split == "val") best = std::max(best, *rec.dsc);
  auto net = box2mask_from(r.checkpoint);
  EXPECT_NEAR(evaluate_box2mask(*net, val), best, 1e-12);
}

TEST(Training, EmptyDatasetRefused) {
  EXPECT_EQ(error_code([] { train_box2mask({}, {}, tiny(), quick()); }), "empty_dataset");
}

TEST(PhantomSuite, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pam_suite_test";
  std::filesystem::remove_all(dir);
  save_phantom_suite(suite(), dir.string());
  const auto back = load_phantom_suite(dir.string());
  ASSERT_EQ(back.size(), suite().size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, suite()[i].id);
    EXPECT_TRUE(back[i].volume == suite()[i].volume);
    EXPECT_TRUE(back[i].mask == suite()[i].mask);
    EXPECT_EQ(back[i].spec.to_json(), suite()[i].spec.to_json());
  }
  std::filesystem::remove_all(dir);
  EXPECT_EQ(error_code([&] { load_phantom_suite(dir.string()); }), "not_found");
}
