#include "pam/error.hpp"
#include "pam/phantom.hpp"
#include "pam/preprocess.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pam;

TEST(BoundingBox, TightAndHalfOpen) {
  Mask2D m = Mask2D::Zero(10, 12);
  m(2, 3) = m(6, 8) = 1;
  const auto b = bounding_box(m);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->x0, 3);
  EXPECT_EQ(b->y0, 2);
  EXPECT_EQ(b->x1, 9);
  EXPECT_EQ(b->y1, 7);
  EXPECT_FALSE(bounding_box(Mask2D::Zero(3, 3)));
  EXPECT_FALSE(tight_bbox(m));  // two pixels is below the foreground floor
  EXPECT_TRUE(tight_bbox(Mask2D::Ones(11, 11)));
}

TEST(ScaleBox, KeepsCentreAndClamps) {
  const Box2D b{10, 10, 20, 30};
  const auto s = scale_box(b, 1.5, 1.5, 100, 100);
  EXPECT_EQ(s.width(), 16);  // 7.5 each side, rounded outwards
  EXPECT_EQ(s.height(), 30);
  EXPECT_EQ(s.x0 + s.x1, b.x0 + b.x1);
  const auto c = scale_box(b, 10, 10, 40, 25);
  EXPECT_EQ(c.x0, 0);
  EXPECT_EQ(c.y0, 0);
  EXPECT_EQ(c.x1, 25);
  EXPECT_EQ(c.y1, 40);
}

TEST(JitterBox, ContainsOriginalWhenGrowing) {
  std::mt19937_64 rng(1);
  const Box2D b{30, 30, 50, 45};
  for (int i = 0; i < 200; ++i) {
    const auto j = jitter_bbox(b, 1.0, 1.25, 100, 100, rng);
    EXPECT_TRUE(j.contains(b));
    EXPECT_LE(j.width(), 26);
  }
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 50), 5.0);
  EXPECT_DOUBLE_EQ(percentile({3, 1, 2}, 0), 1.0);
  EXPECT_DOUBLE_EQ(percentile({3, 1, 2}, 100), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 25), 2.0);
}

TEST(Normalization, RangeAndDegenerate) {
  Image img(2, 2);
  img << 0, 1, 2, 3;
  const auto p = norm_params(img, Mask2D::Ones(2, 2), 0, 100);
  const auto n = apply_normalization(img, p);
  EXPECT_EQ(n(0, 0), 0.f);
  EXPECT_EQ(n(1, 1), 1.f);
  const auto d = norm_params(Image::Constant(3, 3, 7.f), Mask2D::Ones(3, 3));
  EXPECT_TRUE(d.degenerate);
  EXPECT_TRUE((apply_normalization(Image::Constant(3, 3, 7.f), d) == 0.5f).all());
}

TEST(Resize, MaskNearestAndIdentity) {
  Mask2D m = Mask2D::Zero(4, 4);
  m(1, 2) = 1;
  EXPECT_TRUE((resize_mask(m, 4, 4) == m).all());
  const auto up = resize_mask(m, 8, 8);
  EXPECT_EQ(count(up), 4);
  EXPECT_EQ(up(2, 4), 1);
  Image img = Image::Random(5, 6);
  EXPECT_TRUE((resize_image(img, 5, 6) == img).all());
}

TEST(Geometry, FlipsAndZeroRotation) {
  Image img = Image::Random(5, 7);
  EXPECT_TRUE((flip_horizontal<float>(flip_horizontal<float>(img)) == img).all());
  EXPECT_TRUE((flip_vertical<float>(flip_vertical<float>(img)) == img).all());
  EXPECT_TRUE((rotate(img, 0.0) - img).abs().maxCoeff() < 1e-6f);
  Mask2D m = Mask2D::Zero(9, 9);
  m.block(2, 3, 4, 2).setOnes();
  EXPECT_TRUE((rotate(m, 0.0) == m).all());
  EXPECT_EQ(count(rotate(m, 90.0)), count(m));
}

TEST(CandidateOffsets, ThicknessAndBounds) {
  EXPECT_EQ(candidate_offsets(5, 40, 2.5, 10.0), (std::vector<Index>{-4, -3, -2, -1, 1, 2, 3, 4}));
  EXPECT_EQ(candidate_offsets(1, 4, 2.5, 10.0), (std::vector<Index>{-1, 1, 2}));
}

TEST(RoiTask, SharedCropAndResolution) {
  PhantomSpec spec;
  spec.center_mm = {40, 40, 50};
  spec.size_mm = {15, 12, 20};
  const auto [vol, mask] = generate_phantom(spec, {80, 80, 40}, {1, 1, 2.5});
  std::mt19937_64 rng(3);
  const auto task = build_roi_task(vol, mask, Axis::kZ, 20, TaskConfig{}, rng);
  EXPECT_EQ(task.adjacent_images.size(), 4u);
  EXPECT_EQ(task.guide_image.rows(), 64);
  for (const auto& a : task.adjacent_images) EXPECT_EQ(a.cols(), 64);
  for (double o : task.offsets_mm) {
    EXPECT_LE(std::abs(o), 20.0);
    EXPECT_NE(o, 0.0);
  }
  const auto s = build_roi_sample(vol, mask, Axis::kZ, 20, RoiConfig{}, rng);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->target.rows(), 64);
  EXPECT_GE(s->image.minCoeff(), 0.f);
  EXPECT_LE(s->image.maxCoeff(), 1.f);
  EXPECT_FALSE(build_roi_sample(vol, mask, Axis::kZ, 0, RoiConfig{}, rng));
}

TEST(Phantom, GenerationIsDeterministicAndFits) {
  std::mt19937_64 a(4), b(4);
  const PhantomGeometry geo;
  for (auto f : {ShapeFamily::kEllipsoid, ShapeFamily::kCapsule, ShapeFamily::kTorus, ShapeFamily::kBlob}) {
    const auto sa = random_phantom_spec(f, geo, a), sb = random_phantom_spec(f, geo, b);
    const auto [va, ma] = generate_phantom(sa, geo.dims, geo.spacing);
    const auto [vb, mb] = generate_phantom(sb, geo.dims, geo.spacing);
    EXPECT_TRUE(va == vb);
    EXPECT_TRUE(ma == mb);
    EXPECT_GT(ma.voxels.cast<int>().sum(), 500);
    // nothing touches the volume border
    for (Index z : {Index{0}, geo.dims[2] - 1}) EXPECT_EQ(count(ma.slice(Axis::kZ, z)), 0);
    EXPECT_EQ(PhantomSpec::from_json(sa.to_json()).to_json(), sa.to_json());
  }
}

TEST(Erode, ShrinksBySquareRadius) {
  Mask2D m = Mask2D::Zero(10, 10);
  m.block(2, 3, 5, 6).setOnes();
  m(0, 0) = 1;
  const Mask2D e = erode(m, 1);
  EXPECT_EQ(count(e), 3 * 4);
  EXPECT_EQ(e.block(3, 4, 3, 4).minCoeff(), 1);
  EXPECT_EQ(count(erode(m, 2)), 1 * 2);
  EXPECT_EQ(count(erode(m, 3)), 0);
  EXPECT_TRUE((erode(m, 0) == m).all());
  // The image border counts as background.
  EXPECT_EQ(count(erode(Mask2D::Ones(4, 4), 1)), 4);
  EXPECT_THROW(erode(m, -1), std::invalid_argument);
}
