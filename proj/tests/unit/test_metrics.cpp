#include "oracles.hpp"

#include "pam/error.hpp"
#include "pam/metrics.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace pam;

TEST(MetricOracles, AllFourByFourMasks) {
  const auto r = oracle::metric_oracles();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Dsc, Examples) {
  Mask2D a = Mask2D::Zero(4, 4), b = Mask2D::Zero(4, 4);
  EXPECT_EQ(dsc(a, b), 1.0);
  a.block(0, 0, 2, 2).setOnes();
  EXPECT_EQ(dsc(a, a), 1.0);
  b.block(2, 2, 2, 2).setOnes();
  EXPECT_EQ(dsc(a, b), 0.0);
  b.setZero();
  b.block(0, 1, 2, 2).setOnes();
  EXPECT_EQ(dsc(a, b), 0.5);
  EXPECT_THROW(dsc(a, Mask2D::Zero(3, 4)), Error);
}

TEST(Dsc, VolumesAndShapeMismatch) {
  Mask3D a({4, 4, 3}, {1, 1, 1}), b({4, 4, 3}, {1, 1, 1});
  a(1, 1, 1) = b(1, 1, 1) = 1;
  a(2, 2, 2) = 1;
  EXPECT_DOUBLE_EQ(dsc(a, b), 2.0 / 3.0);
  EXPECT_THROW(dsc(a, Mask3D({4, 4, 2}, {1, 1, 1})), Error);
}

TEST(BoxRatio, Examples) {
  EXPECT_EQ(box_ratio(Mask2D::Ones(3, 5)), 1.0);
  Mask2D diag = Mask2D::Zero(4, 4);
  for (int i = 0; i < 4; ++i) diag(i, i) = 1;
  EXPECT_EQ(box_ratio(diag), 0.25);
  EXPECT_THROW(box_ratio(Mask2D::Zero(2, 2)), Error);
}

TEST(BoxRatio, RandomSixBySixAgainstPixelCount) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 2000; ++i) {
    const auto bits = static_cast<std::uint64_t>(rng()) & ((1ull << 36) - 1);
    if (!bits) continue;
    Mask2D m(6, 6);
    for (int k = 0; k < 36; ++k) m.data()[k] = (bits >> k) & 1;
    EXPECT_EQ(box_ratio(m), oracle::box_ratio(m));
    EXPECT_NEAR(*iri(m) / oracle::iri(m), 1.0, 1e-12);
    EXPECT_EQ(convex_ratio(m), oracle::convex_ratio(m));
  }
}

TEST(ConvexRatio, Examples) {
  EXPECT_EQ(convex_ratio(Mask2D::Ones(4, 7)), 1.0);
  Mask2D ring = Mask2D::Ones(3, 3);
  ring(1, 1) = 0;
  EXPECT_EQ(convex_ratio(ring), 8.0 / 9.0);
  Mask2D line = Mask2D::Zero(5, 5);
  line(0, 0) = line(2, 2) = line(4, 4) = 1;  // collinear
  EXPECT_EQ(convex_ratio(line), 1.0);
  EXPECT_THROW(convex_ratio(Mask2D::Zero(2, 2)), Error);
}

TEST(ConvexRatio, NeverAboveOne) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 300; ++i) {
    Mask2D m(12, 12);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng() % 3 == 0;
    if (count(m) == 0) continue;
    EXPECT_LE(convex_ratio(m), 1.0);
    EXPECT_GT(convex_ratio(m), 0.0);
  }
}

TEST(Iri, SquareAndSingular) {
  EXPECT_NEAR(*iri(Mask2D::Ones(2, 2)), 3.0 / std::pow(1.6 * std::numbers::pi, 5.0 / 3.0), 1e-15);
  EXPECT_NEAR(*iri(Mask2D::Ones(2, 2)), 0.2034, 5e-5);
  Mask2D one = Mask2D::Zero(3, 3);
  one(1, 2) = 1;
  EXPECT_FALSE(iri(one).has_value());
}

TEST(Iri, TranslationInvariantAndScaleSensitive) {
  Mask2D a = Mask2D::Zero(10, 10), b = Mask2D::Zero(10, 10), big = Mask2D::Zero(10, 10);
  a.block(1, 1, 3, 2).setOnes();
  b.block(5, 6, 3, 2).setOnes();
  big.block(0, 0, 6, 4).setOnes();
  EXPECT_EQ(*iri(a), *iri(b));
  EXPECT_NE(*iri(a), *iri(big));
}

TEST(Irregularity, UsesLargestSlice) {
  Mask3D m({6, 6, 3}, {1, 1, 1});
  m(0, 0, 0) = 1;
  for (Index y = 1; y < 4; ++y)
    for (Index x = 1; x < 4; ++x) m(x, y, 2) = 1;
  const auto rep = irregularity(m, Axis::kZ);
  EXPECT_EQ(rep.slice, 2);
  EXPECT_EQ(rep.n_pixels, 9);
  EXPECT_EQ(rep.box_ratio, 1.0);
}

TEST(Aggregate, UnweightedMeansPerDataset) {
  std::vector<ObjectRecord> recs{{"b", "1", 0.5, {}}, {"a", "1", 1.0, {}}, {"b", "2", 0.7, {}}};
  const auto s = aggregate(recs);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].dataset, "a");
  EXPECT_EQ(s[1].objects, 2u);
  EXPECT_DOUBLE_EQ(s[1].mean_dsc, 0.6);
  EXPECT_THROW(aggregate({}), std::invalid_argument);
}

TEST(ReportCsv, ColumnsAndSingularIri) {
  ObjectRecord r{"set", "obj", 0.5, {}};
  r.shape.box_ratio = 1;
  r.shape.convex_ratio = 1;
  r.shape.n_pixels = 1;
  EXPECT_EQ(report_csv({r}),
            "dataset,object_id,dsc,box_ratio,convex_ratio,iri,n_pixels\nset,obj,0.5,1,1,,1\n");
}
