#include <gtest/gtest.h>

#include "maskfield/metrics.hpp"

using namespace maskfield;

using L = std::vector<std::int32_t>;

TEST(Metrics, MiouOracle) {
  // class 0: 1/2, class 1: 2/3
  const ClassIou r = miou(L{0, 0, 1, 1}, L{0, 1, 1, 1}, 2, 2);
  EXPECT_NEAR(r.per_class.at(0), 0.5, 1e-15);
  EXPECT_NEAR(r.per_class.at(1), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.mean, 7.0 / 12.0, 1e-15);
}

TEST(Metrics, BackgroundAndSpuriousClasses) {
  // predicted background on a class-0 pixel counts against class 0; class 2
  // appears only in the prediction and scores 0
  const ClassIou r = miou(L{-1, 0, 2, -1}, L{0, 0, -1, -1}, 1, 4);
  EXPECT_NEAR(r.per_class.at(0), 0.5, 1e-15);
  EXPECT_EQ(r.per_class.at(2), 0.0);
  EXPECT_NEAR(r.mean, 0.25, 1e-15);
  EXPECT_EQ(miou(L{-1, -1}, L{-1, -1}, 1, 2).mean, 1.0);
  EXPECT_THROW(miou(L{0}, L{0, 0}, 1, 2), ValidationError);
}

TEST(Metrics, BoundaryBandOracle) {
  // 5 x 5, class 1 is the central 3 x 3 block
  L lab(25, 0);
  for (int r = 1; r <= 3; ++r)
    for (int c = 1; c <= 3; ++c) lab[r * 5 + c] = 1;
  const auto b1 = boundary_band(lab, 5, 5, 1, 1);
  int n1 = 0;
  for (auto v : b1) n1 += v;
  EXPECT_EQ(n1, 9);  // contour ring of 8 plus the center within distance 1
  const auto b1_0 = boundary_band(lab, 5, 5, 1, 0);
  EXPECT_EQ(b1_0[2 * 5 + 2], 0);
  const auto b0 = boundary_band(lab, 5, 5, 0, 1);
  int n0 = 0;
  for (auto v : b0) n0 += v;
  EXPECT_EQ(n0, 16);
}

TEST(Metrics, BoundaryIouShiftedEdge) {
  // gt edge between pixels 2|3, prediction edge between 1|2, d = 1:
  // class 0 bands {1,2} vs {0,1}, class 1 bands {3,4} vs {2,3}
  const ClassIou r = boundary_iou(L{0, 0, 1, 1, 1, 1}, L{0, 0, 0, 1, 1, 1}, 1, 6, 1);
  EXPECT_NEAR(r.per_class.at(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.per_class.at(1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(boundary_iou(L{0, 0, 1, 1}, L{0, 0, 1, 1}, 2, 2).mean, 1.0, 1e-15);
}

TEST(Metrics, BoundaryIouWithoutContours) {
  EXPECT_EQ(boundary_iou(L(9, 4), L(9, 4), 3, 3).mean, 1.0);
  const ClassIou r = boundary_iou(L(9, 4), L(9, -1), 3, 3);
  EXPECT_EQ(r.per_class.at(4), 0.0);
  EXPECT_THROW(boundary_iou(L(9, 4), L(9, 4), 3, 3, 0), ValidationError);
}

TEST(Metrics, AccuracyOracle) {
  const AccuracyResult a = accuracy(L{0, 0, 1, 0}, L{-1, 0, 1, 1}, 2, 2);
  EXPECT_NEAR(a.value, 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(a.gt_all_background);
  const AccuracyResult b = accuracy(L{0, 1}, L{-1, -1}, 1, 2);
  EXPECT_EQ(b.value, 1.0);
  EXPECT_TRUE(b.gt_all_background);
}

TEST(Metrics, AccumulatorPoolsCounts) {
  EvalAccumulator acc;
  acc.add(L{0, 0}, L{0, 0}, 1, 2);
  acc.add(L{0, 1}, L{0, 0}, 1, 2);
  const EvalReport r = acc.report();
  EXPECT_NEAR(r.per_class_iou.at(0), 0.75, 1e-15);
  EXPECT_EQ(r.per_class_iou.at(1), 0.0);
  EXPECT_NEAR(r.miou, 0.375, 1e-15);
  EXPECT_NEAR(r.acc, 0.75, 1e-15);
  EXPECT_EQ(r.n_views, 2);
}
