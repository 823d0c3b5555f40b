#include <gtest/gtest.h>

#include "maskfield/losses.hpp"
#include "test_util.hpp"

using namespace maskfield;

namespace {

MaskSet two_masks() {
  MaskSet t;
  t.view_id = 3;
  t.height = 2;
  t.width = 2;
  t.d_s = 2;
  t.masks = {0, 0, 1, 1, 1, 1, 0, 0};
  t.embeddings = {0, 1, 1, 0};
  return t;
}

const std::vector<double> kProbs{0.9, 0.8, 0.1, 0.2, 0.1, 0.2, 0.7, 0.9, 0.5, 0.5, 0.5, 0.5};
const std::vector<double> kSemantic{1, 0, 0, 1, 0.6, 0.8};

}  // namespace

TEST(Losses, FocalOracle) {
  const std::vector<double> p{0.9, 0.9, 0.2, 0.6}, y{1, 0, 1, 0};
  EXPECT_NEAR(focal_loss(p, y, 2.0, 0.25), 0.47599810221962635, 1e-14);
  // clamped extremes stay finite
  EXPECT_NEAR(focal_loss(std::vector<double>{0.0}, std::vector<double>{1.0}, 2.0, 0.25), 4.029523106834838, 1e-9);
  EXPECT_NEAR(focal_loss(std::vector<double>{1.0}, std::vector<double>{0.0}, 2.0, 0.25), 12.088569320899282, 1e-6);
}

TEST(Losses, DiceCosineExtraOracles) {
  EXPECT_NEAR(dice_loss(std::vector<double>{1, 0, 0.5}, std::vector<double>{1, 0, 1}), 1.0 / 9.0, 1e-15);
  EXPECT_NEAR(cosine_loss(std::vector<double>{1, 0}, std::vector<double>{M_SQRT1_2, M_SQRT1_2}), 1 - M_SQRT1_2, 1e-15);
  EXPECT_EQ(cosine_loss(std::vector<double>{0, 0}, std::vector<double>{1, 0}), 1.0);
  const std::vector<double> probs{0.5, 0.5, 1, 0};
  EXPECT_DOUBLE_EQ(extra_loss(probs, 2, std::vector<int>{1}), 0.5);
  EXPECT_DOUBLE_EQ(extra_loss(probs, 2, std::vector<int>{0, 1}), 0.75);
  EXPECT_DOUBLE_EQ(extra_loss(probs, 2, std::vector<int>{}), 0.0);
}

TEST(Losses, PerfectPredictionHasZeroDiceAndCosine) {
  const std::vector<double> m{1, 0, 1, 0};
  EXPECT_NEAR(dice_loss(m, m), 0.0, 1e-15);
  EXPECT_NEAR(cosine_loss(std::vector<double>{0.3, 0.4}, std::vector<double>{0.6, 0.8}), 0.0, 1e-15);
}

TEST(Losses, TotalLossOracle) {
  const MaskSet t = two_masks();
  t.validate();
  const LossResult r = total_loss(kProbs, kSemantic, 3, t, {});
  const std::vector<std::pair<int, int>> want{{1, 0}, {0, 1}};
  EXPECT_EQ(r.match.pairs, want);
  EXPECT_EQ(r.match.unmatched_preds, (std::vector<int>{2}));
  EXPECT_NEAR(r.loss.l_focal, 0.003219055642971586, 1e-14);
  EXPECT_NEAR(r.loss.l_dice, 0.1314285714285714, 1e-14);
  EXPECT_NEAR(r.loss.l_feature, 0.0, 1e-14);
  EXPECT_NEAR(r.loss.l_extra, 0.25, 1e-14);
  EXPECT_NEAR(r.loss.l_total, 0.15964762707154298, 1e-14);
  const CostMatrix c = pairwise_cost(kProbs, kSemantic, 3, t, {});
  EXPECT_NEAR(c(0, 0), 2.4037835473207503, 1e-12);
  EXPECT_NEAR(c(2, 1), 0.8866433975699932, 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const MaskSet t = two_masks();
  std::vector<double> probs = kProbs, sem = kSemantic;
  const LossResult r = total_loss(probs, sem, 3, t, {});
  auto f = [&] { return total_loss(probs, sem, 3, t, {}, false, r.match).loss.l_total; };
  for (std::size_t i = 0; i < probs.size(); ++i)
    EXPECT_LT(testutil::rel_error(r.grad_probs[i], testutil::central_difference(f, probs, i, 1e-6)), 1e-7) << i;
  for (std::size_t i = 0; i < sem.size(); ++i)
    EXPECT_LT(testutil::rel_error(r.grad_semantic[i], testutil::central_difference(f, sem, i, 1e-6)), 1e-7) << i;
}

TEST(Losses, FocalGradientZeroWhenClamped) {
  std::vector<double> g(2, 0.0);
  focal_loss(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}, 2.0, 0.25, g);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Losses, Validation) {
  MaskSet t = two_masks();
  EXPECT_THROW(pairwise_cost(kProbs, kSemantic, 1, t, {}), ValidationError);  // 2 masks, 1 token
  t.embeddings = {0, 2, 1, 0};
  EXPECT_THROW(t.validate(), ValidationError);
  t = two_masks();
  t.masks[0] = 1.5;
  EXPECT_THROW(t.validate(), ValidationError);
  EXPECT_THROW(dice_loss(std::vector<double>{1}, std::vector<double>{1, 0}), ValidationError);
}
