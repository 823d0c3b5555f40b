#include <gtest/gtest.h>

#include <limits>

#include "maskfield/optimizer.hpp"
#include "test_util.hpp"

using namespace maskfield;

TEST(Adam, TwoStepOracle) {
  std::vector<double> p{1.0};
  OptimizerState st;
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  ASSERT_TRUE(adam_step(p, std::vector<double>{0.5}, st, cfg));
  EXPECT_NEAR(p[0], 0.900000002, 1e-15);
  ASSERT_TRUE(adam_step(p, std::vector<double>{-1.0}, st, cfg));
  EXPECT_NEAR(p[0], 0.9366103542405654, 1e-15);
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, NonFiniteGradientIsSkipped) {
  std::vector<double> p{1.0, 2.0};
  OptimizerState st;
  adam_step(p, std::vector<double>{0.1, 0.2}, st, {});
  const auto before = p;
  const OptimizerState snap = st;
  EXPECT_FALSE(adam_step(p, std::vector<double>{std::numeric_limits<double>::quiet_NaN(), 0.0}, st, {}));
  EXPECT_FALSE(adam_step(p, std::vector<double>{0.0, std::numeric_limits<double>::infinity()}, st, {}));
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.m, snap.m);
  EXPECT_EQ(st.v, snap.v);
  EXPECT_EQ(st.step, snap.step);
  EXPECT_EQ(st.skipped, 2);
}

TEST(Adam, SparseMatchesDenseOnSupport) {
  const std::size_t n = 50;
  std::vector<std::uint32_t> active;
  for (std::uint32_t i = 3; i < n; i += 4) active.push_back(i);
  std::vector<double> pd = testutil::random_vector(n, 1), ps = pd;
  OptimizerState sd, ss;
  for (int step = 0; step < 5; ++step) {
    std::vector<double> g(n, 0.0);
    const auto r = testutil::random_vector(n, 10 + step);
    for (auto i : active) g[i] = r[i];
    adam_step(pd, g, sd, {});
    adam_step_sparse(ps, g, ss, {}, active);
  }
  EXPECT_EQ(pd, ps);
  EXPECT_EQ(sd.m, ss.m);
  EXPECT_EQ(sd.v, ss.v);
  EXPECT_EQ(sd.step, ss.step);
}

TEST(Adam, SparseLeavesInactiveCoordinatesAlone) {
  std::vector<double> p{1, 1, 1};
  OptimizerState st;
  adam_step(p, std::vector<double>{1, 1, 1}, st, {});
  const double untouched = p[0];
  const double m0 = st.m[0];
  const std::vector<std::uint32_t> active{1, 2};
  adam_step_sparse(p, std::vector<double>{5, 1, 1}, st, {}, active);
  EXPECT_EQ(p[0], untouched);
  EXPECT_EQ(st.m[0], m0);
  EXPECT_NE(p[1], untouched);
  // a NaN outside the active set does not matter
  EXPECT_TRUE(adam_step_sparse(p, std::vector<double>{std::nan(""), 1, 1}, st, {}, active));
}

TEST(Adam, ConfigValidation) {
  EXPECT_THROW((AdamConfig{0.0}).validate(), ValidationError);
  EXPECT_THROW((AdamConfig{1e-3, 1.0}).validate(), ValidationError);
  std::vector<double> p(2);
  OptimizerState st;
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, st, {}), ValidationError);
}
