#include <gtest/gtest.h>

#include "maskfield/token_bank.hpp"
#include "test_util.hpp"

using namespace maskfield;

TEST(TokenBank, FourierEncodingOracle) {
  const auto e = fourier_encode(1, 4, 2);  // x = 0.25
  ASSERT_EQ(e.size(), 4u);
  EXPECT_NEAR(e[0], 1.0, 1e-15);
  EXPECT_NEAR(e[1], 0.0, 1e-15);
  EXPECT_NEAR(e[2], 0.0, 1e-15);
  EXPECT_NEAR(e[3], -1.0, 1e-15);
  const auto z = fourier_encode(0, 4, 3);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(z[2 * f], 0.0);
    EXPECT_EQ(z[2 * f + 1], 1.0);
  }
  EXPECT_THROW(fourier_encode(4, 4, 2), ValidationError);
}

TEST(TokenBank, SemanticTokensAreUnitAndDeterministic) {
  const TokenBank b = make_token_bank(16, 8, 12, 42);
  const Tokens t = compute_tokens(b);
  EXPECT_EQ(t.query.size(), 16u * 8u);
  for (int i = 0; i < 16; ++i) {
    double n = 0;
    for (double v : t.s(i)) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
  EXPECT_EQ(make_token_bank(16, 8, 12, 42), b);
  EXPECT_NE(make_token_bank(16, 8, 12, 43), b);
}

TEST(TokenBank, ZeroSemanticOutputIsDegenerate) {
  TokenBank b = make_token_bank(4, 2, 3, 1);
  std::fill(b.semantic_mlp.params.begin(), b.semantic_mlp.params.end(), 0.0);
  const Tokens t = compute_tokens(b);
  for (int i = 0; i < 4; ++i) {
    EXPECT_TRUE(t.degenerate[i]);
    for (double v : t.s(i)) EXPECT_EQ(v, 0.0);
  }
}

TEST(TokenBank, MaskLogitsOracle) {
  const std::vector<double> f{1, 2, 3, -1};  // two pixels, d_m = 2
  const std::vector<double> q{1, 0, 0.5, 0.5};
  const MaskLogits l = mask_logits(f, 1, 2, 2, q, 2);
  EXPECT_EQ(l.values, (std::vector<double>{1, 3, 1.5, 1}));
  const auto p = mask_probabilities(l);
  EXPECT_NEAR(p[0], 0.7310585786300049, 1e-15);
  EXPECT_THROW(mask_logits(f, 1, 2, 3, q, 2), ValidationError);
}

TEST(TokenBank, BackpropMatchesFiniteDifferences) {
  TokenBank b = make_token_bank(5, 3, 4, 7, 3, 8);
  const int h = 2, w = 3;
  std::vector<double> feat = testutil::random_vector(h * w * 3, 8);
  const auto a = testutil::random_vector(5 * h * w, 9);
  const auto c = testutil::random_vector(5 * 4, 10);
  auto f = [&] {
    const Tokens t = compute_tokens(b);
    const MaskLogits l = mask_logits(feat, h, w, t);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * l.values[i];
    for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * t.semantic[i];
    return s;
  };
  const Tokens t = compute_tokens(b);
  const TokenGradients g = backprop_tokens(b, t, feat, h, w, a, c);
  double worst = 0;
  for (std::size_t i = 0; i < b.query_mlp.params.size(); ++i)
    worst = std::max(worst, testutil::rel_error(g.query_mlp[i], testutil::central_difference(f, b.query_mlp.params, i, 1e-6)));
  for (std::size_t i = 0; i < b.semantic_mlp.params.size(); ++i)
    worst = std::max(worst, testutil::rel_error(g.semantic_mlp[i], testutil::central_difference(f, b.semantic_mlp.params, i, 1e-6)));
  for (std::size_t i = 0; i < feat.size(); ++i)
    worst = std::max(worst, testutil::rel_error(g.feature[i], testutil::central_difference(f, feat, i, 1e-6)));
  EXPECT_LT(worst, 1e-6);
}
