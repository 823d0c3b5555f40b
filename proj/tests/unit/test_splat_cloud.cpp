#include <gtest/gtest.h>

#include "maskfield/splat_cloud.hpp"
#include "test_util.hpp"

using namespace maskfield;

namespace {

CameraModel cam9() { return look_at(Vec3(0, 0, 5), Vec3::Zero(), Vec3::UnitY(), 10.0, 9, 9, 0.1, 20.0); }

SplatCloud one_splat(const Vec3& p, double radius, double raw_opacity, const Vec3& rgb, int dm = 1) {
  SplatCloud s;
  s.d_m = dm;
  s.positions = {p.x(), p.y(), p.z()};
  s.radii = {radius};
  s.opacities_raw = {raw_opacity};
  s.colors = {rgb.x(), rgb.y(), rgb.z()};
  s.mask_features.assign(static_cast<std::size_t>(dm), 1.0);
  return s;
}

void append(SplatCloud& a, const SplatCloud& b) {
  a.positions.insert(a.positions.end(), b.positions.begin(), b.positions.end());
  a.radii.insert(a.radii.end(), b.radii.begin(), b.radii.end());
  a.opacities_raw.insert(a.opacities_raw.end(), b.opacities_raw.begin(), b.opacities_raw.end());
  a.colors.insert(a.colors.end(), b.colors.begin(), b.colors.end());
  a.mask_features.insert(a.mask_features.end(), b.mask_features.begin(), b.mask_features.end());
}

}  // namespace

// r_px = 0.5 * 10 / 5 = 1 pixel; center pixel (4, 4)
TEST(Splats, SingleSplatFalloffOracle) {
  const SplatCloud s = one_splat(Vec3::Zero(), 0.5, 0.0, Vec3(1, 0, 0));
  const RenderedView v = render_splats(s, cam9());
  auto px = [](int r, int c) { return static_cast<std::size_t>(r) * 9 + c; };
  EXPECT_NEAR(v.accum_opacity[px(4, 4)], 0.5, 1e-15);
  EXPECT_NEAR(v.color[3 * px(4, 4)], 0.5, 1e-15);
  EXPECT_NEAR(v.accum_opacity[px(4, 5)], 0.5 * std::exp(-0.5), 1e-15);
  EXPECT_NEAR(v.accum_opacity[px(5, 5)], 0.5 * std::exp(-1.0), 1e-15);
  // outside the 3-sigma footprint
  EXPECT_EQ(v.accum_opacity[px(4, 8)], 0.0);
  EXPECT_EQ(v.accum_opacity[px(0, 0)], 0.0);
}

TEST(Splats, DepthOrderAndClamp) {
  SplatCloud s = one_splat(Vec3(0, 0, 0), 0.5, 0.0, Vec3(0, 0, 1));
  append(s, one_splat(Vec3(0, 0, 1), 0.4, 0.0, Vec3(1, 0, 0)));  // nearer, listed second
  const RenderedView v = render_splats(s, cam9());
  const std::size_t c = 4 * 9 + 4;
  EXPECT_NEAR(v.color[3 * c], 0.5, 1e-15);
  EXPECT_NEAR(v.color[3 * c + 2], 0.25, 1e-15);
  EXPECT_NEAR(v.accum_opacity[c], 0.75, 1e-15);

  const SplatCloud hard = one_splat(Vec3::Zero(), 0.5, 40.0, Vec3(1, 1, 1));
  EXPECT_DOUBLE_EQ(render_splats(hard, cam9()).accum_opacity[c], kMaxSplatAlpha);
}

TEST(Splats, BehindNearPlaneIsSkipped) {
  const SplatCloud s = one_splat(Vec3(0, 0, 6), 0.5, 3.0, Vec3(1, 1, 1));
  const RenderedView v = render_splats(s, cam9());
  for (double a : v.accum_opacity) EXPECT_EQ(a, 0.0);
}

TEST(Splats, BackpropMatchesFiniteDifferences) {
  Aabb b;
  SplatCloud s = make_splats(40, b, 3, 5, 0.15, 0.4, 0.5);
  s.opacities_raw = testutil::random_vector(40, 6, -2.0, 2.0);
  const CameraModel cam = look_at(Vec3(0.2, 0.1, 2.0), Vec3::Zero(), Vec3::UnitY(), 8.0, 6, 5, 0.1, 5.0);
  const auto up = testutil::random_upstream(5, 6, 3, 7);
  const FieldGradient g = backprop_splats(s, cam, up);
  auto f = [&] { return testutil::inner(render_splats(s, cam), up); };
  double worst = 0;
  for (std::size_t i = 0; i < s.opacities_raw.size(); ++i)
    worst = std::max(worst, testutil::rel_error(g.geometry[i], testutil::central_difference(f, s.opacities_raw, i)));
  for (std::size_t i = 0; i < s.colors.size(); i += 3)
    worst = std::max(worst, testutil::rel_error(g.color[i], testutil::central_difference(f, s.colors, i)));
  for (std::size_t i = 0; i < s.mask_features.size(); i += 4)
    worst = std::max(worst, testutil::rel_error(g.feature[i], testutil::central_difference(f, s.mask_features, i)));
  EXPECT_LT(worst, 1e-6);
}

TEST(Splats, ValidateRejectsBadRadius) {
  SplatCloud s = one_splat(Vec3::Zero(), 0.5, 0.0, Vec3::Zero());
  s.radii[0] = 0.0;
  EXPECT_THROW(s.validate(), ValidationError);
}
