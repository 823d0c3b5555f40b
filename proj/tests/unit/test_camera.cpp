#include <gtest/gtest.h>

#include "maskfield/camera.hpp"

using namespace maskfield;

TEST(Camera, LookAtCentersTarget) {
  const CameraModel cam = look_at(Vec3(0, 0, 5), Vec3::Zero(), Vec3::UnitY(), 40.0, 32, 24, 0.5, 10.0);
  const auto pr = cam.project(Vec3::Zero());
  EXPECT_NEAR(pr.col, 15.5, 1e-12);
  EXPECT_NEAR(pr.row, 11.5, 1e-12);
  EXPECT_NEAR(pr.depth, 5.0, 1e-12);
  // +x in the world is to the right, +y up (smaller row)
  EXPECT_GT(cam.project(Vec3(1, 0, 0)).col, 15.5);
  EXPECT_LT(cam.project(Vec3(0, 1, 0)).row, 11.5);
}

TEST(Camera, PixelRayDirectionOracle) {
  CameraModel cam;
  cam.width = 2;
  cam.height = 2;
  cam.focal_px = 1.0;
  cam.validate();
  const Ray r = pixel_ray(cam, 0, 0);
  const double n = std::sqrt(1.5);
  EXPECT_NEAR(r.direction.x(), -0.5 / n, 1e-15);
  EXPECT_NEAR(r.direction.y(), 0.5 / n, 1e-15);
  EXPECT_NEAR(r.direction.z(), -1.0 / n, 1e-15);
}

TEST(Camera, RayProjectsBackToItsPixel) {
  const CameraModel cam = look_at(Vec3(1.5, 0.7, 2.0), Vec3(0.1, 0, 0), Vec3::UnitY(), 50.0, 40, 30, 0.1, 8.0);
  for (auto [row, col] : {std::pair{0, 0}, {29, 39}, {12, 7}}) {
    const Ray ray = pixel_ray(cam, row, col);
    const auto pr = cam.project(ray.origin + 3.3 * ray.direction);
    EXPECT_NEAR(pr.row, row, 1e-9);
    EXPECT_NEAR(pr.col, col, 1e-9);
  }
  EXPECT_EQ(generate_rays(cam).size(), 1200u);
}

TEST(Camera, ValidateRejectsBadModels) {
  CameraModel cam;
  cam.rotation(0, 0) = 2.0;
  EXPECT_THROW(cam.validate(), ValidationError);
  CameraModel c2;
  c2.near = 2.0;
  c2.far = 1.0;
  EXPECT_THROW(c2.validate(), ValidationError);
  CameraModel c3;
  c3.focal_px = 0.0;
  EXPECT_THROW(c3.validate(), ValidationError);
}

TEST(Sampling, MidpointsWithoutJitter) {
  const auto s = sample_interval(1.0, 3.0, 4, false, 0, 0);
  ASSERT_EQ(s.size(), 4u);
  const double t[] = {1.25, 1.75, 2.25, 2.75};
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(s[i].t, t[i]);
    EXPECT_DOUBLE_EQ(s[i].delta, 0.5);
  }
}

TEST(Sampling, JitterIsKeyedAndStaysInBins) {
  const auto a = sample_interval(0.5, 4.5, 16, true, 7, 123);
  const auto b = sample_interval(0.5, 4.5, 16, true, 7, 123);
  const auto c = sample_interval(0.5, 4.5, 16, true, 7, 124);
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    EXPECT_EQ(a[i].t, b[i].t);
    differs |= a[i].t != c[i].t;
    EXPECT_GT(a[i].t, 0.5 + 0.25 * i);
    EXPECT_LT(a[i].t, 0.5 + 0.25 * (i + 1));
    if (i > 0) EXPECT_GT(a[i].t, a[i - 1].t);
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(sample_interval(0, 1, 0, false, 0, 0), ValidationError);
}
