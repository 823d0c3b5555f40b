#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "maskfield/common.hpp"

namespace maskfield {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera. `rotation` maps camera axes to world axes and
/// `translation` is the camera center in world units. The camera looks down
/// its local -z axis with +y up, so an identity pose views along (0, 0, -1).
struct CameraModel {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double focal_px = 1.0;
  int width = 1;
  int height = 1;
  double near = 0.1;
  double far = 1.0;

  void validate() const {
    require(focal_px > 0.0 && std::isfinite(focal_px), "camera: focal_px must be positive");
    require(width > 0 && height > 0, "camera: width and height must be positive");
    require(near > 0.0 && near < far, "camera: require 0 < near < far");
    const Mat3 gram = rotation.transpose() * rotation;
    require((gram - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9, "camera: rotation is not orthonormal");
    require(translation.allFinite(), "camera: translation must be finite");
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

  /// World point -> (row, col, depth). Depth is the distance along the
  /// optical axis; callers skip points with depth <= near.
  struct Projection {
    double row;
    double col;
    double depth;
  };
  Projection project(const Vec3& world) const {
    const Vec3 p = rotation.transpose() * (world - translation);
    const double depth = -p.z();
    const double col = focal_px * p.x() / depth + 0.5 * width - 0.5;
    const double row = -focal_px * p.y() / depth + 0.5 * height - 0.5;
    return {row, col, depth};
  }
};

/// Camera at `eye` looking at `target`.
inline CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal_px, int width,
                           int height, double near, double far) {
  const Vec3 back = (eye - target).normalized();
  const Vec3 right = up.cross(back).normalized();
  const Vec3 true_up = back.cross(right);
  CameraModel cam;
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = true_up;
  cam.rotation.col(2) = back;
  cam.translation = eye;
  cam.focal_px = focal_px;
  cam.width = width;
  cam.height = height;
  cam.near = near;
  cam.far = far;
  cam.validate();
  return cam;
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3(0, 0, -1);
  int row = 0;
  int col = 0;
};

/// Ray through the center of pixel (row, col).
inline Ray pixel_ray(const CameraModel& camera, int row, int col) {
  const double x = (col + 0.5 - 0.5 * camera.width) / camera.focal_px;
  const double y = -(row + 0.5 - 0.5 * camera.height) / camera.focal_px;
  Ray ray;
  ray.origin = camera.translation;
  ray.direction = (camera.rotation * Vec3(x, y, -1.0)).normalized();
  ray.row = row;
  ray.col = col;
  return ray;
}

/// One ray per pixel, row-major.
inline std::vector<Ray> generate_rays(const CameraModel& camera) {
  std::vector<Ray> rays;
  rays.reserve(camera.pixel_count());
  for (int r = 0; r < camera.height; ++r)
    for (int c = 0; c < camera.width; ++c) rays.push_back(pixel_ray(camera, r, c));
  return rays;
}

struct RaySample {
  double t;
  double delta;
};

struct SampleOptions {
  int n_samples = 64;
  bool jitter = false;
  std::uint64_t seed = 0;
};

/// Stratified samples on [near, far]. Without jitter the samples sit at bin
/// midpoints; with jitter each bin gets one uniform draw keyed on
/// (seed, stream, bin). The last delta is the bin width.
inline std::vector<RaySample> sample_interval(double near, double far, int n_samples, bool jitter,
                                              std::uint64_t seed, std::uint64_t stream) {
  require(n_samples >= 1, "sample_ray: n_samples must be >= 1");
  const double bin = (far - near) / n_samples;
  std::vector<RaySample> out(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    const double u = jitter ? hash_uniform(seed, stream, static_cast<std::uint64_t>(i)) : 0.5;
    // keep strictly inside the bin so t stays strictly increasing
    const double uu = std::clamp(u, 1e-6, 1.0 - 1e-6);
    out[static_cast<std::size_t>(i)].t = near + (i + uu) * bin;
  }
  for (int i = 0; i + 1 < n_samples; ++i)
    out[static_cast<std::size_t>(i)].delta = out[static_cast<std::size_t>(i) + 1].t - out[static_cast<std::size_t>(i)].t;
  out.back().delta = bin;
  return out;
}

inline std::vector<RaySample> sample_ray(const Ray& ray, const CameraModel& camera, const SampleOptions& opts) {
  const auto stream = static_cast<std::uint64_t>(ray.row) * 1000003ULL + static_cast<std::uint64_t>(ray.col);
  return sample_interval(camera.near, camera.far, opts.n_samples, opts.jitter, opts.seed, stream);
}

}  // namespace maskfield
