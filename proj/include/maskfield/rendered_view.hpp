#pragma once

#include <cstddef>
#include <vector>

#include "maskfield/camera.hpp"
#include "maskfield/common.hpp"

namespace maskfield {

/// Per-pixel composited outputs for one camera, row-major.
/// The same layout doubles as the upstream gradient of a scalar loss.
struct RenderedView {
  int height = 0;
  int width = 0;
  int d_m = 0;
  std::vector<double> color;          // H*W*3
  std::vector<double> feature;        // H*W*d_m
  std::vector<double> accum_opacity;  // H*W

  RenderedView() = default;
  RenderedView(int h, int w, int dm)
      : height(h),
        width(w),
        d_m(dm),
        color(static_cast<std::size_t>(h) * w * 3, 0.0),
        feature(static_cast<std::size_t>(h) * w * dm, 0.0),
        accum_opacity(static_cast<std::size_t>(h) * w, 0.0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

  bool same_shape(const RenderedView& o) const {
    return height == o.height && width == o.width && d_m == o.d_m && color.size() == o.color.size() &&
           feature.size() == o.feature.size() && accum_opacity.size() == o.accum_opacity.size();
  }

  bool operator==(const RenderedView&) const = default;
};

/// Gradient of a scalar loss with respect to every field parameter group.
/// `geometry` is raw density (grid) or raw opacity (splats).
struct FieldGradient {
  std::vector<double> geometry;
  std::vector<double> color;
  std::vector<double> feature;

  void add(const FieldGradient& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      if (a.empty()) {
        a = b;
        return;
      }
      for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
    };
    acc(geometry, o.geometry);
    acc(color, o.color);
    acc(feature, o.feature);
  }
};

/// Which parameter groups a backward pass should fill.
struct GradientRequest {
  bool geometry = true;
  bool color = true;
  bool feature = true;
};

/// Pixels below this accumulated opacity are background at inference and are
/// left out of the mask losses.
inline constexpr double kForegroundOpacity = 0.5;

struct RenderOptions {
  SampleOptions sampling;
  int threads = 1;
  // Stop marching once transmittance drops below this value (0 disables).
  double min_transmittance = 0.0;
};

}  // namespace maskfield
