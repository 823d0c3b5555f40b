#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "maskfield/camera.hpp"
#include "maskfield/compositing.hpp"
#include "maskfield/grid_field.hpp"
#include "maskfield/rendered_view.hpp"

namespace maskfield {

/// Isotropic Gaussian splats. Positions and radii are fixed after
/// construction; opacity (sigmoid of the raw value), color and mask feature
/// are the trainable groups.
struct SplatCloud {
  int d_m = 1;
  std::vector<double> positions;      // count*3
  std::vector<double> radii;          // count
  std::vector<double> opacities_raw;  // count
  std::vector<double> colors;         // count*3
  std::vector<double> mask_features;  // count*d_m

  std::size_t count() const { return radii.size(); }

  Vec3 position(std::size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }

  void validate() const {
    const std::size_t n = count();
    require(n >= 1, "splats: count must be positive");
    require(d_m >= 1, "splats: d_m must be >= 1");
    require(positions.size() == 3 * n && opacities_raw.size() == n && colors.size() == 3 * n &&
                mask_features.size() == n * static_cast<std::size_t>(d_m),
            "splats: parameter sizes do not match count");
    require(std::all_of(radii.begin(), radii.end(), [](double r) { return r > 0.0 && std::isfinite(r); }),
            "splats: radii must be positive");
    require(all_finite(positions) && all_finite(opacities_raw) && all_finite(colors) && all_finite(mask_features),
            "splats: non-finite parameters");
  }

  bool operator==(const SplatCloud&) const = default;
};

inline SplatCloud make_splats(std::size_t count, const Aabb& bounds, int d_m, std::uint64_t seed, double radius,
                              double initial_opacity = 0.1, double init_std = 0.01) {
  SplatCloud s;
  s.d_m = d_m;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, init_std);
  s.positions.resize(3 * count);
  for (std::size_t i = 0; i < count; ++i)
    for (int a = 0; a < 3; ++a) s.positions[3 * i + a] = bounds.lo[a] + unit(rng) * (bounds.hi[a] - bounds.lo[a]);
  s.radii.assign(count, radius);
  const double raw = std::log(initial_opacity / (1.0 - initial_opacity));
  s.opacities_raw.assign(count, raw);
  s.colors.resize(3 * count);
  for (auto& c : s.colors) c = normal(rng);
  s.mask_features.resize(count * static_cast<std::size_t>(d_m));
  for (auto& f : s.mask_features) f = normal(rng);
  s.validate();
  return s;
}

inline constexpr double kMaxSplatAlpha = 0.999;
inline constexpr double kFootprintSigmas = 3.0;

/// Per-pixel front-to-back list of splats whose footprint covers the pixel,
/// with the Gaussian falloff exp(-d^2 / (2 r_px^2)) at that pixel. Depends
/// only on positions, radii and the camera.
struct SplatRaster {
  int height = 0;
  int width = 0;
  std::vector<std::size_t> offset;  // pixels + 1
  std::vector<std::uint32_t> splat;
  std::vector<double> falloff;
};

inline SplatRaster rasterize_footprints(const SplatCloud& cloud, const CameraModel& camera) {
  struct Hit {
    double depth;
    std::uint32_t splat;
    double falloff;
  };
  const std::size_t npix = camera.pixel_count();
  std::vector<std::vector<Hit>> lists(npix);
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const auto pr = camera.project(cloud.position(i));
    if (pr.depth <= camera.near) continue;
    const double r_px = cloud.radii[i] * camera.focal_px / pr.depth;
    const double reach = kFootprintSigmas * r_px;
    const int r0 = std::max(0, static_cast<int>(std::ceil(pr.row - reach)));
    const int r1 = std::min(camera.height - 1, static_cast<int>(std::floor(pr.row + reach)));
    const int c0 = std::max(0, static_cast<int>(std::ceil(pr.col - reach)));
    const int c1 = std::min(camera.width - 1, static_cast<int>(std::floor(pr.col + reach)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double d2 = (r - pr.row) * (r - pr.row) + (c - pr.col) * (c - pr.col);
        if (d2 > reach * reach) continue;
        lists[static_cast<std::size_t>(r) * camera.width + c].push_back(
            {pr.depth, static_cast<std::uint32_t>(i), std::exp(-d2 / (2.0 * r_px * r_px))});
      }
  }
  SplatRaster out;
  out.height = camera.height;
  out.width = camera.width;
  out.offset.assign(npix + 1, 0);
  for (std::size_t p = 0; p < npix; ++p) out.offset[p + 1] = out.offset[p] + lists[p].size();
  out.splat.reserve(out.offset.back());
  out.falloff.reserve(out.offset.back());
  for (auto& l : lists) {
    std::sort(l.begin(), l.end(), [](const Hit& a, const Hit& b) {
      return a.depth < b.depth || (a.depth == b.depth && a.splat < b.splat);
    });
    for (const Hit& h : l) {
      out.splat.push_back(h.splat);
      out.falloff.push_back(h.falloff);
    }
  }
  return out;
}

inline double splat_alpha(const SplatCloud& cloud, std::uint32_t i, double falloff) {
  return std::clamp(sigmoid(cloud.opacities_raw[i]) * falloff, 0.0, kMaxSplatAlpha);
}

inline RenderedView render_splats(const SplatCloud& cloud, const SplatRaster& raster) {
  RenderedView view(raster.height, raster.width, cloud.d_m);
  std::vector<double> alpha, trans, weight;
  const int dm = cloud.d_m;
  for (std::size_t p = 0; p + 1 < raster.offset.size(); ++p) {
    const std::size_t b = raster.offset[p], e = raster.offset[p + 1];
    alpha.resize(e - b);
    for (std::size_t k = b; k < e; ++k) alpha[k - b] = splat_alpha(cloud, raster.splat[k], raster.falloff[k]);
    composite_weights(alpha, trans, weight);
    for (std::size_t k = b; k < e; ++k) {
      const double w = weight[k - b];
      const std::uint32_t s = raster.splat[k];
      for (int c = 0; c < 3; ++c) view.color[3 * p + c] += w * cloud.colors[3 * s + c];
      for (int c = 0; c < dm; ++c) view.feature[p * dm + c] += w * cloud.mask_features[s * dm + c];
      view.accum_opacity[p] += w;
    }
  }
  return view;
}

/// Projects, sorts by depth per pixel and composites with T_i alpha_i weights.
/// Splats with depth <= near are skipped.
inline RenderedView render_splats(const SplatCloud& cloud, const CameraModel& camera) {
  return render_splats(cloud, rasterize_footprints(cloud, camera));
}

inline FieldGradient backprop_splats(const SplatCloud& cloud, const SplatRaster& raster, const RenderedView& upstream,
                                     const GradientRequest& req = {}) {
  require(upstream.height == raster.height && upstream.width == raster.width && upstream.d_m == cloud.d_m &&
              upstream.same_shape(RenderedView(raster.height, raster.width, cloud.d_m)),
          "backprop_splats: upstream gradient shape does not match the rendered view");
  const std::size_t n = cloud.count();
  const int dm = cloud.d_m;
  FieldGradient grad;
  if (req.geometry) grad.geometry.assign(n, 0.0);
  if (req.color) grad.color.assign(3 * n, 0.0);
  if (req.feature) grad.feature.assign(n * static_cast<std::size_t>(dm), 0.0);
  std::vector<double> alpha, trans, weight, q, ga;
  for (std::size_t p = 0; p + 1 < raster.offset.size(); ++p) {
    const std::size_t b = raster.offset[p], e = raster.offset[p + 1];
    const std::size_t m = e - b;
    alpha.resize(m);
    q.resize(m);
    ga.resize(m);
    for (std::size_t k = b; k < e; ++k) alpha[k - b] = splat_alpha(cloud, raster.splat[k], raster.falloff[k]);
    composite_weights(alpha, trans, weight);
    const double* gc = &upstream.color[3 * p];
    const double* gf = &upstream.feature[p * dm];
    for (std::size_t k = b; k < e; ++k) {
      const std::uint32_t s = raster.splat[k];
      double v = upstream.accum_opacity[p];
      for (int c = 0; c < 3; ++c) v += gc[c] * cloud.colors[3 * s + c];
      for (int c = 0; c < dm; ++c) v += gf[c] * cloud.mask_features[s * dm + c];
      q[k - b] = v;
      const double w = weight[k - b];
      if (req.color)
        for (int c = 0; c < 3; ++c) grad.color[3 * s + c] += w * gc[c];
      if (req.feature)
        for (int c = 0; c < dm; ++c) grad.feature[s * dm + c] += w * gf[c];
    }
    if (!req.geometry) continue;
    composite_backward(alpha, trans, q, ga);
    for (std::size_t k = b; k < e; ++k) {
      const std::uint32_t s = raster.splat[k];
      const double sig = sigmoid(cloud.opacities_raw[s]);
      if (sig * raster.falloff[k] >= kMaxSplatAlpha) continue;  // clamped: flat
      grad.geometry[s] += ga[k - b] * sig * (1.0 - sig) * raster.falloff[k];
    }
  }
  return grad;
}

inline FieldGradient backprop_splats(const SplatCloud& cloud, const CameraModel& camera, const RenderedView& upstream,
                                     const GradientRequest& req = {}) {
  return backprop_splats(cloud, rasterize_footprints(cloud, camera), upstream, req);
}

}  // namespace maskfield
