#pragma once

#include <string>
#include <variant>

#include "maskfield/grid_field.hpp"
#include "maskfield/losses.hpp"
#include "maskfield/splat_cloud.hpp"

namespace maskfield {

enum class Backend { kGrid, kSplat };

inline std::string to_string(Backend b) { return b == Backend::kGrid ? "grid" : "splat"; }

inline Backend parse_backend(const std::string& s) {
  if (s == "grid") return Backend::kGrid;
  if (s == "splat") return Backend::kSplat;
  throw ValidationError("unknown backend '" + s + "' (expected grid or splat)");
}

/// Either scene representation behind one interface.
using SceneField = std::variant<GridField, SplatCloud>;

inline Backend backend_of(const SceneField& f) {
  return std::holds_alternative<GridField>(f) ? Backend::kGrid : Backend::kSplat;
}

inline int feature_dim(const SceneField& f) {
  return std::visit([](const auto& x) { return x.d_m; }, f);
}

/// Raw density (grid) or raw opacity (splats).
inline std::vector<double>& geometry_params(SceneField& f) {
  if (auto* g = std::get_if<GridField>(&f)) return g->density;
  return std::get<SplatCloud>(f).opacities_raw;
}
inline const std::vector<double>& geometry_params(const SceneField& f) {
  return geometry_params(const_cast<SceneField&>(f));
}
inline std::vector<double>& color_params(SceneField& f) {
  if (auto* g = std::get_if<GridField>(&f)) return g->color;
  return std::get<SplatCloud>(f).colors;
}
inline const std::vector<double>& color_params(const SceneField& f) { return color_params(const_cast<SceneField&>(f)); }
inline std::vector<double>& feature_params(SceneField& f) {
  if (auto* g = std::get_if<GridField>(&f)) return g->mask_feature;
  return std::get<SplatCloud>(f).mask_features;
}
inline const std::vector<double>& feature_params(const SceneField& f) {
  return feature_params(const_cast<SceneField&>(f));
}

inline void validate(const SceneField& f) {
  std::visit([](const auto& x) { x.validate(); }, f);
}

/// Whole-image render. The splat backend ignores the sampling options.
inline RenderedView render_view(const SceneField& f, const CameraModel& camera, const RenderOptions& opts) {
  if (const auto* g = std::get_if<GridField>(&f)) return render_view(*g, camera, opts);
  return render_splats(std::get<SplatCloud>(f), camera);
}

inline FieldGradient backprop_view(const SceneField& f, const CameraModel& camera, const RenderOptions& opts,
                                   const RenderedView& upstream, const GradientRequest& req = {}) {
  if (const auto* g = std::get_if<GridField>(&f)) return backprop_view(*g, camera, opts, upstream, req);
  return backprop_splats(std::get<SplatCloud>(f), camera, upstream, req);
}

/// With geometry frozen the rendered feature map is a fixed sparse linear
/// map of the feature parameters: F[p] = sum_k weight_k * feature[param_k].
/// This caches that map per camera so feature training never re-marches
/// rays. Only pixels whose accumulated opacity reaches `min_opacity` are kept;
/// row r of the cache is image pixel `pixel[r]`.
struct FeatureRenderCache {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> pixel;
  std::vector<std::size_t> offset;
  std::vector<std::uint32_t> param;
  std::vector<double> weight;
  std::vector<double> accum_opacity;  // per kept pixel

  std::size_t rows() const { return pixel.size(); }

  void render(std::span<const double> features, int d_m, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r = 0; r < rows(); ++r) {
      double* dst = &out[r * d_m];
      for (std::size_t k = offset[r]; k < offset[r + 1]; ++k) {
        const double w = weight[k];
        const double* src = &features[static_cast<std::size_t>(param[k]) * d_m];
        for (int c = 0; c < d_m; ++c) dst[c] += w * src[c];
      }
    }
  }

  void backprop(std::span<const double> upstream, int d_m, std::span<double> grad) const {
    for (std::size_t r = 0; r < rows(); ++r) {
      const double* g = &upstream[r * d_m];
      for (std::size_t k = offset[r]; k < offset[r + 1]; ++k) {
        const double w = weight[k];
        double* dst = &grad[static_cast<std::size_t>(param[k]) * d_m];
        for (int c = 0; c < d_m; ++c) dst[c] += w * g[c];
      }
    }
  }
};

struct FeatureCacheOptions {
  int n_samples = 64;
  double min_opacity = 0.0;
  double min_transmittance = 1e-5;
  double prune = 1e-3;
};

/// Builds the cache from deterministic (unjittered) sampling. Entries with
/// weight below `prune` are dropped; rays stop once transmittance falls
/// below `min_transmittance`.
inline FeatureRenderCache build_feature_cache(const SceneField& f, const CameraModel& camera,
                                              const FeatureCacheOptions& opts = {}) {
  FeatureRenderCache cache;
  cache.height = camera.height;
  cache.width = camera.width;
  cache.offset.push_back(0);
  const std::size_t npix = camera.pixel_count();
  std::vector<std::pair<std::uint32_t, double>> entries;
  auto flush = [&](std::size_t p, double acc) {
    if (acc < opts.min_opacity) return;
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < entries.size();) {
      std::size_t j = i;
      double w = 0.0;
      while (j < entries.size() && entries[j].first == entries[i].first) w += entries[j++].second;
      if (w >= opts.prune) {
        cache.param.push_back(entries[i].first);
        cache.weight.push_back(w);
      }
      i = j;
    }
    cache.pixel.push_back(static_cast<std::uint32_t>(p));
    cache.accum_opacity.push_back(acc);
    cache.offset.push_back(cache.param.size());
  };
  if (const auto* g = std::get_if<GridField>(&f)) {
    SampleOptions so;
    so.n_samples = opts.n_samples;
    detail::GridRayTrace tr;
    for (std::size_t p = 0; p < npix; ++p) {
      const Ray ray = pixel_ray(camera, static_cast<int>(p / camera.width), static_cast<int>(p % camera.width));
      const auto samples = sample_ray(ray, camera, so);
      detail::trace_grid_ray(*g, ray.origin, ray.direction, samples, false, opts.min_transmittance, tr);
      entries.clear();
      double acc = 0.0;
      for (std::size_t i = 0; i < tr.weight.size(); ++i) {
        acc += tr.weight[i];
        const TrilinearStencil st = detail::trace_stencil(*g, tr, i);
        for (int c = 0; c < 8; ++c)
          entries.emplace_back(static_cast<std::uint32_t>(st.index[c]), tr.weight[i] * st.weight[c]);
      }
      flush(p, acc);
    }
    return cache;
  }
  const SplatCloud& cloud = std::get<SplatCloud>(f);
  const SplatRaster raster = rasterize_footprints(cloud, camera);
  std::vector<double> alpha, trans, weight;
  for (std::size_t p = 0; p < npix; ++p) {
    const std::size_t b = raster.offset[p], e = raster.offset[p + 1];
    alpha.resize(e - b);
    for (std::size_t k = b; k < e; ++k) alpha[k - b] = splat_alpha(cloud, raster.splat[k], raster.falloff[k]);
    composite_weights(alpha, trans, weight);
    entries.clear();
    double acc = 0.0;
    for (std::size_t k = b; k < e; ++k) {
      acc += weight[k - b];
      entries.emplace_back(raster.splat[k], weight[k - b]);
    }
    flush(p, acc);
  }
  return cache;
}

/// Restricts a mask set to the pixels kept by `cache` (row order).
inline MaskSet restrict_to_cache(const MaskSet& ms, const FeatureRenderCache& cache) {
  MaskSet out = ms;
  out.height = 1;
  out.width = static_cast<int>(cache.rows());
  out.masks.clear();
  for (int j = 0; j < ms.count(); ++j) {
    const auto m = ms.mask(j);
    for (std::uint32_t p : cache.pixel) out.masks.push_back(m[p]);
  }
  return out;
}

}  // namespace maskfield
