#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "maskfield/camera.hpp"
#include "maskfield/compositing.hpp"
#include "maskfield/rendered_view.hpp"

namespace maskfield {

struct Aabb {
  Vec3 lo = Vec3::Constant(-0.5);
  Vec3 hi = Vec3::Constant(0.5);

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  bool operator==(const Aabb&) const = default;
};

/// Dense voxel grid storing raw density, color and mask features at grid
/// nodes. Node (i, j, k) sits at lo + (i, j, k) * (hi - lo) / (res - 1) and
/// has flat index i + nx * (j + ny * k).
struct GridField {
  std::array<int, 3> resolution{2, 2, 2};
  Aabb bounds;
  int d_m = 1;
  std::vector<double> density;       // nx*ny*nz raw (pre-softplus)
  std::vector<double> color;         // nx*ny*nz*3
  std::vector<double> mask_feature;  // nx*ny*nz*d_m

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(resolution[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(resolution[1]) * k);
  }
  Vec3 node_position(int i, int j, int k) const {
    const Vec3 ext = bounds.hi - bounds.lo;
    return bounds.lo + Vec3(ext.x() * i / (resolution[0] - 1), ext.y() * j / (resolution[1] - 1),
                            ext.z() * k / (resolution[2] - 1));
  }

  void validate() const {
    require(resolution[0] >= 2 && resolution[1] >= 2 && resolution[2] >= 2, "grid: resolution must be >= 2 per axis");
    require(d_m >= 1, "grid: d_m must be >= 1");
    require((bounds.hi.array() > bounds.lo.array()).all(), "grid: empty bounds");
    const std::size_t n = voxel_count();
    require(density.size() == n && color.size() == 3 * n && mask_feature.size() == n * static_cast<std::size_t>(d_m),
            "grid: parameter sizes do not match resolution");
    require(all_finite(density) && all_finite(color) && all_finite(mask_feature), "grid: non-finite parameters");
  }

  bool operator==(const GridField&) const = default;
};

/// Grid with raw density fixed at `initial_density` (activated), colors
/// and features drawn from Normal(0, init_std).
inline GridField make_grid(std::array<int, 3> resolution, const Aabb& bounds, int d_m, std::uint64_t seed,
                           double initial_density = 0.1, double init_std = 0.01) {
  GridField g;
  g.resolution = resolution;
  g.bounds = bounds;
  g.d_m = d_m;
  const std::size_t n = g.voxel_count();
  g.density.assign(n, softplus_inverse(initial_density));
  g.color.resize(3 * n);
  g.mask_feature.resize(n * static_cast<std::size_t>(d_m));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& c : g.color) c = normal(rng);
  for (auto& f : g.mask_feature) f = normal(rng);
  g.validate();
  return g;
}

/// The eight grid nodes around a point with their trilinear weights.
struct TrilinearStencil {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
  bool inside = false;
};

inline TrilinearStencil trilinear_stencil(const GridField& g, const Vec3& p) {
  TrilinearStencil s;
  if (!g.bounds.contains(p)) return s;
  s.inside = true;
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double u = (p[a] - g.bounds.lo[a]) / (g.bounds.hi[a] - g.bounds.lo[a]) * (g.resolution[a] - 1);
    int i0 = static_cast<int>(std::floor(u));
    i0 = std::clamp(i0, 0, g.resolution[a] - 2);
    base[a] = i0;
    frac[a] = std::clamp(u - i0, 0.0, 1.0);
  }
  int n = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        s.index[n] = g.index(base[0] + dx, base[1] + dy, base[2] + dz);
        s.weight[n] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) * (dz ? frac[2] : 1.0 - frac[2]);
        ++n;
      }
  return s;
}

struct GridQuery {
  double density = 0.0;
  Vec3 color = Vec3::Zero();
  std::vector<double> feature;
};

/// Trilinear lookup of all three grids; density is softplus of the
/// interpolated raw value. Points outside the bounds are vacuum.
inline GridQuery query_grid(const GridField& g, const Vec3& p) {
  GridQuery q;
  q.feature.assign(static_cast<std::size_t>(g.d_m), 0.0);
  const TrilinearStencil s = trilinear_stencil(g, p);
  if (!s.inside) return q;
  double raw = 0.0;
  for (int c = 0; c < 8; ++c) {
    const double w = s.weight[c];
    raw += w * g.density[s.index[c]];
    for (int k = 0; k < 3; ++k) q.color[k] += w * g.color[3 * s.index[c] + k];
    const double* f = &g.mask_feature[s.index[c] * g.d_m];
    for (int k = 0; k < g.d_m; ++k) q.feature[k] += w * f[k];
  }
  q.density = softplus(raw);
  return q;
}

struct RayOutput {
  Vec3 color = Vec3::Zero();
  std::vector<double> feature;
  double accum_opacity = 0.0;
};

namespace detail {

// Per-ray scratch kept between forward and backward. Each kept sample
// stores the grid cell's lowest corner and the fractional offsets inside it.
struct GridRayTrace {
  std::vector<std::size_t> cell;
  std::vector<double> frac;  // n*3
  std::vector<double> raw, alpha, delta, transmittance, weight;
  std::vector<double> color;    // n*3
  std::vector<double> feature;  // n*d_m

  void clear() {
    cell.clear();
    frac.clear();
    raw.clear();
    alpha.clear();
    delta.clear();
    color.clear();
    feature.clear();
  }
};

struct CellCorners {
  std::array<std::size_t, 8> offset;
};

inline CellCorners cell_corners(const GridField& g) {
  const std::size_t nx = static_cast<std::size_t>(g.resolution[0]);
  const std::size_t nxy = nx * static_cast<std::size_t>(g.resolution[1]);
  return {{0, 1, nx, nx + 1, nxy, nxy + 1, nxy + nx, nxy + nx + 1}};
}

inline void corner_weights(const double* f, double* w) {
  const double x0 = 1.0 - f[0], y0 = 1.0 - f[1], z0 = 1.0 - f[2];
  w[0] = x0 * y0 * z0;
  w[1] = f[0] * y0 * z0;
  w[2] = x0 * f[1] * z0;
  w[3] = f[0] * f[1] * z0;
  w[4] = x0 * y0 * f[2];
  w[5] = f[0] * y0 * f[2];
  w[6] = x0 * f[1] * f[2];
  w[7] = f[0] * f[1] * f[2];
}

inline TrilinearStencil trace_stencil(const GridField& g, const GridRayTrace& tr, std::size_t i) {
  TrilinearStencil s;
  s.inside = true;
  const CellCorners cc = cell_corners(g);
  corner_weights(&tr.frac[3 * i], s.weight.data());
  for (int c = 0; c < 8; ++c) s.index[c] = tr.cell[i] + cc.offset[c];
  return s;
}

inline void trace_grid_ray(const GridField& g, const Vec3& origin, const Vec3& dir,
                           std::span<const RaySample> samples, bool with_feature, double min_transmittance,
                           GridRayTrace& tr) {
  tr.clear();
  const CellCorners cc = cell_corners(g);
  double lo[3], hi[3], scale[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = g.bounds.lo[a];
    hi[a] = g.bounds.hi[a];
    scale[a] = (g.resolution[a] - 1) / (hi[a] - lo[a]);
  }
  const std::size_t nx = static_cast<std::size_t>(g.resolution[0]);
  const std::size_t ny = static_cast<std::size_t>(g.resolution[1]);
  const int dm = g.d_m;
  double t_acc = 1.0;
  for (const RaySample& s : samples) {
    if (min_transmittance > 0.0 && t_acc < min_transmittance) break;
    double p[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      p[a] = origin[a] + s.t * dir[a];
      inside = inside && p[a] >= lo[a] && p[a] <= hi[a];
    }
    if (!inside) continue;
    int base[3];
    double fr[3];
    for (int a = 0; a < 3; ++a) {
      const double u = (p[a] - lo[a]) * scale[a];
      const int i0 = std::clamp(static_cast<int>(u), 0, g.resolution[a] - 2);
      base[a] = i0;
      fr[a] = std::clamp(u - i0, 0.0, 1.0);
    }
    const std::size_t cell = static_cast<std::size_t>(base[0]) +
                             nx * (static_cast<std::size_t>(base[1]) + ny * static_cast<std::size_t>(base[2]));
    double w[8];
    corner_weights(fr, w);
    double raw = 0.0;
    double col[3] = {0, 0, 0};
    const double* dens = g.density.data() + cell;
    const double* colr = g.color.data() + 3 * cell;
    for (int c = 0; c < 8; ++c) {
      raw += w[c] * dens[cc.offset[c]];
      const double* cp = colr + 3 * cc.offset[c];
      col[0] += w[c] * cp[0];
      col[1] += w[c] * cp[1];
      col[2] += w[c] * cp[2];
    }
    const double alpha = -std::expm1(-s.delta * softplus(raw));
    tr.cell.push_back(cell);
    tr.frac.insert(tr.frac.end(), fr, fr + 3);
    tr.raw.push_back(raw);
    tr.alpha.push_back(alpha);
    tr.delta.push_back(s.delta);
    tr.color.insert(tr.color.end(), col, col + 3);
    if (with_feature) {
      const std::size_t off = tr.feature.size();
      tr.feature.resize(off + static_cast<std::size_t>(dm), 0.0);
      double* out = &tr.feature[off];
      for (int c = 0; c < 8; ++c) {
        const double* f = &g.mask_feature[(cell + cc.offset[c]) * dm];
        for (int k = 0; k < dm; ++k) out[k] += w[c] * f[k];
      }
    }
    t_acc *= 1.0 - alpha;
  }
  composite_weights(tr.alpha, tr.transmittance, tr.weight);
}

inline void composite_grid_ray(const GridRayTrace& tr, int d_m, bool with_feature, double* color, double* feature,
                               double* accum) {
  for (std::size_t i = 0; i < tr.weight.size(); ++i) {
    const double w = tr.weight[i];
    for (int k = 0; k < 3; ++k) color[k] += w * tr.color[3 * i + k];
    if (with_feature)
      for (int k = 0; k < d_m; ++k) feature[k] += w * tr.feature[i * d_m + k];
    *accum += w;
  }
}

// Accumulates dL/dparams for one ray given upstream gradients on its outputs.
inline void backprop_grid_ray(const GridField& g, const GridRayTrace& tr, const double* g_color,
                              const double* g_feature, double g_accum, const GradientRequest& req,
                              FieldGradient& out, std::vector<double>& scratch_q, std::vector<double>& scratch_a) {
  const std::size_t n = tr.weight.size();
  const int dm = g.d_m;
  scratch_q.resize(n);
  scratch_a.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double q = g_accum;
    for (int k = 0; k < 3; ++k) q += g_color[k] * tr.color[3 * i + k];
    if (g_feature != nullptr)
      for (int k = 0; k < dm; ++k) q += g_feature[k] * tr.feature[i * dm + k];
    scratch_q[i] = q;
  }
  if (req.geometry) composite_backward(tr.alpha, tr.transmittance, scratch_q, scratch_a);
  const CellCorners cc = cell_corners(g);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cell = tr.cell[i];
    double cw[8];
    corner_weights(&tr.frac[3 * i], cw);
    const double w = tr.weight[i];
    if (req.geometry) {
      const double d_raw = scratch_a[i] * tr.delta[i] * (1.0 - tr.alpha[i]) * sigmoid(tr.raw[i]);
      double* dst = out.geometry.data() + cell;
      for (int c = 0; c < 8; ++c) dst[cc.offset[c]] += cw[c] * d_raw;
    }
    if (req.color) {
      double* dst = out.color.data() + 3 * cell;
      for (int c = 0; c < 8; ++c) {
        const double s = cw[c] * w;
        double* d = dst + 3 * cc.offset[c];
        d[0] += s * g_color[0];
        d[1] += s * g_color[1];
        d[2] += s * g_color[2];
      }
    }
    if (req.feature && g_feature != nullptr)
      for (int c = 0; c < 8; ++c) {
        const double s = cw[c] * w;
        double* dst = &out.feature[(cell + cc.offset[c]) * dm];
        for (int k = 0; k < dm; ++k) dst[k] += s * g_feature[k];
      }
  }
}

inline FieldGradient zero_gradient(const GridField& g, const GradientRequest& req) {
  FieldGradient grad;
  const std::size_t n = g.voxel_count();
  if (req.geometry) grad.geometry.assign(n, 0.0);
  if (req.color) grad.color.assign(3 * n, 0.0);
  if (req.feature) grad.feature.assign(n * static_cast<std::size_t>(g.d_m), 0.0);
  return grad;
}

}  // namespace detail

/// Composites color, feature and opacity along one ray:
/// alpha_i = 1 - exp(-delta_i sigma_i), w_i = T_i alpha_i.
inline RayOutput render_ray(const GridField& g, const Ray& ray, std::span<const RaySample> samples,
                            double min_transmittance = 0.0) {
  detail::GridRayTrace tr;
  detail::trace_grid_ray(g, ray.origin, ray.direction, samples, true, min_transmittance, tr);
  RayOutput out;
  out.feature.assign(static_cast<std::size_t>(g.d_m), 0.0);
  double col[3] = {0, 0, 0};
  detail::composite_grid_ray(tr, g.d_m, true, col, out.feature.data(), &out.accum_opacity);
  out.color = Vec3(col[0], col[1], col[2]);
  return out;
}

inline RenderedView render_view(const GridField& g, const CameraModel& camera, const RenderOptions& opts) {
  RenderedView view(camera.height, camera.width, g.d_m);
  const int threads = effective_threads(opts.threads);
  parallel_for(camera.pixel_count(), threads, [&](std::size_t b, std::size_t e, int) {
    detail::GridRayTrace tr;
    for (std::size_t p = b; p < e; ++p) {
      const Ray ray = pixel_ray(camera, static_cast<int>(p / camera.width), static_cast<int>(p % camera.width));
      const auto samples = sample_ray(ray, camera, opts.sampling);
      detail::trace_grid_ray(g, ray.origin, ray.direction, samples, true, opts.min_transmittance, tr);
      detail::composite_grid_ray(tr, g.d_m, true, &view.color[3 * p], &view.feature[p * g.d_m],
                                 &view.accum_opacity[p]);
    }
  });
  return view;
}

/// Exact gradient of <upstream, render_view(g, camera, opts)> with respect to
/// the requested parameter groups. Re-traces each ray with the same sampling.
inline FieldGradient backprop_view(const GridField& g, const CameraModel& camera, const RenderOptions& opts,
                                   const RenderedView& upstream, const GradientRequest& req = {}) {
  require(upstream.height == camera.height && upstream.width == camera.width && upstream.d_m == g.d_m &&
              upstream.same_shape(RenderedView(camera.height, camera.width, g.d_m)),
          "backprop_view: upstream gradient shape does not match the rendered view");
  const int threads = effective_threads(opts.threads);
  std::vector<FieldGradient> partial(static_cast<std::size_t>(threads));
  parallel_for(camera.pixel_count(), threads, [&](std::size_t b, std::size_t e, int w) {
    FieldGradient& grad = partial[static_cast<std::size_t>(w)];
    grad = detail::zero_gradient(g, req);
    detail::GridRayTrace tr;
    std::vector<double> sq, sa;
    for (std::size_t p = b; p < e; ++p) {
      const Ray ray = pixel_ray(camera, static_cast<int>(p / camera.width), static_cast<int>(p % camera.width));
      const auto samples = sample_ray(ray, camera, opts.sampling);
      detail::trace_grid_ray(g, ray.origin, ray.direction, samples, true, opts.min_transmittance, tr);
      detail::backprop_grid_ray(g, tr, &upstream.color[3 * p], &upstream.feature[p * g.d_m],
                                upstream.accum_opacity[p], req, grad, sq, sa);
    }
  });
  FieldGradient total = detail::zero_gradient(g, req);
  for (const auto& p : partial)
    if (!p.geometry.empty() || !p.color.empty() || !p.feature.empty()) total.add(p);
  return total;
}

/// A ray with its own sampling interval, used for random ray batches drawn
/// across several cameras.
struct BatchRay {
  Ray ray;
  double near = 0.0;
  double far = 1.0;
  std::uint64_t stream = 0;
};

/// Photometric forward/backward over a ray batch (color and opacity only).
/// Writes per-ray color and opacity; if `upstream_color` is non-empty also
/// accumulates gradients into `grad` (geometry and color groups).
inline void render_ray_batch(const GridField& g, std::span<const BatchRay> rays, const RenderOptions& opts,
                             std::vector<double>& color, std::vector<double>& accum) {
  color.assign(rays.size() * 3, 0.0);
  accum.assign(rays.size(), 0.0);
  parallel_for(rays.size(), effective_threads(opts.threads), [&](std::size_t b, std::size_t e, int) {
    detail::GridRayTrace tr;
    for (std::size_t r = b; r < e; ++r) {
      const auto samples = sample_interval(rays[r].near, rays[r].far, opts.sampling.n_samples, opts.sampling.jitter,
                                           opts.sampling.seed, rays[r].stream);
      detail::trace_grid_ray(g, rays[r].ray.origin, rays[r].ray.direction, samples, false, opts.min_transmittance, tr);
      detail::composite_grid_ray(tr, g.d_m, false, &color[3 * r], nullptr, &accum[r]);
    }
  });
}

inline FieldGradient backprop_ray_batch(const GridField& g, std::span<const BatchRay> rays, const RenderOptions& opts,
                                        std::span<const double> upstream_color, std::span<const double> upstream_accum) {
  require(upstream_color.size() == rays.size() * 3 && upstream_accum.size() == rays.size(),
          "backprop_ray_batch: upstream size mismatch");
  const GradientRequest req{true, true, false};
  const int threads = effective_threads(opts.threads);
  std::vector<FieldGradient> partial(static_cast<std::size_t>(threads));
  parallel_for(rays.size(), threads, [&](std::size_t b, std::size_t e, int w) {
    FieldGradient& grad = partial[static_cast<std::size_t>(w)];
    grad = detail::zero_gradient(g, req);
    detail::GridRayTrace tr;
    std::vector<double> sq, sa;
    for (std::size_t r = b; r < e; ++r) {
      const auto samples = sample_interval(rays[r].near, rays[r].far, opts.sampling.n_samples, opts.sampling.jitter,
                                           opts.sampling.seed, rays[r].stream);
      detail::trace_grid_ray(g, rays[r].ray.origin, rays[r].ray.direction, samples, false, opts.min_transmittance, tr);
      detail::backprop_grid_ray(g, tr, &upstream_color[3 * r], nullptr, upstream_accum[r], req, grad, sq, sa);
    }
  });
  FieldGradient total = detail::zero_gradient(g, req);
  for (const auto& p : partial)
    if (!p.geometry.empty()) total.add(p);
  return total;
}

/// Per-ray loss callback: given the ray index and its composited color and
/// opacity, returns the ray's loss and writes d(loss)/d(color) and
/// d(loss)/d(opacity).
using RayLossFn = std::function<double(std::size_t, const double*, double, double*, double&)>;

/// Fused forward + backward for losses that are sums over rays. Each ray is
/// traced once; returns the summed loss and accumulates geometry and color
/// gradients into `grad` (allocated here).
inline double fit_ray_batch(const GridField& g, std::span<const BatchRay> rays, const RenderOptions& opts,
                            const RayLossFn& loss_grad, FieldGradient& grad) {
  const GradientRequest req{true, true, false};
  const int threads = effective_threads(opts.threads);
  std::vector<FieldGradient> partial(static_cast<std::size_t>(threads));
  std::vector<double> partial_loss(static_cast<std::size_t>(threads), 0.0);
  parallel_for(rays.size(), threads, [&](std::size_t b, std::size_t e, int w) {
    FieldGradient& pg = partial[static_cast<std::size_t>(w)];
    pg = detail::zero_gradient(g, req);
    detail::GridRayTrace tr;
    std::vector<double> sq, sa;
    for (std::size_t r = b; r < e; ++r) {
      const auto samples = sample_interval(rays[r].near, rays[r].far, opts.sampling.n_samples, opts.sampling.jitter,
                                           opts.sampling.seed, rays[r].stream);
      detail::trace_grid_ray(g, rays[r].ray.origin, rays[r].ray.direction, samples, false, opts.min_transmittance, tr);
      double color[3] = {0, 0, 0}, accum = 0.0;
      detail::composite_grid_ray(tr, g.d_m, false, color, nullptr, &accum);
      double g_color[3] = {0, 0, 0}, g_accum = 0.0;
      partial_loss[static_cast<std::size_t>(w)] += loss_grad(r, color, accum, g_color, g_accum);
      detail::backprop_grid_ray(g, tr, g_color, nullptr, g_accum, req, pg, sq, sa);
    }
  });
  grad = std::move(partial.front());
  double loss = partial_loss.front();
  for (std::size_t w = 1; w < partial.size(); ++w) {
    if (!partial[w].geometry.empty()) grad.add(partial[w]);
    loss += partial_loss[w];
  }
  if (grad.geometry.empty()) grad = detail::zero_gradient(g, req);
  return loss;
}

}  // namespace maskfield
