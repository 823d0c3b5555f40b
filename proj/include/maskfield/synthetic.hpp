#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maskfield/camera.hpp"
#include "maskfield/dataset.hpp"

namespace maskfield {

enum class Shape { kSphere, kBox };

/// A labeled primitive. `half_extent` is the box half size; spheres use
/// half_extent.x() as radius.
struct Primitive {
  Shape shape = Shape::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Constant(0.1);
  int class_id = 0;
  Vec3 albedo = Vec3::Constant(0.8);

  double bounding_radius() const { return shape == Shape::kSphere ? half_extent.x() : half_extent.norm(); }
  double top() const { return center.y() + (shape == Shape::kSphere ? half_extent.x() : half_extent.y()); }
};

/// The top slab of a parent primitive: points of the parent with y >= cut_y.
struct Part {
  int parent = 0;
  double cut_y = 0.0;
  int class_id = 0;
  Vec3 albedo = Vec3::Constant(0.5);
};

struct SceneOptions {
  int num_views = 16;
  int width = 128;
  int height = 128;
  int d_s = 32;
  int num_canonicals = 4;
  double ring_radius = 2.2;
  double focal_scale = 1.6;  // focal_px = focal_scale * width
};

struct GroundTruthScene {
  std::uint64_t seed = 0;
  std::vector<Primitive> objects;
  std::vector<Part> parts;
  int num_classes = 0;
  int num_canonicals = 0;
  int d_s = 0;
  std::vector<double> codebook;  // (num_classes + num_canonicals) x d_s, orthonormal rows
  std::vector<CameraModel> cameras;
  Aabb bounds;

  std::span<const double> code(int row) const {
    return {&codebook[static_cast<std::size_t>(row) * d_s], static_cast<std::size_t>(d_s)};
  }
};

inline const std::vector<std::string>& canonical_phrases() {
  static const std::vector<std::string> phrases{"object", "things", "stuff", "texture"};
  return phrases;
}

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Vec3 hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh);
  const double f = hh - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Gram-Schmidt over Gaussian draws; rows come out orthonormal.
inline std::vector<double> orthonormal_rows(int rows, int dim, std::mt19937_64& rng) {
  require(rows <= dim, "codebook: more rows than dimensions");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(rows) * dim);
  for (int r = 0; r < rows; ++r) {
    for (int attempt = 0;; ++attempt) {
      double* v = &out[static_cast<std::size_t>(r) * dim];
      for (int k = 0; k < dim; ++k) v[k] = normal(rng);
      for (int pass = 0; pass < 2; ++pass)
        for (int q = 0; q < r; ++q) {
          const double* u = &out[static_cast<std::size_t>(q) * dim];
          double d = 0.0;
          for (int k = 0; k < dim; ++k) d += u[k] * v[k];
          for (int k = 0; k < dim; ++k) v[k] -= d * u[k];
        }
      double n = 0.0;
      for (int k = 0; k < dim; ++k) n += v[k] * v[k];
      n = std::sqrt(n);
      if (n > 1e-6) {
        for (int k = 0; k < dim; ++k) v[k] /= n;
        break;
      }
      require(attempt < 100, "codebook: orthogonalization failed");
    }
  }
  return out;
}

// Distance along the ray to the primitive, or nullopt.
inline std::optional<double> intersect(const Primitive& obj, const Vec3& o, const Vec3& d) {
  if (obj.shape == Shape::kSphere) {
    const Vec3 oc = o - obj.center;
    const double r = obj.half_extent.x();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - r * r;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    const double t0 = -b - s;
    if (t0 > 1e-9) return t0;
    const double t1 = -b + s;
    if (t1 > 1e-9) return t1;
    return std::nullopt;
  }
  double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = obj.center[a] - obj.half_extent[a], hi = obj.center[a] + obj.half_extent[a];
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double t1 = (lo - o[a]) / d[a], t2 = (hi - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
  }
  if (tmax < tmin || tmax <= 1e-9) return std::nullopt;
  return tmin > 1e-9 ? tmin : tmax;
}

}  // namespace detail

/// Non-overlapping spheres and boxes inside the unit cube centered at the
/// origin, a near-orthonormal class/canonical codebook and a camera ring.
/// Deterministic in `seed`.
inline GroundTruthScene generate_scene(std::uint64_t seed, int num_objects, bool with_parts,
                                       const SceneOptions& opts = {}) {
  require(num_objects >= 1 && num_objects <= 8, "generate_scene: num_objects must be in [1, 8]");
  require(opts.num_views >= 8 && opts.num_views <= 16, "generate_scene: num_views must be in [8, 16]");
  GroundTruthScene scene;
  scene.seed = seed;
  scene.bounds = Aabb{Vec3::Constant(-0.5), Vec3::Constant(0.5)};
  std::mt19937_64 rng(mix64(seed));
  double scale = std::min(1.0, std::cbrt(3.0 / num_objects));
  constexpr int kMaxAttempts = 2000, kMaxLayouts = 20;
  for (int layout = 0;; ++layout) {
    scene.objects.clear();
    bool all_placed = true;
    for (int k = 0; k < num_objects && all_placed; ++k) {
      Primitive p;
      p.shape = detail::uniform01(rng) < 0.5 ? Shape::kSphere : Shape::kBox;
      const double r = scale * (0.14 + 0.08 * detail::uniform01(rng));
      if (p.shape == Shape::kSphere) {
        p.half_extent = Vec3::Constant(r);
      } else {
        for (int a = 0; a < 3; ++a) p.half_extent[a] = r * (0.6 + 0.25 * detail::uniform01(rng));
      }
      p.class_id = k;
      p.albedo = detail::hsv_to_rgb((k + 0.3 * detail::uniform01(rng)) / num_objects, 0.75, 0.9);
      const double br = p.bounding_radius();
      bool placed = false;
      for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        for (int a = 0; a < 3; ++a) p.center[a] = (-0.5 + br) + (1.0 - 2.0 * br) * detail::uniform01(rng);
        placed = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const Primitive& o) {
          return (o.center - p.center).norm() > o.bounding_radius() + br + 0.04;
        });
      }
      if (placed) scene.objects.push_back(p);
      all_placed = placed;
    }
    if (all_placed) break;
    if (layout + 1 == kMaxLayouts)
      throw ValidationError("generate_scene: could not place " + std::to_string(num_objects) + " objects for seed " +
                            std::to_string(seed));
    scale *= 0.9;  // crowded draw: shrink everything and lay out again
  }
  scene.num_classes = num_objects;
  if (with_parts) {
    for (int k = 0; k < num_objects; ++k) {
      const Primitive& o = scene.objects[static_cast<std::size_t>(k)];
      const double extent = o.shape == Shape::kSphere ? o.half_extent.x() : o.half_extent.y();
      Part part;
      part.parent = k;
      part.cut_y = o.center.y() + 0.3 * extent;
      part.class_id = num_objects + k;
      part.albedo = 0.55 * o.albedo;
      scene.parts.push_back(part);
    }
    scene.num_classes += num_objects;
  }
  scene.num_canonicals = opts.num_canonicals;
  scene.d_s = opts.d_s;
  scene.codebook = detail::orthonormal_rows(scene.num_classes + scene.num_canonicals, opts.d_s, rng);
  const double near = opts.ring_radius - 0.9, far = opts.ring_radius + 0.9;
  for (int v = 0; v < opts.num_views; ++v) {
    const double az = 2.0 * std::numbers::pi * v / opts.num_views;
    const double el = (v % 2 == 0 ? 20.0 : 35.0) * std::numbers::pi / 180.0;
    const Vec3 eye(opts.ring_radius * std::cos(el) * std::cos(az), opts.ring_radius * std::sin(el),
                   opts.ring_radius * std::cos(el) * std::sin(az));
    scene.cameras.push_back(look_at(eye, Vec3::Zero(), Vec3::UnitY(), opts.focal_scale * opts.width, opts.width,
                                    opts.height, near, far));
  }
  return scene;
}

/// Analytic nearest-hit render with flat shading; -1 marks background.
struct GtView {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;  // H*W*3, background 0
  std::vector<std::int32_t> instance_ids;
  std::vector<std::int32_t> class_ids;
  std::vector<std::int32_t> part_ids;
};

inline GtView render_gt(const GroundTruthScene& scene, const CameraModel& camera) {
  camera.validate();
  GtView out;
  out.height = camera.height;
  out.width = camera.width;
  const std::size_t n = camera.pixel_count();
  out.rgb.assign(3 * n, 0.0);
  out.instance_ids.assign(n, -1);
  out.class_ids.assign(n, -1);
  out.part_ids.assign(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    const Ray ray = pixel_ray(camera, static_cast<int>(p / camera.width), static_cast<int>(p % camera.width));
    double best = std::numeric_limits<double>::infinity();
    int hit = -1;
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      const auto t = detail::intersect(scene.objects[k], ray.origin, ray.direction);
      if (t && *t < best) {
        best = *t;
        hit = static_cast<int>(k);
      }
    }
    if (hit < 0) continue;
    const Primitive& obj = scene.objects[static_cast<std::size_t>(hit)];
    out.instance_ids[p] = hit;
    out.class_ids[p] = obj.class_id;
    Vec3 albedo = obj.albedo;
    const Vec3 x = ray.origin + best * ray.direction;
    for (std::size_t q = 0; q < scene.parts.size(); ++q)
      if (scene.parts[q].parent == hit && x.y() >= scene.parts[q].cut_y) {
        out.part_ids[p] = static_cast<std::int32_t>(q);
        albedo = scene.parts[q].albedo;
      }
    for (int c = 0; c < 3; ++c) out.rgb[3 * p + c] = albedo[c];
  }
  return out;
}

namespace detail {

// Square structuring element of the given radius; radius < 0 erodes.
inline std::vector<std::uint8_t> morph(const std::vector<std::uint8_t>& m, int h, int w, int radius) {
  if (radius == 0) return m;
  const bool dilate = radius > 0;
  const int r = std::abs(radius);
  std::vector<std::uint8_t> out(m.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool any = false, all = true;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          const bool v = yy >= 0 && yy < h && xx >= 0 && xx < w && m[static_cast<std::size_t>(yy) * w + xx];
          any = any || v;
          all = all && v;
        }
      out[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(dilate ? any : all);
    }
  return out;
}

}  // namespace detail

inline constexpr int kMinMaskPixels = 10;

struct MaskOptions {
  int boundary_jitter_px = 0;
  double embed_noise = 0.0;
  std::uint64_t seed = 0;
};

/// SAM-style supervision for one camera: one binary mask per visible object
/// and per visible part, boundaries perturbed by a random dilation or erosion
/// of at most `boundary_jitter_px`, embeddings
/// normalize(codebook[class] + noise) where the noise has expected norm
/// `embed_noise`. Masks under kMinMaskPixels pixels are dropped.
inline std::vector<MaskRecord> make_view_masks(const GroundTruthScene& scene, const GtView& gt, int view_index,
                                               const MaskOptions& opts) {
  require(opts.boundary_jitter_px >= 0 && opts.embed_noise >= 0.0, "make_masksets: jitter and noise must be >= 0");
  std::mt19937_64 rng(mix64(opts.seed ^ mix64(static_cast<std::uint64_t>(view_index) + 17)));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(gt.height) * gt.width;
  std::vector<MaskRecord> out;
  auto emit = [&](const std::vector<std::int32_t>& ids, int id, int class_id) {
    std::vector<std::uint8_t> m(n, 0);
    std::size_t count = 0;
    for (std::size_t p = 0; p < n; ++p)
      if (ids[p] == id) {
        m[p] = 1;
        ++count;
      }
    if (count == 0) return;
    if (opts.boundary_jitter_px > 0) {
      const int r = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * opts.boundary_jitter_px + 1)) -
                    opts.boundary_jitter_px;
      m = detail::morph(m, gt.height, gt.width, r);
    }
    if (static_cast<int>(std::count(m.begin(), m.end(), 1)) < kMinMaskPixels) return;
    std::vector<double> e(scene.code(class_id).begin(), scene.code(class_id).end());
    const double s = opts.embed_noise / std::sqrt(static_cast<double>(scene.d_s));
    if (opts.embed_noise > 0.0)
      for (double& v : e) v += s * normal(rng);
    double norm = 0.0;
    for (double v : e) norm += v * v;
    norm = std::sqrt(norm);
    MaskRecord rec;
    rec.mask = std::move(m);
    for (double v : e) rec.embedding.push_back(static_cast<float>(v / norm));
    out.push_back(std::move(rec));
  };
  for (std::size_t k = 0; k < scene.objects.size(); ++k)
    emit(gt.instance_ids, static_cast<int>(k), scene.objects[k].class_id);
  for (std::size_t q = 0; q < scene.parts.size(); ++q) emit(gt.part_ids, static_cast<int>(q), scene.parts[q].class_id);
  return out;
}

inline std::vector<MaskSet> make_masksets(const GroundTruthScene& scene, const std::vector<int>& cameras,
                                          const MaskOptions& opts) {
  std::vector<MaskSet> out;
  for (int v : cameras) {
    const CameraModel& cam = scene.cameras.at(static_cast<std::size_t>(v));
    const GtView gt = render_gt(scene, cam);
    const auto recs = make_view_masks(scene, gt, v, opts);
    MaskSet ms;
    ms.view_id = v;
    ms.height = cam.height;
    ms.width = cam.width;
    ms.d_s = scene.d_s;
    for (const auto& r : recs) {
      ms.masks.insert(ms.masks.end(), r.mask.begin(), r.mask.end());
      ms.embeddings.insert(ms.embeddings.end(), r.embedding.begin(), r.embedding.end());
    }
    out.push_back(std::move(ms));
  }
  return out;
}

/// Seeded random unit vector orthogonal to every row of `rows` (vectors of
/// length d stored back to back).
inline std::vector<double> orthogonal_unit_vector(std::span<const double> rows, int d, std::uint64_t seed) {
  require(d >= 1 && rows.size() % static_cast<std::size_t>(d) == 0, "orthogonal_unit_vector: bad row buffer");
  const std::size_t count = rows.size() / static_cast<std::size_t>(d);
  require(count < static_cast<std::size_t>(d), "orthogonal_unit_vector: rows span the embedding space");
  const auto D = static_cast<std::size_t>(d);
  auto project_out = [&](std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : basis) {
        double uv = 0.0;
        for (std::size_t k = 0; k < D; ++k) uv += u[k] * v[k];
        for (std::size_t k = 0; k < D; ++k) v[k] -= uv * u[k];
      }
  };
  auto norm = [](const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    return std::sqrt(n);
  };
  std::vector<std::vector<double>> basis;
  for (std::size_t r = 0; r < count; ++r) {
    std::vector<double> u(rows.begin() + static_cast<std::ptrdiff_t>(r * D),
                          rows.begin() + static_cast<std::ptrdiff_t>((r + 1) * D));
    const double n0 = norm(u);
    project_out(u, basis);
    const double n = norm(u);
    if (n <= 1e-9 * std::max(1.0, n0)) continue;  // dependent row
    for (double& x : u) x /= n;
    basis.push_back(std::move(u));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(D);
  for (;;) {
    for (double& x : v) x = normal(rng);
    project_out(v, basis);
    const double n = norm(v);
    if (n > 1e-6) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

/// Unit vector orthogonal to every codebook row.
inline std::vector<double> orthogonal_query(const GroundTruthScene& scene, std::uint64_t seed) {
  return orthogonal_unit_vector(scene.codebook, scene.d_s, seed);
}

struct SyntheticDatasetOptions {
  MaskOptions masks;
  int holdout_stride = 4;  // every holdout_stride-th camera (offset stride-1) is a test view
};

/// Packs a scene into the on-disk dataset layout: RGBA images (alpha = object
/// coverage), masks for train views, GT label maps for every view, class and
/// canonical embeddings.
inline SceneDataset make_dataset(const GroundTruthScene& scene, const SyntheticDatasetOptions& opts,
                                 const std::string& name = "synthetic") {
  SceneDataset ds;
  ds.name = name;
  ds.d_s = scene.d_s;
  ds.width = scene.cameras.front().width;
  ds.height = scene.cameras.front().height;
  ds.bounds = scene.bounds;
  ds.cameras = scene.cameras;
  for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
    const GtView gt = render_gt(scene, scene.cameras[v]);
    ViewRecord rec;
    rec.view_id = static_cast<int>(v);
    rec.camera = static_cast<int>(v);
    rec.split = (opts.holdout_stride > 0 && static_cast<int>(v) % opts.holdout_stride == opts.holdout_stride - 1)
                    ? "test"
                    : "train";
    rec.channels = 4;
    const std::size_t n = scene.cameras[v].pixel_count();
    rec.image.resize(4 * n);
    for (std::size_t p = 0; p < n; ++p) {
      for (int c = 0; c < 3; ++c) rec.image[4 * p + c] = static_cast<float>(gt.rgb[3 * p + c]);
      rec.image[4 * p + 3] = gt.instance_ids[p] >= 0 ? 1.0f : 0.0f;
    }
    if (rec.split == "train") rec.masks = make_view_masks(scene, gt, static_cast<int>(v), opts.masks);
    rec.gt_labels = gt.class_ids;
    rec.gt_instances = gt.instance_ids;
    rec.gt_parts = gt.part_ids;
    ds.views.push_back(std::move(rec));
  }
  for (int c = 0; c < scene.num_classes; ++c) {
    const bool is_part = c >= static_cast<int>(scene.objects.size());
    ds.classes.names.push_back(is_part ? "object_" + std::to_string(c - static_cast<int>(scene.objects.size())) + "_top"
                                       : "object_" + std::to_string(c));
    for (double x : scene.code(c)) ds.classes.values.push_back(static_cast<float>(x));
  }
  for (int k = 0; k < scene.num_canonicals; ++k) {
    ds.canonicals.names.push_back(k < 4 ? canonical_phrases()[static_cast<std::size_t>(k)] : "canonical_" + std::to_string(k));
    for (double x : scene.code(scene.num_classes + k)) ds.canonicals.values.push_back(static_cast<float>(x));
  }
  return ds;
}

}  // namespace maskfield
