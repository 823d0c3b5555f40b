#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "maskfield/dataset.hpp"
#include "maskfield/field.hpp"
#include "maskfield/losses.hpp"
#include "maskfield/optimizer.hpp"
#include "maskfield/token_bank.hpp"

namespace maskfield {

struct TrainConfig {
  Backend backend = Backend::kGrid;
  int d_m = 16;
  int d_s = 32;
  int n_k = 64;
  int stage1_steps = 2000;
  int stage2_steps = 2000;
  double learning_rate = 5e-3;
  double geometry_learning_rate = 1e-1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int n_samples = 64;
  double view_fraction = 1.0;
  int grid_resolution = 64;
  int splat_count = 20000;
  double splat_radius = 0.02;
  int ray_batch = 4096;
  int num_freqs = 6;
  int hidden = 64;
  LossHyper loss;
  int threads = 1;

  void validate() const {
    require(d_m >= 1 && d_s >= 1 && n_k >= 1, "config: d_m, d_s and n_k must be positive");
    require(stage1_steps >= 0 && stage2_steps >= 0, "config: step counts must be non-negative");
    require(n_samples >= 1, "config: n_samples must be >= 1");
    require(view_fraction > 0.0 && view_fraction <= 1.0, "config: view_fraction must lie in (0, 1]");
    require(grid_resolution >= 2 && splat_count >= 1 && splat_radius > 0.0, "config: bad field size");
    require(ray_batch >= 1 && num_freqs >= 1 && hidden >= 1, "config: bad batch or MLP size");
    require(geometry_learning_rate > 0.0, "config: geometry learning rate must be positive");
    adam().validate();
  }

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
  AdamConfig geometry_adam() const { return {geometry_learning_rate, beta1, beta2, epsilon}; }
};

struct Model {
  SceneField field;
  TokenBank bank;
};

/// Everything needed to continue training bit-identically.
struct TrainState {
  Model model;
  OptimizerState opt_geometry, opt_color, opt_feature, opt_query, opt_semantic;
  std::mt19937_64 rng;
  std::int64_t stage1_step = 0;
  std::int64_t stage2_step = 0;
};

inline std::uint64_t next_u64(std::mt19937_64& rng) { return rng(); }
inline double next_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Fresh field (per backend) and token bank, seeded from config.seed.
inline TrainState init_state(const SceneDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  require(cfg.d_s == ds.d_s, "config: d_s " + std::to_string(cfg.d_s) + " does not match dataset d_s " +
                                 std::to_string(ds.d_s));
  TrainState st;
  if (cfg.backend == Backend::kGrid) {
    const int r = cfg.grid_resolution;
    st.model.field = make_grid({r, r, r}, ds.bounds, cfg.d_m, mix64(cfg.seed));
  } else {
    st.model.field = make_splats(static_cast<std::size_t>(cfg.splat_count), ds.bounds, cfg.d_m, mix64(cfg.seed),
                                 cfg.splat_radius);
  }
  st.model.bank = make_token_bank(cfg.n_k, cfg.d_m, cfg.d_s, mix64(cfg.seed + 1), cfg.num_freqs, cfg.hidden);
  st.rng.seed(mix64(cfg.seed + 2));
  return st;
}

struct GeometryResult {
  std::vector<double> loss_history;
  std::vector<double> wall_ms;
  double final_mse = 0.0;
};

namespace detail {

// Target color of a pixel composited over `bg` (alpha channel if present).
inline void target_color(const ViewRecord& rec, std::size_t p, const double* bg, double* out) {
  if (rec.channels == 4) {
    const double a = rec.image[4 * p + 3];
    for (int c = 0; c < 3; ++c) out[c] = rec.image[4 * p + c] + (1.0 - a) * bg[c];
  } else {
    for (int c = 0; c < 3; ++c) out[c] = rec.image[static_cast<std::size_t>(rec.channels) * p + c];
  }
}

inline std::vector<int> require_train_views(const SceneDataset& ds) {
  auto views = ds.views_in_split("train");
  if (views.empty()) throw ValidationError("dataset has no posed training images");
  return views;
}

}  // namespace detail

/// Mean squared photometric error over the training views, rendered without
/// jitter against a black background.
inline double photometric_mse(const SceneDataset& ds, const SceneField& field, const TrainConfig& cfg) {
  const auto views = detail::require_train_views(ds);
  RenderOptions ro;
  ro.sampling.n_samples = cfg.n_samples;
  ro.threads = cfg.threads;
  double sum = 0.0;
  std::size_t count = 0;
  const double black[3] = {0, 0, 0};
  for (int v : views) {
    const ViewRecord& rec = ds.views[static_cast<std::size_t>(v)];
    const RenderedView rv = render_view(field, ds.cameras[static_cast<std::size_t>(rec.camera)], ro);
    for (std::size_t p = 0; p < rv.pixels(); ++p) {
      double t[3];
      detail::target_color(rec, p, black, t);
      for (int c = 0; c < 3; ++c) {
        const double d = rv.color[3 * p + c] - t[c];
        sum += d * d;
      }
      count += 3;
    }
  }
  return sum / static_cast<double>(count);
}

/// Stage 1: fits density/opacity and color to the training images. Runs
/// from state.stage1_step up to cfg.stage1_steps; mask features and tokens are
/// untouched. Each step draws random backgrounds so that empty space is
/// explained by low density rather than dark color (needs an alpha channel;
/// RGB-only datasets use black).
inline GeometryResult train_geometry(const SceneDataset& ds, const TrainConfig& cfg, TrainState& st,
                                     const std::function<void(std::int64_t, double)>& on_step = {}) {
  cfg.validate();
  const auto views = detail::require_train_views(ds);
  GeometryResult res;
  const AdamConfig geo = cfg.geometry_adam(), col = cfg.adam();
  const std::size_t npix = ds.pixels();
  std::vector<SplatRaster> rasters;
  if (const auto* cloud = std::get_if<SplatCloud>(&st.model.field))
    for (int v : views)
      rasters.push_back(rasterize_footprints(*cloud, ds.cameras[static_cast<std::size_t>(ds.views[static_cast<std::size_t>(v)].camera)]));

  for (; st.stage1_step < cfg.stage1_steps; ++st.stage1_step) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss = 0.0;
    FieldGradient grad;
    if (auto* grid = std::get_if<GridField>(&st.model.field)) {
      const std::size_t B = static_cast<std::size_t>(cfg.ray_batch);
      std::vector<BatchRay> rays(B);
      std::vector<double> bg(3 * B), target(3 * B);
      for (std::size_t b = 0; b < B; ++b) {
        const int v = views[next_u64(st.rng) % views.size()];
        const ViewRecord& rec = ds.views[static_cast<std::size_t>(v)];
        const CameraModel& cam = ds.cameras[static_cast<std::size_t>(rec.camera)];
        const std::size_t p = next_u64(st.rng) % npix;
        for (int c = 0; c < 3; ++c) bg[3 * b + c] = rec.channels == 4 ? next_uniform(st.rng) : 0.0;
        rays[b].ray = pixel_ray(cam, static_cast<int>(p / cam.width), static_cast<int>(p % cam.width));
        rays[b].near = cam.near;
        rays[b].far = cam.far;
        rays[b].stream = (static_cast<std::uint64_t>(v) << 32) | p;
        detail::target_color(rec, p, &bg[3 * b], &target[3 * b]);
      }
      RenderOptions ro;
      ro.sampling = {cfg.n_samples, true, mix64(cfg.seed ^ static_cast<std::uint64_t>(st.stage1_step))};
      ro.threads = cfg.threads;
      ro.min_transmittance = 1e-4;
      const double scale = 1.0 / static_cast<double>(3 * B);
      loss = fit_ray_batch(
          *grid, rays, ro,
          [&](std::size_t b, const double* color, double accum, double* g_color, double& g_accum) {
            double l = 0.0;
            for (int c = 0; c < 3; ++c) {
              const double r = color[c] + (1.0 - accum) * bg[3 * b + c] - target[3 * b + c];
              l += r * r;
              g_color[c] = 2.0 * scale * r;
              g_accum -= 2.0 * scale * r * bg[3 * b + c];
            }
            return l * scale;
          },
          grad);
    } else {
      const auto& cloud = std::get<SplatCloud>(st.model.field);
      const std::size_t k = next_u64(st.rng) % views.size();
      const ViewRecord& rec = ds.views[static_cast<std::size_t>(views[k])];
      const RenderedView rv = render_splats(cloud, rasters[k]);
      RenderedView up(rv.height, rv.width, rv.d_m);
      const double scale = 2.0 / static_cast<double>(3 * npix);
      for (std::size_t p = 0; p < npix; ++p) {
        double bg[3], t[3];
        for (double& c : bg) c = rec.channels == 4 ? next_uniform(st.rng) : 0.0;
        detail::target_color(rec, p, bg, t);
        for (int c = 0; c < 3; ++c) {
          const double r = rv.color[3 * p + c] + (1.0 - rv.accum_opacity[p]) * bg[c] - t[c];
          loss += r * r;
          up.color[3 * p + c] = scale * r;
          up.accum_opacity[p] -= scale * r * bg[c];
        }
      }
      loss /= static_cast<double>(3 * npix);
      grad = backprop_splats(cloud, rasters[k], up, {true, true, false});
    }
    adam_step(geometry_params(st.model.field), grad.geometry, st.opt_geometry, geo);
    adam_step(color_params(st.model.field), grad.color, st.opt_color, col);
    res.loss_history.push_back(loss);
    res.wall_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    if (on_step) on_step(st.stage1_step, loss);
  }
  res.final_mse = photometric_mse(ds, st.model.field, cfg);
  return res;
}

struct MaskStepLog {
  std::int64_t step = 0;
  int view = 0;
  LossBreakdown loss;
  double wall_ms = 0.0;
};

struct MaskFieldResult {
  std::vector<MaskStepLog> history;
  std::vector<int> supervised_views;
};

/// ceil(view_fraction * V) distinct training views with masks, chosen by a
/// seeded shuffle and returned in ascending order.
inline std::vector<int> supervised_views(const SceneDataset& ds, const TrainConfig& cfg) {
  std::vector<int> candidates;
  for (int v : ds.views_in_split("train"))
    if (!ds.views[static_cast<std::size_t>(v)].masks.empty()) candidates.push_back(v);
  if (candidates.empty()) throw ValidationError("dataset has no training views with masks");
  const auto k = static_cast<std::size_t>(std::ceil(cfg.view_fraction * static_cast<double>(candidates.size()) - 1e-9));
  std::mt19937_64 rng(mix64(cfg.seed + 3));
  for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng() % i]);
  candidates.resize(std::max<std::size_t>(1, k));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

/// Everything computed for one supervised view in stage 2.
struct MaskForward {
  std::vector<double> feature;  // H*W*d_m
  Tokens tokens;
  std::vector<double> probs;  // n_k*H*W
  LossResult loss;
};

inline MaskForward mask_forward(const FeatureRenderCache& cache, const Model& model, const MaskSet& target,
                                const LossHyper& hyper) {
  const int dm = model.bank.d_m;
  MaskForward f;
  f.feature.assign(cache.rows() * dm, 0.0);
  cache.render(feature_params(model.field), dm, f.feature);
  f.tokens = compute_tokens(model.bank);
  f.probs = mask_probabilities(mask_logits(f.feature, 1, static_cast<int>(cache.rows()), f.tokens));
  f.loss = total_loss(f.probs, f.tokens.semantic, model.bank.n_k, target, hyper);
  return f;
}

/// Stage 2: trains mask features and the token bank against the per-view
/// mask sets with geometry frozen. Losses cover the pixels the frozen
/// geometry renders as foreground (opacity >= kForegroundOpacity), the same
/// rule inference uses for background. Runs from state.stage2_step up to
/// cfg.stage2_steps. Density/opacity and color are never written.
inline MaskFieldResult train_maskfield(const SceneDataset& ds, const TrainConfig& cfg, TrainState& st,
                                       const std::function<void(const MaskStepLog&)>& on_step = {}) {
  cfg.validate();
  require(feature_dim(st.model.field) == cfg.d_m && st.model.bank.d_m == cfg.d_m,
          "train_maskfield: model d_m does not match config d_m " + std::to_string(cfg.d_m));
  require(st.model.bank.n_k == cfg.n_k && st.model.bank.d_s == ds.d_s, "train_maskfield: token bank shape mismatch");
  MaskFieldResult res;
  res.supervised_views = supervised_views(ds, cfg);
  std::vector<MaskSet> targets;
  for (int v : res.supervised_views) {
    const MaskSet ms = ds.mask_set(v);
    require(ms.count() <= cfg.n_k, "view " + std::to_string(ds.views[static_cast<std::size_t>(v)].view_id) + " has " +
                                       std::to_string(ms.count()) + " masks but n_k is " + std::to_string(cfg.n_k));
    ms.validate();
  }
  std::vector<FeatureRenderCache> caches;
  std::vector<std::vector<std::uint32_t>> active;  // feature coordinates each view reaches
  FeatureCacheOptions co;
  co.n_samples = cfg.n_samples;
  co.min_opacity = kForegroundOpacity;
  const int dm = cfg.d_m;
  for (int v : res.supervised_views) {
    caches.push_back(build_feature_cache(st.model.field,
                                         ds.cameras[static_cast<std::size_t>(ds.views[static_cast<std::size_t>(v)].camera)], co));
    require(caches.back().rows() > 0, "train_maskfield: view " + std::to_string(v) + " renders no foreground pixels");
    targets.push_back(restrict_to_cache(ds.mask_set(v), caches.back()));
    std::vector<std::uint32_t> voxels(caches.back().param);
    std::sort(voxels.begin(), voxels.end());
    voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());
    auto& a = active.emplace_back();
    a.reserve(voxels.size() * static_cast<std::size_t>(dm));
    for (std::uint32_t p : voxels)
      for (int c = 0; c < dm; ++c) a.push_back(p * static_cast<std::uint32_t>(dm) + static_cast<std::uint32_t>(c));
  }
  std::vector<double>& features = feature_params(st.model.field);
  std::vector<double> feature_grad(features.size(), 0.0);
  const AdamConfig adam = cfg.adam();

  for (; st.stage2_step < cfg.stage2_steps; ++st.stage2_step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t k = next_u64(st.rng) % res.supervised_views.size();
    const MaskSet& target = targets[k];
    const FeatureRenderCache& cache = caches[k];
    MaskForward fw = mask_forward(cache, st.model, target, cfg.loss);
    std::vector<double> logit_grad(fw.probs.size());
    for (std::size_t i = 0; i < fw.probs.size(); ++i)
      logit_grad[i] = fw.loss.grad_probs[i] * fw.probs[i] * (1.0 - fw.probs[i]);
    const TokenGradients tg = backprop_tokens(st.model.bank, fw.tokens, fw.feature, 1, static_cast<int>(cache.rows()),
                                              logit_grad, fw.loss.grad_semantic);
    for (std::uint32_t i : active[k]) feature_grad[i] = 0.0;
    cache.backprop(tg.feature, dm, feature_grad);
    adam_step_sparse(features, feature_grad, st.opt_feature, adam, active[k]);
    adam_step(st.model.bank.query_mlp.params, tg.query_mlp, st.opt_query, adam);
    adam_step(st.model.bank.semantic_mlp.params, tg.semantic_mlp, st.opt_semantic, adam);
    MaskStepLog log;
    log.step = st.stage2_step;
    log.view = res.supervised_views[k];
    log.loss = fw.loss.loss;
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(log);
    if (on_step) on_step(log);
  }
  return res;
}

struct GradcheckOptions {
  double epsilon = 1e-4;
  std::size_t coords = 200;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

/// Central differences on a random subset of coordinates of `params`,
/// compared against `analytic`; error = |a - n| / max(1, |a|, |n|).
inline GradcheckReport gradcheck(const std::function<double()>& loss, std::span<double> params,
                                 std::span<const double> analytic, const GradcheckOptions& opts = {}) {
  require(params.size() == analytic.size(), "gradcheck: parameter/gradient size mismatch");
  std::vector<std::size_t> idx(params.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix64(opts.seed));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  idx.resize(std::min(idx.size(), opts.coords));
  GradcheckReport rep;
  for (std::size_t i : idx) {
    const double saved = params[i];
    params[i] = saved + opts.epsilon;
    const double up = loss();
    params[i] = saved - opts.epsilon;
    const double down = loss();
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw ValidationError("gradcheck: loss is not finite");
    const double numeric = (up - down) / (2.0 * opts.epsilon);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    rep.max_rel_error = std::max(rep.max_rel_error, err);
    ++rep.coords_checked;
  }
  return rep;
}

/// Small randomized instance of the whole differentiable path: render ->
/// photometric + distillation loss -> tokens, used to validate every
/// analytic gradient together.
struct PipelineProblem {
  Model model;
  std::vector<CameraModel> cameras;
  std::vector<std::vector<double>> rgb_targets;
  std::vector<MaskSet> targets;
  std::vector<MatchResult> matches;  // frozen at construction
  RenderOptions render;
  LossHyper hyper;
};

inline PipelineProblem make_pipeline_problem(Backend backend, std::uint64_t seed, int grid_res = 8, int image = 4,
                                             int n_tokens = 4, int d_m = 4, int d_s = 8, int n_views = 2) {
  PipelineProblem pb;
  std::mt19937_64 rng(mix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  const Aabb bounds{Vec3::Constant(-0.5), Vec3::Constant(0.5)};
  if (backend == Backend::kGrid) {
    GridField g = make_grid({grid_res, grid_res, grid_res}, bounds, d_m, rng());
    for (double& x : g.density) x = 1.0 + normal(rng);
    for (double& x : g.color) x = 0.5 + 0.3 * normal(rng);
    for (double& x : g.mask_feature) x = 0.7 * normal(rng);
    pb.model.field = std::move(g);
  } else {
    SplatCloud s = make_splats(static_cast<std::size_t>(grid_res * grid_res), bounds, d_m, rng(), 0.15);
    for (double& x : s.opacities_raw) x = normal(rng);
    for (double& x : s.colors) x = 0.5 + 0.3 * normal(rng);
    for (double& x : s.mask_features) x = 0.7 * normal(rng);
    pb.model.field = std::move(s);
  }
  pb.model.bank = make_token_bank(n_tokens, d_m, d_s, rng(), 3, 8);
  pb.render.sampling.n_samples = 16;
  const std::size_t npix = static_cast<std::size_t>(image) * image;
  for (int v = 0; v < n_views; ++v) {
    const double az = 0.7 + 2.0 * v;
    const Vec3 eye(2.0 * std::cos(az), 0.6, 2.0 * std::sin(az));
    pb.cameras.push_back(look_at(eye, Vec3::Zero(), Vec3::UnitY(), 1.4 * image, image, image, 1.0, 3.2));
    std::vector<double> rgb(3 * npix);
    for (double& x : rgb) x = next_uniform(rng);
    pb.rgb_targets.push_back(rgb);
    MaskSet ms;
    ms.view_id = v;
    ms.height = ms.width = image;
    ms.d_s = d_s;
    for (int j = 0; j < 2; ++j) {
      for (std::size_t p = 0; p < npix; ++p) ms.masks.push_back(next_uniform(rng) < 0.4 ? 1.0 : 0.0);
      std::vector<double> e(static_cast<std::size_t>(d_s));
      double n = 0.0;
      for (double& x : e) {
        x = normal(rng);
        n += x * x;
      }
      for (double& x : e) ms.embeddings.push_back(x / std::sqrt(n));
    }
    pb.targets.push_back(std::move(ms));
  }
  for (int v = 0; v < n_views; ++v) {
    const RenderedView rv = render_view(pb.model.field, pb.cameras[static_cast<std::size_t>(v)], pb.render);
    const Tokens tk = compute_tokens(pb.model.bank);
    const auto probs = mask_probabilities(mask_logits(rv.feature, image, image, tk));
    pb.matches.push_back(total_loss(probs, tk.semantic, n_tokens, pb.targets[static_cast<std::size_t>(v)], pb.hyper,
                                    false).match);
  }
  return pb;
}

struct PipelineGradient {
  FieldGradient field;
  std::vector<double> query_mlp;
  std::vector<double> semantic_mlp;
};

/// Sum over views of photometric MSE plus total distillation loss with the
/// frozen matches; optionally its exact gradient.
inline double pipeline_loss(const PipelineProblem& pb, PipelineGradient* grad = nullptr) {
  double total = 0.0;
  const int nk = pb.model.bank.n_k, dm = pb.model.bank.d_m;
  if (grad) {
    grad->field = {};
    grad->query_mlp.assign(pb.model.bank.query_mlp.size(), 0.0);
    grad->semantic_mlp.assign(pb.model.bank.semantic_mlp.size(), 0.0);
  }
  const Tokens tk = compute_tokens(pb.model.bank);
  for (std::size_t v = 0; v < pb.cameras.size(); ++v) {
    const CameraModel& cam = pb.cameras[v];
    const RenderedView rv = render_view(pb.model.field, cam, pb.render);
    const std::size_t npix = rv.pixels();
    RenderedView up(cam.height, cam.width, dm);
    for (std::size_t i = 0; i < rv.color.size(); ++i) {
      const double r = rv.color[i] - pb.rgb_targets[v][i];
      total += r * r / static_cast<double>(rv.color.size());
      up.color[i] = 2.0 * r / static_cast<double>(rv.color.size());
    }
    const auto probs = mask_probabilities(mask_logits(rv.feature, cam.height, cam.width, tk));
    const LossResult lr = total_loss(probs, tk.semantic, nk, pb.targets[v], pb.hyper, grad != nullptr, pb.matches[v]);
    total += lr.loss.l_total;
    if (!grad) continue;
    std::vector<double> dz(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) dz[i] = lr.grad_probs[i] * probs[i] * (1.0 - probs[i]);
    const TokenGradients tg = backprop_tokens(pb.model.bank, tk, rv.feature, cam.height, cam.width, dz, lr.grad_semantic);
    for (std::size_t i = 0; i < npix * dm; ++i) up.feature[i] = tg.feature[i];
    grad->field.add(backprop_view(pb.model.field, cam, pb.render, up));
    for (std::size_t i = 0; i < tg.query_mlp.size(); ++i) grad->query_mlp[i] += tg.query_mlp[i];
    for (std::size_t i = 0; i < tg.semantic_mlp.size(); ++i) grad->semantic_mlp[i] += tg.semantic_mlp[i];
  }
  return total;
}

struct PipelineGradcheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  double geometry = 0.0, color = 0.0, feature = 0.0, query_mlp = 0.0, semantic_mlp = 0.0;
};

/// Checks every parameter group of the pipeline problem against central
/// differences (`per_group` coordinates per group).
inline PipelineGradcheckReport pipeline_gradcheck(PipelineProblem& pb, std::size_t per_group = 60,
                                                  double epsilon = 1e-4, std::uint64_t seed = 0) {
  PipelineGradient g;
  pipeline_loss(pb, &g);
  const auto closure = [&pb] { return pipeline_loss(pb); };
  PipelineGradcheckReport rep;
  auto run = [&](std::vector<double>& params, const std::vector<double>& analytic, double& slot, std::uint64_t salt) {
    const auto r = gradcheck(closure, params, analytic, {epsilon, per_group, seed ^ salt});
    slot = r.max_rel_error;
    rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
    rep.coords_checked += r.coords_checked;
  };
  run(geometry_params(pb.model.field), g.field.geometry, rep.geometry, 1);
  run(color_params(pb.model.field), g.field.color, rep.color, 2);
  run(feature_params(pb.model.field), g.field.feature, rep.feature, 3);
  run(pb.model.bank.query_mlp.params, g.query_mlp, rep.query_mlp, 4);
  run(pb.model.bank.semantic_mlp.params, g.semantic_mlp, rep.semantic_mlp, 5);
  return rep;
}

}  // namespace maskfield
