#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <string>
#include <span>
#include <vector>

#include "maskfield/dataset.hpp"
#include "maskfield/field.hpp"
#include "maskfield/inference.hpp"
#include "maskfield/metrics.hpp"
#include "maskfield/synthetic.hpp"
#include "maskfield/trainer.hpp"

namespace maskfield {

/// Deterministic (unjittered) rendering used for every evaluation.
inline RenderOptions inference_render_options(const TrainConfig& cfg) {
  RenderOptions ro;
  ro.sampling.n_samples = cfg.n_samples;
  ro.threads = cfg.threads;
  return ro;
}

inline RenderedView render_dataset_view(const SceneDataset& ds, const SceneField& field, int v,
                                        const RenderOptions& ro) {
  require(v >= 0 && v < static_cast<int>(ds.views.size()), "view index " + std::to_string(v) + " out of range");
  return render_view(field, ds.cameras[static_cast<std::size_t>(ds.views[static_cast<std::size_t>(v)].camera)], ro);
}

inline TextEmbeddingSet dataset_texts(const SceneDataset& ds) {
  require(ds.classes.rows() > 0, "dataset '" + ds.name + "' has no class embeddings");
  return text_embeddings(ds.classes, ds.d_s);
}

inline std::vector<double> dataset_canonicals(const SceneDataset& ds) {
  require(ds.canonicals.rows() > 0, "dataset '" + ds.name + "' has no canonical embeddings");
  return {ds.canonicals.values.begin(), ds.canonicals.values.end()};
}

/// Embedding row of a named class.
inline std::vector<double> class_embedding(const SceneDataset& ds, const std::string& name) {
  for (std::size_t c = 0; c < ds.classes.rows(); ++c)
    if (ds.classes.names[c] == name)
      return {ds.classes.values.begin() + static_cast<std::ptrdiff_t>(c * ds.d_s),
              ds.classes.values.begin() + static_cast<std::ptrdiff_t>((c + 1) * ds.d_s)};
  throw ValidationError("unknown class '" + name + "'");
}

/// Unit query orthogonal to every class and canonical embedding.
inline std::vector<double> orthogonal_query(const SceneDataset& ds, std::uint64_t seed) {
  std::vector<double> rows(ds.classes.values.begin(), ds.classes.values.end());
  rows.insert(rows.end(), ds.canonicals.values.begin(), ds.canonicals.values.end());
  return orthogonal_unit_vector(rows, ds.d_s, seed);
}

struct EvalOptions {
  SegmentOptions segment;
  int boundary_d = 2;
};

/// Segments `views` and scores them against their GT label maps; counts are
/// pooled over views.
inline EvalReport evaluate(const SceneDataset& ds, const Model& model, std::span<const int> views,
                           const RenderOptions& ro, const EvalOptions& opts = {},
                           std::vector<SegmentationMap>* maps = nullptr) {
  const TextEmbeddingSet texts = dataset_texts(ds);
  const Tokens tokens = compute_tokens(model.bank);
  EvalAccumulator acc(opts.boundary_d);
  for (int v : views) {
    const ViewRecord& rec = ds.views[static_cast<std::size_t>(v)];
    require(!rec.gt_labels.empty(), "view " + std::to_string(rec.view_id) + " has no GT labels to evaluate against");
    const RenderedView rv = render_dataset_view(ds, model.field, v, ro);
    SegmentationMap seg = segment(rv, tokens, texts, opts.segment);
    acc.add(seg.labels, rec.gt_labels, ds.height, ds.width);
    if (maps) maps->push_back(std::move(seg));
  }
  return acc.report();
}

/// Best-of-`repeats` mean wall time to render one view, in milliseconds.
inline double render_ms_per_view(const SceneDataset& ds, const SceneField& field, std::span<const int> views,
                                 const RenderOptions& ro, int repeats = 3) {
  require(!views.empty(), "render_ms_per_view: no views");
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int v : views) render_dataset_view(ds, field, v, ro);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    best = std::min(best, ms / static_cast<double>(views.size()));
  }
  return best;
}

struct QueryScore {
  double iou = 0.0;
  std::uint64_t pixels_on = 0;
  std::size_t survivors = 0;
};

/// Query IoU pooled over views against per-view binary GT (`gt[v]` is H*W
/// with non-zero = inside). Empty GT and empty prediction score 1.
inline QueryScore score_query(const SceneDataset& ds, const Model& model, std::span<const int> views,
                              std::span<const double> query, const std::vector<std::vector<std::uint8_t>>& gt,
                              const RenderOptions& ro, const QueryOptions& qo = {}) {
  require(gt.size() == views.size(), "score_query: one GT mask per view required");
  const Tokens tokens = compute_tokens(model.bank);
  const std::vector<double> canon = dataset_canonicals(ds);
  std::uint64_t inter = 0, uni = 0;
  QueryScore s;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const RenderedView rv = render_dataset_view(ds, model.field, views[i], ro);
    const QueryResult r = query_object(rv, tokens, query, canon, qo);
    s.survivors += r.survivors.size();
    for (std::size_t p = 0; p < r.mask.size(); ++p) {
      const bool g = gt[i][p] != 0, m = r.mask[p] != 0;
      inter += g && m;
      uni += g || m;
      s.pixels_on += m;
    }
  }
  s.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return s;
}

/// Stage-2 starting point for a different d_m: geometry, color and their
/// optimizer moments come from `geo`; features and token bank are freshly
/// initialised for cfg.d_m.
inline TrainState with_feature_dim(const SceneDataset& ds, const TrainState& geo, const TrainConfig& cfg) {
  TrainState st = init_state(ds, cfg);
  require(backend_of(st.model.field) == backend_of(geo.model.field), "with_feature_dim: backend mismatch");
  std::vector<double> fresh = std::move(feature_params(st.model.field));
  st.model.field = geo.model.field;
  feature_params(st.model.field) = std::move(fresh);
  if (auto* g = std::get_if<GridField>(&st.model.field)) g->d_m = cfg.d_m;
  if (auto* c = std::get_if<SplatCloud>(&st.model.field)) c->d_m = cfg.d_m;
  st.opt_geometry = geo.opt_geometry;
  st.opt_color = geo.opt_color;
  st.stage1_step = geo.stage1_step;
  return st;
}

/// GT mask of `id` in an id map (instance or part ids).
inline std::vector<std::uint8_t> id_mask(std::span<const std::int32_t> ids, int id) {
  std::vector<std::uint8_t> m(ids.size());
  for (std::size_t p = 0; p < ids.size(); ++p) m[p] = ids[p] == id ? 1 : 0;
  return m;
}

}  // namespace maskfield
