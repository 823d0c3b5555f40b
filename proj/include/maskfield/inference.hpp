#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maskfield/common.hpp"
#include "maskfield/dataset.hpp"
#include "maskfield/rendered_view.hpp"
#include "maskfield/token_bank.hpp"

namespace maskfield {

/// Class names with one unit-norm text embedding each (C x d_s).
struct TextEmbeddingSet {
  std::vector<std::string> class_names;
  std::vector<double> embeddings;
  int d_s = 0;

  int count() const { return static_cast<int>(class_names.size()); }
  std::span<const double> row(int c) const {
    return {embeddings.data() + static_cast<std::size_t>(c) * d_s, static_cast<std::size_t>(d_s)};
  }

  void validate() const {
    require(!class_names.empty(), "text embeddings: need at least one class");
    require(d_s >= 1 && embeddings.size() == class_names.size() * static_cast<std::size_t>(d_s),
            "text embeddings: size does not match classes x d_s");
    for (int c = 0; c < count(); ++c) {
      double n = 0.0;
      for (double x : row(c)) n += x * x;
      require(std::abs(std::sqrt(n) - 1.0) < 1e-4, "text embeddings: row " + std::to_string(c) + " is not unit norm");
    }
  }
};

inline TextEmbeddingSet text_embeddings(const EmbeddingTable& table, int d_s) {
  TextEmbeddingSet t;
  t.class_names = table.names;
  t.d_s = d_s;
  t.embeddings.assign(table.values.begin(), table.values.end());
  return t;
}

struct SegmentationMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;  // -1 background
  std::vector<double> scores;
  bool no_masks_kept = false;
};

inline constexpr double kRelevanceTemperature = 0.1;

namespace detail {
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline bool is_zero_row(std::span<const double> a) {
  for (double x : a)
    if (x != 0.0) return false;
  return true;
}
}  // namespace detail

/// p[i, c]: softmax over masks i of cos(S_i, T_c) / tau. Zero token rows are
/// excluded (p = 0). Returned row-major n_k x C.
inline std::vector<double> relevance(std::span<const double> semantic, int n_k, const TextEmbeddingSet& texts,
                                     double tau = kRelevanceTemperature) {
  const int C = texts.count();
  const int ds = texts.d_s;
  require(semantic.size() == static_cast<std::size_t>(n_k) * ds, "relevance: semantic tokens do not match d_s");
  require(tau > 0.0, "relevance: temperature must be positive");
  std::vector<double> p(static_cast<std::size_t>(n_k) * C, 0.0);
  std::vector<bool> zero(static_cast<std::size_t>(n_k));
  for (int i = 0; i < n_k; ++i) zero[i] = detail::is_zero_row(semantic.subspan(static_cast<std::size_t>(i) * ds, ds));
  for (int c = 0; c < C; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_k; ++i) {
      if (zero[i]) continue;
      const double z = detail::dot(semantic.subspan(static_cast<std::size_t>(i) * ds, ds), texts.row(c)) / tau;
      p[static_cast<std::size_t>(i) * C + c] = z;
      mx = std::max(mx, z);
    }
    if (!std::isfinite(mx)) continue;
    double sum = 0.0;
    for (int i = 0; i < n_k; ++i) {
      if (zero[i]) continue;
      double& v = p[static_cast<std::size_t>(i) * C + c];
      v = std::exp(v - mx);
      sum += v;
    }
    for (int i = 0; i < n_k; ++i)
      if (!zero[i]) p[static_cast<std::size_t>(i) * C + c] /= sum;
  }
  return p;
}

/// IoU of two masks binarised at > 0.5; two empty masks have IoU 0.
inline double binary_iou(std::span<const double> a, std::span<const double> b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    const bool x = a[p] > 0.5, y = b[p] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Greedy NMS over n masks of `pixels` each. Highest score first, ties to the
/// lower index; returns kept indices in visiting order.
inline std::vector<int> nms(std::span<const double> masks, std::size_t pixels, std::span<const double> scores,
                            double iou_thresh) {
  const std::size_t n = scores.size();
  require(masks.size() == n * pixels, "nms: mask buffer does not match count x pixels");
  for (double s : scores) require(std::isfinite(s), "nms: scores must be finite");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> kept;
  for (int i : order) {
    const auto mi = masks.subspan(static_cast<std::size_t>(i) * pixels, pixels);
    bool suppressed = false;
    for (int k : kept)
      if (binary_iou(mi, masks.subspan(static_cast<std::size_t>(k) * pixels, pixels)) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

/// k x k box mean with zero padding; the window spans offsets
/// -floor(k/2) .. ceil(k/2)-1 and always divides by k^2.
inline std::vector<double> smooth(std::span<const double> mask, int height, int width, int k = 10) {
  require(k >= 1, "smooth: window must be >= 1");
  require(mask.size() == static_cast<std::size_t>(height) * width, "smooth: mask size does not match H*W");
  if (k == 1) return {mask.begin(), mask.end()};
  // summed-area table with a zero first row and column
  const std::size_t W1 = static_cast<std::size_t>(width) + 1;
  std::vector<double> sat((static_cast<std::size_t>(height) + 1) * W1, 0.0);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      sat[(r + 1) * W1 + c + 1] = mask[static_cast<std::size_t>(r) * width + c] + sat[r * W1 + c + 1] +
                                  sat[(r + 1) * W1 + c] - sat[r * W1 + c];
  const int lo = k / 2, hi = (k + 1) / 2 - 1;
  std::vector<double> out(mask.size());
  const double inv = 1.0 / (static_cast<double>(k) * k);
  for (int r = 0; r < height; ++r) {
    const std::size_t r0 = static_cast<std::size_t>(std::max(0, r - lo));
    const std::size_t r1 = static_cast<std::size_t>(std::min(height, r + hi + 1));
    for (int c = 0; c < width; ++c) {
      const std::size_t c0 = static_cast<std::size_t>(std::max(0, c - lo));
      const std::size_t c1 = static_cast<std::size_t>(std::min(width, c + hi + 1));
      const double s = sat[r1 * W1 + c1] - sat[r0 * W1 + c1] - sat[r1 * W1 + c0] + sat[r0 * W1 + c0];
      out[static_cast<std::size_t>(r) * width + c] = s * inv;
    }
  }
  return out;
}

struct SegmentOptions {
  double iou_thresh = 0.8;
  int smooth_k = 10;
  double temperature = kRelevanceTemperature;
};

/// Mask probabilities for a rendered view with pixels below the foreground
/// opacity zeroed. n_k x H*W.
inline std::vector<double> foreground_mask_probs(const RenderedView& view, const Tokens& tokens) {
  require(view.d_m == tokens.d_m, "inference: rendered feature dimension does not match tokens");
  std::vector<double> probs = mask_probabilities(mask_logits(view.feature, view.height, view.width, tokens));
  const std::size_t npix = view.pixels();
  for (int i = 0; i < tokens.n_k; ++i)
    for (std::size_t p = 0; p < npix; ++p)
      if (view.accum_opacity[p] < kForegroundOpacity) probs[i * npix + p] = 0.0;
  return probs;
}

/// label(u) = argmax_c sum_{kept i} p[i, c] * smooth(M_i)(u).
inline SegmentationMap segment(const RenderedView& view, const Tokens& tokens, const TextEmbeddingSet& texts,
                               const SegmentOptions& opts = {}) {
  texts.validate();
  require(texts.d_s == tokens.d_s, "segment: text embedding dimension does not match tokens");
  const int C = texts.count();
  const int nk = tokens.n_k;
  const std::size_t npix = view.pixels();
  SegmentationMap out;
  out.height = view.height;
  out.width = view.width;
  out.labels.assign(npix, -1);
  out.scores.assign(npix, 0.0);

  const std::vector<double> probs = foreground_mask_probs(view, tokens);
  const std::vector<double> p = relevance(tokens.semantic, nk, texts, opts.temperature);
  std::vector<double> keep(static_cast<std::size_t>(nk), 0.0);
  for (int i = 0; i < nk; ++i)
    for (int c = 0; c < C; ++c) keep[i] = std::max(keep[i], p[static_cast<std::size_t>(i) * C + c]);
  const std::vector<int> kept = nms(probs, npix, keep, opts.iou_thresh);
  out.no_masks_kept = kept.empty();

  std::vector<double> votes(npix * C, 0.0);
  for (int i : kept) {
    const std::vector<double> m =
        smooth(std::span<const double>(probs).subspan(static_cast<std::size_t>(i) * npix, npix), view.height,
               view.width, opts.smooth_k);
    for (int c = 0; c < C; ++c) {
      const double w = p[static_cast<std::size_t>(i) * C + c];
      if (w == 0.0) continue;
      for (std::size_t u = 0; u < npix; ++u) votes[u * C + c] += w * m[u];
    }
  }
  for (std::size_t u = 0; u < npix; ++u) {
    if (view.accum_opacity[u] < kForegroundOpacity) continue;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (votes[u * C + c] > votes[u * C + best]) best = c;
    const double s = votes[u * C + best];
    if (s < 1e-6) continue;
    out.labels[u] = best;
    out.scores[u] = s;
  }
  return out;
}

/// min over canonicals c of exp(s.q) / (exp(s.q) + exp(s.c)); 0 for a zero token.
inline double lerf_relevance(std::span<const double> token, std::span<const double> query,
                             std::span<const double> canonicals) {
  const std::size_t d = query.size();
  require(token.size() == d && d > 0 && canonicals.size() % d == 0 && !canonicals.empty(),
          "lerf_relevance: dimension mismatch");
  if (detail::is_zero_row(token)) return 0.0;
  const double sq = detail::dot(token, query);
  double best = 1.0;
  for (std::size_t k = 0; k < canonicals.size() / d; ++k) {
    const double sc = detail::dot(token, canonicals.subspan(k * d, d));
    // exp(a)/(exp(a)+exp(b)) = sigmoid(a - b)
    best = std::min(best, sigmoid(sq - sc));
  }
  return best;
}

struct QueryOptions {
  double rel_thresh = 0.9;
  double act_thresh = 0.5;
  double min_relevance = 0.55;
  int smooth_k = 10;
};

struct QueryResult {
  std::vector<std::uint8_t> mask;  // H*W in {0,1}
  std::vector<double> token_relevance;
  std::vector<int> survivors;
};

/// Open-vocabulary object query over one rendered view. A token survives if
/// its min-max normalised relevance reaches rel_thresh, its raw relevance
/// reaches min_relevance and its peak probability reaches act_thresh. The
/// survivors' probabilities are unioned by max, binarised, smoothed and
/// binarised again. No survivors gives an all-zero mask.
inline QueryResult query_object(const RenderedView& view, const Tokens& tokens, std::span<const double> query,
                                std::span<const double> canonicals, const QueryOptions& opts = {}) {
  require(query.size() == static_cast<std::size_t>(tokens.d_s), "query: embedding dimension does not match tokens");
  const int nk = tokens.n_k;
  const std::size_t npix = view.pixels();
  QueryResult res;
  res.mask.assign(npix, 0);
  res.token_relevance.resize(static_cast<std::size_t>(nk));
  const std::span<const double> sem(tokens.semantic);
  for (int i = 0; i < nk; ++i)
    res.token_relevance[i] = lerf_relevance(sem.subspan(static_cast<std::size_t>(i) * tokens.d_s, tokens.d_s), query,
                                            canonicals);
  const auto [mn, mx] = std::minmax_element(res.token_relevance.begin(), res.token_relevance.end());
  const double lo = *mn, range = *mx - *mn;

  const std::vector<double> probs = foreground_mask_probs(view, tokens);
  std::vector<double> uni(npix, 0.0);
  for (int i = 0; i < nk; ++i) {
    const double r = res.token_relevance[i];
    const double norm = range > 0.0 ? (r - lo) / range : 1.0;
    if (norm < opts.rel_thresh || r < opts.min_relevance) continue;
    const double* pi = &probs[static_cast<std::size_t>(i) * npix];
    if (*std::max_element(pi, pi + npix) < opts.act_thresh) continue;
    res.survivors.push_back(i);
    for (std::size_t u = 0; u < npix; ++u) uni[u] = std::max(uni[u], pi[u]);
  }
  if (res.survivors.empty()) return res;
  for (double& u : uni) u = u > 0.5 ? 1.0 : 0.0;
  const std::vector<double> sm = smooth(uni, view.height, view.width, opts.smooth_k);
  for (std::size_t u = 0; u < npix; ++u) res.mask[u] = sm[u] >= 0.5 ? 1 : 0;
  return res;
}

}  // namespace maskfield
