#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "maskfield/common.hpp"

namespace maskfield {

/// Per-class intersection / union counts; classes are the non-negative
/// labels. Summing counts over views before dividing gives dataset-level IoU.
struct IouCounts {
  std::map<int, std::uint64_t> inter, uni;

  void add(const IouCounts& o) {
    for (const auto& [c, n] : o.inter) inter[c] += n;
    for (const auto& [c, n] : o.uni) uni[c] += n;
  }
  // classes with empty union (absent from both maps) never appear
  std::map<int, double> per_class() const {
    std::map<int, double> out;
    for (const auto& [c, u] : uni)
      if (u > 0) out[c] = static_cast<double>(inter.count(c) ? inter.at(c) : 0) / static_cast<double>(u);
    return out;
  }
  double mean() const {
    const auto pc = per_class();
    if (pc.empty()) return 1.0;
    double s = 0.0;
    for (const auto& [c, v] : pc) s += v;
    return s / static_cast<double>(pc.size());
  }
};

namespace detail {
inline void check_same_shape(std::size_t a, std::size_t b, int height, int width) {
  require(a == b && a == static_cast<std::size_t>(height) * width, "metrics: label maps differ in shape");
}
}  // namespace detail

inline IouCounts iou_counts(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height,
                            int width) {
  detail::check_same_shape(pred.size(), gt.size(), height, width);
  IouCounts c;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    const int a = pred[u], b = gt[u];
    if (a >= 0) c.uni[a] += 1;
    if (b >= 0 && b != a) c.uni[b] += 1;
    if (a >= 0 && a == b) c.inter[a] += 1;
  }
  return c;
}

struct ClassIou {
  std::map<int, double> per_class;
  double mean = 0.0;
};

inline ClassIou miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height, int width) {
  const IouCounts c = iou_counts(pred, gt, height, width);
  return {c.per_class(), c.mean()};
}

/// Pixels of class `cls` lying within `d` (Chebyshev distance) of the
/// class's contour. A contour pixel is a class pixel with an 8-neighbour
/// inside the image that is not of the class.
inline std::vector<std::uint8_t> boundary_band(std::span<const std::int32_t> labels, int height, int width, int cls,
                                               int d) {
  const std::size_t n = labels.size();
  std::vector<std::uint8_t> edge(n, 0), band(n, 0);
  auto at = [&](int r, int c) { return labels[static_cast<std::size_t>(r) * width + c]; };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      if (at(r, c) != cls) continue;
      bool e = false;
      for (int dr = -1; dr <= 1 && !e; ++dr)
        for (int dc = -1; dc <= 1 && !e; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < height && cc >= 0 && cc < width && at(rr, cc) != cls) e = true;
        }
      edge[static_cast<std::size_t>(r) * width + c] = e;
    }
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      if (!edge[static_cast<std::size_t>(r) * width + c]) continue;
      for (int rr = std::max(0, r - d); rr <= std::min(height - 1, r + d); ++rr)
        for (int cc = std::max(0, c - d); cc <= std::min(width - 1, c + d); ++cc)
          if (at(rr, cc) == cls) band[static_cast<std::size_t>(rr) * width + cc] = 1;
    }
  return band;
}

inline IouCounts boundary_counts(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height,
                                 int width, int d = 2) {
  detail::check_same_shape(pred.size(), gt.size(), height, width);
  require(d >= 1, "boundary_iou: band width must be positive");
  std::vector<int> classes;
  for (auto v : {pred, gt})
    for (std::int32_t x : v)
      if (x >= 0 && std::find(classes.begin(), classes.end(), x) == classes.end()) classes.push_back(x);
  IouCounts c;
  for (int cls : classes) {
    const auto bp = boundary_band(pred, height, width, cls, d);
    const auto bg = boundary_band(gt, height, width, cls, d);
    std::uint64_t i = 0, u = 0;
    for (std::size_t k = 0; k < bp.size(); ++k) {
      i += bp[k] && bg[k];
      u += bp[k] || bg[k];
    }
    // a class whose masks have no contour at all (e.g. fills the image)
    // counts as a perfect match when present in both
    if (u == 0) {
      i = u = 1;
      if (std::find(pred.begin(), pred.end(), cls) == pred.end() || std::find(gt.begin(), gt.end(), cls) == gt.end())
        i = 0;
    }
    c.inter[cls] += i;
    c.uni[cls] += u;
  }
  return c;
}

inline ClassIou boundary_iou(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height,
                             int width, int d = 2) {
  const IouCounts c = boundary_counts(pred, gt, height, width, d);
  return {c.per_class(), c.mean()};
}

struct AccuracyCounts {
  std::uint64_t correct = 0;
  std::uint64_t labeled = 0;
  void add(const AccuracyCounts& o) {
    correct += o.correct;
    labeled += o.labeled;
  }
  bool all_background() const { return labeled == 0; }
  double value() const { return labeled == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(labeled); }
};

inline AccuracyCounts accuracy_counts(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height,
                                      int width) {
  detail::check_same_shape(pred.size(), gt.size(), height, width);
  AccuracyCounts a;
  for (std::size_t u = 0; u < gt.size(); ++u) {
    if (gt[u] < 0) continue;
    ++a.labeled;
    a.correct += pred[u] == gt[u];
  }
  return a;
}

struct AccuracyResult {
  double value = 1.0;
  bool gt_all_background = false;
};

/// Fraction of labelled GT pixels predicted correctly; 1 (flagged) when the
/// GT has no labelled pixel.
inline AccuracyResult accuracy(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height,
                               int width) {
  const AccuracyCounts a = accuracy_counts(pred, gt, height, width);
  return {a.value(), a.all_background()};
}

struct EvalReport {
  std::map<int, double> per_class_iou;
  std::map<int, double> per_class_biou;
  double miou = 1.0;
  double mbiou = 1.0;
  double acc = 1.0;
  int n_views = 0;
  bool gt_all_background = false;
};

/// Pools counts over views, so larger views weigh more.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(int boundary_d = 2) : d_(boundary_d) {}

  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int height, int width) {
    iou_.add(iou_counts(pred, gt, height, width));
    biou_.add(boundary_counts(pred, gt, height, width, d_));
    acc_.add(accuracy_counts(pred, gt, height, width));
    ++views_;
  }

  EvalReport report() const {
    EvalReport r;
    r.per_class_iou = iou_.per_class();
    r.per_class_biou = biou_.per_class();
    r.miou = iou_.mean();
    r.mbiou = biou_.mean();
    r.acc = acc_.value();
    r.gt_all_background = acc_.all_background();
    r.n_views = views_;
    return r;
  }

 private:
  int d_;
  IouCounts iou_, biou_;
  AccuracyCounts acc_;
  int views_ = 0;
};

}  // namespace maskfield
