#pragma once

#include <optional>
#include <span>
#include <vector>

#include "maskfield/matching.hpp"

namespace maskfield {

/// Supervision for one view: J masks in [0,1] (J x H*W, row-major) and one
/// unit embedding per mask (J x d_s).
struct MaskSet {
  int view_id = 0;
  int height = 0;
  int width = 0;
  int d_s = 0;
  std::vector<double> masks;
  std::vector<double> embeddings;

  int count() const { return d_s > 0 ? static_cast<int>(embeddings.size() / d_s) : 0; }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::span<const double> mask(int j) const { return {&masks[j * pixels()], pixels()}; }
  std::span<const double> embedding(int j) const {
    return {&embeddings[static_cast<std::size_t>(j) * d_s], static_cast<std::size_t>(d_s)};
  }

  void validate() const {
    const std::string where = "mask set for view " + std::to_string(view_id);
    require(height > 0 && width > 0 && d_s > 0, where + ": bad dimensions");
    require(count() >= 1, where + ": needs at least one mask");
    require(masks.size() == static_cast<std::size_t>(count()) * pixels(), where + ": mask/embedding count mismatch");
    for (double v : masks) require(v >= 0.0 && v <= 1.0, where + ": mask values must lie in [0, 1]");
    for (int j = 0; j < count(); ++j) {
      double n = 0.0;
      for (double e : embedding(j)) n += e * e;
      require(std::abs(std::sqrt(n) - 1.0) < 1e-6, where + ": embedding " + std::to_string(j) + " is not unit length");
    }
  }
};

struct LossHyper {
  double lambda_dice = 1.0;
  double gamma = 2.0;
  double alpha_focal = 0.25;
  double w_extra = 0.1;
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

namespace detail {

// Per-pixel focal terms for a positive and a negative target.
struct FocalTerms {
  double pos, neg, dpos, dneg;
};

// x^e with a multiply loop for small integer exponents (the common gamma = 2).
inline double fast_pow(double x, double e) {
  if (e == 0.0) return 1.0;
  if (e == 1.0) return x;
  if (e == 2.0) return x * x;
  if (e == 3.0) return x * x * x;
  return std::pow(x, e);
}

inline FocalTerms focal_terms(double p_raw, double gamma, double alpha) {
  const bool clamped = p_raw < kProbClamp || p_raw > 1.0 - kProbClamp;
  const double p = std::clamp(p_raw, kProbClamp, 1.0 - kProbClamp);
  const double q = 1.0 - p;
  const double lp = std::log(p), lq = std::log(q);
  const double qg = fast_pow(q, gamma), pg = fast_pow(p, gamma);
  FocalTerms t;
  t.pos = -alpha * qg * lp;
  t.neg = -(1.0 - alpha) * pg * lq;
  if (clamped) {
    t.dpos = t.dneg = 0.0;
  } else {
    const double qg1 = gamma == 0.0 ? 0.0 : gamma * fast_pow(q, gamma - 1.0);
    const double pg1 = gamma == 0.0 ? 0.0 : gamma * fast_pow(p, gamma - 1.0);
    t.dpos = alpha * (qg1 * lp - qg / p);
    t.dneg = -(1.0 - alpha) * (pg1 * lq - pg / q);
  }
  return t;
}

inline void check_same_size(std::span<const double> a, std::span<const double> b, const char* who) {
  require(a.size() == b.size() && !a.empty(), std::string(who) + ": prediction and target shapes differ");
}

}  // namespace detail

/// Mean over pixels of -alpha_t (1 - p_t)^gamma log(p_t). If `grad` is given,
/// adds d(loss)/d(pred) scaled by `scale`.
inline double focal_loss(std::span<const double> pred, std::span<const double> target, double gamma, double alpha,
                         std::span<double> grad = {}, double scale = 1.0) {
  detail::check_same_size(pred, target, "focal_loss");
  const double inv = 1.0 / static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto t = detail::focal_terms(pred[k], gamma, alpha);
    const double y = target[k];
    sum += y * t.pos + (1.0 - y) * t.neg;
    if (!grad.empty()) grad[k] += scale * inv * (y * t.dpos + (1.0 - y) * t.dneg);
  }
  return sum * inv;
}

/// Soft dice: 1 - (2 sum p t + 1) / (sum p + sum t + 1).
inline double dice_loss(std::span<const double> pred, std::span<const double> target, std::span<double> grad = {},
                        double scale = 1.0) {
  detail::check_same_size(pred, target, "dice_loss");
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    inter += pred[k] * target[k];
    sp += pred[k];
    st += target[k];
  }
  const double num = 2.0 * inter + kDiceSmooth;
  const double den = sp + st + kDiceSmooth;
  if (!grad.empty())
    for (std::size_t k = 0; k < pred.size(); ++k) grad[k] += scale * -(2.0 * target[k] * den - num) / (den * den);
  return 1.0 - num / den;
}

/// 1 - cos(s_pred, s_target). A zero s_pred is degenerate: loss 1, no gradient.
inline double cosine_loss(std::span<const double> s_pred, std::span<const double> s_target,
                          std::span<double> grad = {}, double scale = 1.0) {
  require(s_pred.size() == s_target.size(), "cosine_loss: dimension mismatch");
  double dot = 0.0, np = 0.0, nt = 0.0;
  for (std::size_t k = 0; k < s_pred.size(); ++k) {
    dot += s_pred[k] * s_target[k];
    np += s_pred[k] * s_pred[k];
    nt += s_target[k] * s_target[k];
  }
  if (np == 0.0 || nt == 0.0) return 1.0;
  np = std::sqrt(np);
  nt = std::sqrt(nt);
  const double cos = dot / (np * nt);
  if (!grad.empty())
    for (std::size_t k = 0; k < s_pred.size(); ++k)
      grad[k] += scale * -(s_target[k] / (np * nt) - cos * s_pred[k] / (np * np));
  return 1.0 - cos;
}

/// Sum over unmatched masks of ||M_i||^2 / (H*W).
inline double extra_loss(std::span<const double> pred_probs, std::size_t pixels, std::span<const int> unmatched,
                         std::span<double> grad = {}, double scale = 1.0) {
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(pixels);
  for (int i : unmatched) {
    require(i >= 0 && (static_cast<std::size_t>(i) + 1) * pixels <= pred_probs.size(), "extra_loss: index out of range");
    const double* p = &pred_probs[static_cast<std::size_t>(i) * pixels];
    double s = 0.0;
    for (std::size_t k = 0; k < pixels; ++k) s += p[k] * p[k];
    total += s * inv;
    if (!grad.empty())
      for (std::size_t k = 0; k < pixels; ++k) grad[i * pixels + k] += scale * 2.0 * p[k] * inv;
  }
  return total;
}

/// cost[i][j] = focal(M_i, M_j) + lambda dice(M_i, M_j) + cosine(S_i, S_j).
/// `pred_probs` is n_k x H*W, `semantic` is n_k x d_s.
inline CostMatrix pairwise_cost(std::span<const double> pred_probs, std::span<const double> semantic, int n_k,
                                const MaskSet& target, const LossHyper& hyper) {
  const int J = target.count();
  const std::size_t npix = target.pixels();
  require(J <= n_k, "pairwise_cost: view " + std::to_string(target.view_id) + " has " + std::to_string(J) +
                        " masks but only " + std::to_string(n_k) + " query tokens (raise n_k)");
  require(pred_probs.size() == static_cast<std::size_t>(n_k) * npix, "pairwise_cost: prediction size mismatch");
  require(semantic.size() == static_cast<std::size_t>(n_k) * target.d_s, "pairwise_cost: semantic token size mismatch");
  CostMatrix cost(n_k, J);
  std::vector<double> target_sum(static_cast<std::size_t>(J), 0.0);
  for (int j = 0; j < J; ++j)
    for (double v : target.mask(j)) target_sum[j] += v;
  std::vector<double> diff(npix);
  const double inv = 1.0 / static_cast<double>(npix);
  for (int i = 0; i < n_k; ++i) {
    const double* p = &pred_probs[static_cast<std::size_t>(i) * npix];
    double neg_sum = 0.0, psum = 0.0;
    for (std::size_t k = 0; k < npix; ++k) {
      const auto t = detail::focal_terms(p[k], hyper.gamma, hyper.alpha_focal);
      neg_sum += t.neg;
      diff[k] = t.pos - t.neg;
      psum += p[k];
    }
    for (int j = 0; j < J; ++j) {
      const auto m = target.mask(j);
      double lin = 0.0, inter = 0.0;
      for (std::size_t k = 0; k < npix; ++k) {
        lin += m[k] * diff[k];
        inter += m[k] * p[k];
      }
      const double focal = (neg_sum + lin) * inv;
      const double dice = 1.0 - (2.0 * inter + kDiceSmooth) / (psum + target_sum[j] + kDiceSmooth);
      const double cosl = cosine_loss({&semantic[static_cast<std::size_t>(i) * target.d_s], static_cast<std::size_t>(target.d_s)},
                                      target.embedding(j));
      cost(i, j) = focal + hyper.lambda_dice * dice + cosl;
    }
  }
  return cost;
}

struct LossBreakdown {
  double l_focal = 0.0;
  double l_dice = 0.0;
  double l_feature = 0.0;
  double l_mask = 0.0;
  double l_distill = 0.0;
  double l_extra = 0.0;
  double l_total = 0.0;
};

struct LossResult {
  LossBreakdown loss;
  MatchResult match;
  std::vector<double> grad_probs;     // n_k*H*W, filled when requested
  std::vector<double> grad_semantic;  // n_k*d_s
};

/// Matches predictions to targets, then combines mean per-pair focal, dice
/// and cosine terms with the unmatched penalty. When `fixed_match` is given
/// it is used instead of re-solving (gradients treat the match as constant).
inline LossResult total_loss(std::span<const double> pred_probs, std::span<const double> semantic, int n_k,
                             const MaskSet& target, const LossHyper& hyper, bool with_grad = true,
                             const std::optional<MatchResult>& fixed_match = std::nullopt) {
  const std::size_t npix = target.pixels();
  LossResult r;
  r.match = fixed_match ? *fixed_match : hungarian_match(pairwise_cost(pred_probs, semantic, n_k, target, hyper));
  if (with_grad) {
    r.grad_probs.assign(pred_probs.size(), 0.0);
    r.grad_semantic.assign(semantic.size(), 0.0);
  }
  const double pair_scale = 1.0 / static_cast<double>(r.match.pairs.size());
  for (const auto& [i, j] : r.match.pairs) {
    const std::span<const double> p{&pred_probs[i * npix], npix};
    const std::span<const double> s{&semantic[static_cast<std::size_t>(i) * target.d_s], static_cast<std::size_t>(target.d_s)};
    std::span<double> gp, gs;
    if (with_grad) {
      gp = {&r.grad_probs[i * npix], npix};
      gs = {&r.grad_semantic[static_cast<std::size_t>(i) * target.d_s], static_cast<std::size_t>(target.d_s)};
    }
    r.loss.l_focal += focal_loss(p, target.mask(j), hyper.gamma, hyper.alpha_focal, gp, pair_scale);
    r.loss.l_dice += dice_loss(p, target.mask(j), gp, pair_scale * hyper.lambda_dice);
    r.loss.l_feature += cosine_loss(s, target.embedding(j), gs, pair_scale);
  }
  r.loss.l_focal *= pair_scale;
  r.loss.l_dice *= pair_scale;
  r.loss.l_feature *= pair_scale;
  r.loss.l_extra = extra_loss(pred_probs, npix, r.match.unmatched_preds,
                              with_grad ? std::span<double>(r.grad_probs) : std::span<double>{}, hyper.w_extra);
  r.loss.l_mask = r.loss.l_focal + hyper.lambda_dice * r.loss.l_dice;
  r.loss.l_distill = r.loss.l_mask + r.loss.l_feature;
  r.loss.l_total = r.loss.l_distill + hyper.w_extra * r.loss.l_extra;
  return r;
}

}  // namespace maskfield
