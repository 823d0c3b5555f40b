#pragma once

#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "maskfield/common.hpp"

namespace maskfield {

/// Two-layer perceptron with ReLU hidden units. All weights live in one
/// flat vector: W1 (hidden x in), b1, W2 (out x hidden), b2.
struct Mlp {
  int in = 1;
  int hidden = 1;
  int out = 1;
  std::vector<double> params;

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return static_cast<std::size_t>(hidden) * in; }
  std::size_t w2_offset() const { return b1_offset() + hidden; }
  std::size_t b2_offset() const { return w2_offset() + static_cast<std::size_t>(out) * hidden; }
  std::size_t size() const { return b2_offset() + out; }

  bool operator==(const Mlp&) const = default;
};

inline Mlp make_mlp(int in, int hidden, int out, std::mt19937_64& rng) {
  Mlp m{in, hidden, out, {}};
  m.params.assign(m.size(), 0.0);
  std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / in));
  std::normal_distribution<double> n2(0.0, std::sqrt(2.0 / hidden));
  for (std::size_t i = m.w1_offset(); i < m.b1_offset(); ++i) m.params[i] = n1(rng);
  for (std::size_t i = m.w2_offset(); i < m.b2_offset(); ++i) m.params[i] = n2(rng);
  return m;
}

struct TokenBank {
  int n_k = 64;
  int num_freqs = 6;
  int d_m = 16;
  int d_s = 32;
  Mlp query_mlp;
  Mlp semantic_mlp;

  void validate() const {
    require(n_k >= 1 && num_freqs >= 1 && d_m >= 1 && d_s >= 1, "token bank: dimensions must be positive");
    require(query_mlp.in == 2 * num_freqs && semantic_mlp.in == 2 * num_freqs, "token bank: MLP input width");
    require(query_mlp.out == d_m && semantic_mlp.out == d_s, "token bank: MLP output width");
    require(query_mlp.params.size() == query_mlp.size() && semantic_mlp.params.size() == semantic_mlp.size(),
            "token bank: MLP parameter count");
    require(all_finite(query_mlp.params) && all_finite(semantic_mlp.params), "token bank: non-finite weights");
  }

  bool operator==(const TokenBank&) const = default;
};

inline TokenBank make_token_bank(int n_k, int d_m, int d_s, std::uint64_t seed, int num_freqs = 6, int hidden = 64) {
  TokenBank b;
  b.n_k = n_k;
  b.num_freqs = num_freqs;
  b.d_m = d_m;
  b.d_s = d_s;
  std::mt19937_64 rng(seed);
  b.query_mlp = make_mlp(2 * num_freqs, hidden, d_m, rng);
  b.semantic_mlp = make_mlp(2 * num_freqs, hidden, d_s, rng);
  b.validate();
  return b;
}

/// [sin(2 pi x 2^0), cos(2 pi x 2^0), ..., sin(2 pi x 2^(F-1)), cos(...)]
/// with x = id / n_k.
inline std::vector<double> fourier_encode(int id, int n_k, int num_freqs) {
  require(n_k >= 1 && num_freqs >= 1, "fourier_encode: n_k and num_freqs must be positive");
  require(id >= 0 && id < n_k, "fourier_encode: id " + std::to_string(id) + " out of range [0, " +
                                   std::to_string(n_k) + ")");
  const double x = static_cast<double>(id) / n_k;
  std::vector<double> out(2 * static_cast<std::size_t>(num_freqs));
  for (int f = 0; f < num_freqs; ++f) {
    const double a = 2.0 * std::numbers::pi * x * std::ldexp(1.0, f);
    out[2 * f] = std::sin(a);
    out[2 * f + 1] = std::cos(a);
  }
  return out;
}

namespace detail {

inline void mlp_forward(const Mlp& m, std::span<const double> x, std::span<double> hidden_pre, std::span<double> y) {
  const double* w1 = &m.params[m.w1_offset()];
  const double* b1 = &m.params[m.b1_offset()];
  const double* w2 = &m.params[m.w2_offset()];
  const double* b2 = &m.params[m.b2_offset()];
  for (int h = 0; h < m.hidden; ++h) {
    double a = b1[h];
    for (int i = 0; i < m.in; ++i) a += w1[h * m.in + i] * x[i];
    hidden_pre[h] = a;
  }
  for (int o = 0; o < m.out; ++o) {
    double a = b2[o];
    for (int h = 0; h < m.hidden; ++h) a += w2[o * m.hidden + h] * std::max(0.0, hidden_pre[h]);
    y[o] = a;
  }
}

inline void mlp_backward(const Mlp& m, std::span<const double> x, std::span<const double> hidden_pre,
                         std::span<const double> dy, std::span<double> grad) {
  const double* w2 = &m.params[m.w2_offset()];
  double* gw1 = &grad[m.w1_offset()];
  double* gb1 = &grad[m.b1_offset()];
  double* gw2 = &grad[m.w2_offset()];
  double* gb2 = &grad[m.b2_offset()];
  for (int o = 0; o < m.out; ++o) {
    gb2[o] += dy[o];
    for (int h = 0; h < m.hidden; ++h) gw2[o * m.hidden + h] += dy[o] * std::max(0.0, hidden_pre[h]);
  }
  for (int h = 0; h < m.hidden; ++h) {
    if (hidden_pre[h] <= 0.0) continue;
    double dh = 0.0;
    for (int o = 0; o < m.out; ++o) dh += w2[o * m.hidden + h] * dy[o];
    gb1[h] += dh;
    for (int i = 0; i < m.in; ++i) gw1[h * m.in + i] += dh * x[i];
  }
}

}  // namespace detail

/// Query tokens Q (n_k x d_m) and unit semantic tokens S (n_k x d_s), with
/// the intermediates needed by backprop_tokens.
struct Tokens {
  int n_k = 0;
  int d_m = 0;
  int d_s = 0;
  std::vector<double> query;     // n_k*d_m
  std::vector<double> semantic;  // n_k*d_s, rows unit or zero
  std::vector<double> semantic_raw;
  std::vector<double> query_hidden, semantic_hidden;
  std::vector<bool> degenerate;  // semantic row was the zero vector

  std::span<const double> q(int i) const { return {&query[static_cast<std::size_t>(i) * d_m], static_cast<std::size_t>(d_m)}; }
  std::span<const double> s(int i) const { return {&semantic[static_cast<std::size_t>(i) * d_s], static_cast<std::size_t>(d_s)}; }
};

/// Tokens depend on the token id only.
inline Tokens compute_tokens(const TokenBank& bank) {
  Tokens t;
  t.n_k = bank.n_k;
  t.d_m = bank.d_m;
  t.d_s = bank.d_s;
  const std::size_t nk = static_cast<std::size_t>(bank.n_k);
  t.query.assign(nk * bank.d_m, 0.0);
  t.semantic.assign(nk * bank.d_s, 0.0);
  t.semantic_raw.assign(nk * bank.d_s, 0.0);
  t.query_hidden.assign(nk * bank.query_mlp.hidden, 0.0);
  t.semantic_hidden.assign(nk * bank.semantic_mlp.hidden, 0.0);
  t.degenerate.assign(nk, false);
  for (int i = 0; i < bank.n_k; ++i) {
    const auto x = fourier_encode(i, bank.n_k, bank.num_freqs);
    detail::mlp_forward(bank.query_mlp, x, {&t.query_hidden[i * bank.query_mlp.hidden], static_cast<std::size_t>(bank.query_mlp.hidden)},
                        {&t.query[i * bank.d_m], static_cast<std::size_t>(bank.d_m)});
    double* raw = &t.semantic_raw[i * bank.d_s];
    detail::mlp_forward(bank.semantic_mlp, x,
                        {&t.semantic_hidden[i * bank.semantic_mlp.hidden], static_cast<std::size_t>(bank.semantic_mlp.hidden)},
                        {raw, static_cast<std::size_t>(bank.d_s)});
    double norm = 0.0;
    for (int k = 0; k < bank.d_s; ++k) norm += raw[k] * raw[k];
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      t.degenerate[i] = true;
      continue;
    }
    for (int k = 0; k < bank.d_s; ++k) t.semantic[i * bank.d_s + k] = raw[k] / norm;
  }
  return t;
}

/// Pre-sigmoid mask logits, n_k x H x W.
struct MaskLogits {
  int n_k = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

/// values[i, p] = dot(feature[p], Q_i). `feature` is H*W*d_m row-major.
inline MaskLogits mask_logits(std::span<const double> feature, int height, int width, int d_m,
                              std::span<const double> query, int n_k) {
  const std::size_t npix = static_cast<std::size_t>(height) * width;
  require(feature.size() == npix * d_m, "mask_logits: feature map size does not match H*W*d_m");
  require(query.size() == static_cast<std::size_t>(n_k) * d_m, "mask_logits: query dimension does not match d_m");
  MaskLogits out{n_k, height, width, std::vector<double>(static_cast<std::size_t>(n_k) * npix)};
  for (std::size_t p = 0; p < npix; ++p) {
    const double* f = &feature[p * d_m];
    for (int i = 0; i < n_k; ++i) {
      const double* q = &query[static_cast<std::size_t>(i) * d_m];
      double a = 0.0;
      for (int c = 0; c < d_m; ++c) a += f[c] * q[c];
      out.values[i * npix + p] = a;
    }
  }
  return out;
}

inline MaskLogits mask_logits(std::span<const double> feature, int height, int width, const Tokens& tokens) {
  return mask_logits(feature, height, width, tokens.d_m, tokens.query, tokens.n_k);
}

inline std::vector<double> mask_probabilities(const MaskLogits& logits) {
  std::vector<double> p(logits.values.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(logits.values[i]);
  return p;
}

struct TokenGradients {
  std::vector<double> query_mlp;
  std::vector<double> semantic_mlp;
  std::vector<double> feature;  // H*W*d_m
};

/// Backward through logits = F . Q_i, both MLPs and the S normalization.
/// `logit_grad` is n_k*H*W, `semantic_grad` is n_k*d_s (w.r.t. the unit S).
inline TokenGradients backprop_tokens(const TokenBank& bank, const Tokens& tokens, std::span<const double> feature,
                                      int height, int width, std::span<const double> logit_grad,
                                      std::span<const double> semantic_grad) {
  const std::size_t npix = static_cast<std::size_t>(height) * width;
  const int nk = bank.n_k, dm = bank.d_m, ds = bank.d_s;
  require(feature.size() == npix * dm, "backprop_tokens: feature map size mismatch");
  require(logit_grad.size() == static_cast<std::size_t>(nk) * npix, "backprop_tokens: logit gradient size mismatch");
  require(semantic_grad.size() == static_cast<std::size_t>(nk) * ds, "backprop_tokens: semantic gradient size mismatch");
  require(tokens.n_k == nk && tokens.d_m == dm && tokens.d_s == ds, "backprop_tokens: tokens do not match bank");
  TokenGradients g;
  g.query_mlp.assign(bank.query_mlp.size(), 0.0);
  g.semantic_mlp.assign(bank.semantic_mlp.size(), 0.0);
  g.feature.assign(npix * dm, 0.0);
  std::vector<double> dq(static_cast<std::size_t>(nk) * dm, 0.0);
  for (std::size_t p = 0; p < npix; ++p) {
    const double* f = &feature[p * dm];
    double* gf = &g.feature[p * dm];
    for (int i = 0; i < nk; ++i) {
      const double dz = logit_grad[i * npix + p];
      if (dz == 0.0) continue;
      const double* q = &tokens.query[static_cast<std::size_t>(i) * dm];
      double* dqi = &dq[static_cast<std::size_t>(i) * dm];
      for (int c = 0; c < dm; ++c) {
        gf[c] += dz * q[c];
        dqi[c] += dz * f[c];
      }
    }
  }
  std::vector<double> dy(static_cast<std::size_t>(ds));
  for (int i = 0; i < nk; ++i) {
    const auto x = fourier_encode(i, nk, bank.num_freqs);
    detail::mlp_backward(bank.query_mlp, x,
                         {&tokens.query_hidden[i * bank.query_mlp.hidden], static_cast<std::size_t>(bank.query_mlp.hidden)},
                         {&dq[static_cast<std::size_t>(i) * dm], static_cast<std::size_t>(dm)}, g.query_mlp);
    if (tokens.degenerate[i]) continue;
    const double* raw = &tokens.semantic_raw[static_cast<std::size_t>(i) * ds];
    const double* s = &tokens.semantic[static_cast<std::size_t>(i) * ds];
    const double* gs = &semantic_grad[static_cast<std::size_t>(i) * ds];
    double norm = 0.0, sg = 0.0;
    for (int k = 0; k < ds; ++k) {
      norm += raw[k] * raw[k];
      sg += s[k] * gs[k];
    }
    norm = std::sqrt(norm);
    for (int k = 0; k < ds; ++k) dy[k] = (gs[k] - s[k] * sg) / norm;
    detail::mlp_backward(bank.semantic_mlp, x,
                         {&tokens.semantic_hidden[i * bank.semantic_mlp.hidden], static_cast<std::size_t>(bank.semantic_mlp.hidden)},
                         dy, g.semantic_mlp);
  }
  return g;
}

}  // namespace maskfield
