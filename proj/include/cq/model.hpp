#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cq/baseline.hpp"
#include "cq/error.hpp"
#include "cq/rng.hpp"
#include "cq/types.hpp"

namespace cq {

/// Document-independent embeddings, one row per vocabulary entry.
struct DocIndepTable {
  Matrix rows;  // V x D

  std::size_t vocab_size() const { return rows.rows; }
  std::size_t dim() const { return rows.cols; }

  std::span<const double> lookup(TokenId id) const {
    if (id >= rows.rows)
      fail(ErrorCode::UnknownToken,
           "token id " + std::to_string(id) + " >= vocab size " + std::to_string(rows.rows));
    return rows.row(id);
  }
};

/// Trainable contextual quantizer.
///
///   encoder:     h   = tanh(w0 [E(t); E(t_bar)] + b0)           (MK/2)
///                a^m = softplus(w1^m h + b1^m)                  (K per book)
///                p^m = softmax((log a^m + eps) / tau)
///                s_m = argmax_j p^m_j
///   decoder:     delta_hat = concat / sum of codewords c^m_{s_m}
///   composition: E_hat(t) = tanh(w2 [delta_hat; E(t_bar)] + b2)
///
/// w1 stacks the M per-book K x (MK/2) blocks vertically. With use_position
/// a sinusoidal position feature is appended to the encoder input and w0
/// is (MK/2) x 3D instead of (MK/2) x 2D.
struct CQParams {
  QuantizerSpec spec;
  bool use_position = false;
  Matrix w0;
  Vector b0;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  CodebookSet codebooks;

  std::size_t hidden() const { return spec.M * spec.K / 2; }
  std::size_t encoder_input() const { return (use_position ? 3 : 2) * spec.D; }

  bool operator==(const CQParams&) const = default;
};

/// Gradients and optimizer moments share the parameter layout.
using Gradients = CQParams;

/// Visits every parameter tensor in the canonical order used by the model
/// file format: w0, b0, w1, b1, w2, b2, then codebooks 0..M-1.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::span(p.w0.data), "w0");
  fn(std::span(p.b0), "b0");
  fn(std::span(p.w1.data), "w1");
  fn(std::span(p.b1), "b1");
  fn(std::span(p.w2.data), "w2");
  fn(std::span(p.b2), "b2");
  for (auto& book : p.codebooks.books) fn(std::span(book.data), "codebook");
}

inline CQParams zero_params(const QuantizerSpec& spec, bool use_position = false) {
  require((spec.M * spec.K) % 2 == 0, ErrorCode::BadParam, "M*K must be even");
  CQParams p;
  p.spec = spec;
  p.use_position = use_position;
  const std::size_t hid = spec.M * spec.K / 2;
  p.w0 = Matrix(hid, p.encoder_input());
  p.b0 = Vector(hid, 0.0);
  p.w1 = Matrix(spec.M * spec.K, hid);
  p.b1 = Vector(spec.M * spec.K, 0.0);
  p.w2 = Matrix(spec.D, 2 * spec.D);
  p.b2 = Vector(spec.D, 0.0);
  p.codebooks = CodebookSet(spec);
  return p;
}

inline CQParams zeros_like(const CQParams& p) { return zero_params(p.spec, p.use_position); }

/// Weights drawn from U(-r, r), r = sqrt(6 / (fan_in + fan_out)), biases 0.
inline CQParams init_params(const QuantizerSpec& spec, std::uint64_t seed,
                            bool use_position = false) {
  CQParams p = zero_params(spec, use_position);
  std::uint64_t stream = 0;
  auto fill = [&](std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
    SplitMix64 rng = substream(seed, stream++);
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-r, r);
  };
  fill(p.w0.data, p.w0.cols, p.w0.rows);
  fill(p.w1.data, p.w1.cols, spec.K);
  fill(p.w2.data, p.w2.cols, p.w2.rows);
  for (auto& book : p.codebooks.books) fill(book.data, book.rows, book.cols);
  return p;
}

inline void round_to_binary32(CQParams& p) {
  for_each_tensor(p, [](std::span<double> t, const char*) { round_to_binary32(t); });
}

struct GumbelConfig {
  double tau = 1.0;
  std::uint64_t seed = 0;
  /// Hard: the code is the argmax; soft: the p-weighted codeword mixture is
  /// used downstream (training).
  bool hard = true;
  /// Inject Gumbel noise into the logits. Off for offline encoding.
  bool noise = false;
};

inline GumbelConfig inference_gumbel() { return {}; }

/// Standard Gumbel sample from a uniform draw; u is clamped away from 0/1.
inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, 1e-10, 1.0 - 1e-10);
  return -std::log(-std::log(u));
}

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(softplus(x)) and its derivative, stable for very negative x where
/// softplus(x) ~ exp(x).
inline double log_softplus(double x) { return x < -30.0 ? x : std::log(softplus(x)); }
inline double log_softplus_grad(double x) { return x < -30.0 ? 1.0 : sigmoid(x) / softplus(x); }

/// Sinusoidal position feature of width D.
inline Vector position_feature(std::size_t position, std::size_t D) {
  Vector pe(D);
  for (std::size_t i = 0; i < D; ++i) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(D));
    const double angle = static_cast<double>(position) * freq;
    pe[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return pe;
}

struct EncoderTrace {
  Vector h;
  Matrix a;  // M x K
  Matrix p;  // M x K
  Code code;
};

namespace detail {

/// Everything the backward pass needs from one encoder evaluation.
struct EncoderCache {
  Vector x;
  Vector h;
  Vector z1;
  Vector a;
  Vector p;
  Code code;
};

inline void matvec_add(const Matrix& w, std::span<const double> x, std::span<const double> b,
                       std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) out[r] = b[r] + dot(w.row(r), x);
}

inline std::uint32_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return static_cast<std::uint32_t>(best);
}

inline EncoderCache encoder_cache(const CQParams& params, std::span<const double> e_t,
                                  std::span<const double> e_bar, const GumbelConfig& g,
                                  std::uint64_t stream, std::size_t position) {
  const auto& spec = params.spec;
  check_dim(e_t.size(), spec.D, "encoder E(t)");
  check_dim(e_bar.size(), spec.D, "encoder E(t_bar)");
  require(g.tau > 0.0, ErrorCode::BadParam, "Gumbel temperature must be positive");
  EncoderCache c;
  c.x.reserve(params.encoder_input());
  c.x.insert(c.x.end(), e_t.begin(), e_t.end());
  c.x.insert(c.x.end(), e_bar.begin(), e_bar.end());
  if (params.use_position) {
    const Vector pe = position_feature(position, spec.D);
    c.x.insert(c.x.end(), pe.begin(), pe.end());
  }

  const std::size_t hid = params.hidden();
  c.h.assign(hid, 0.0);
  matvec_add(params.w0, c.x, params.b0, c.h);
  for (double& v : c.h) v = std::tanh(v);

  const std::size_t MK = spec.M * spec.K;
  c.z1.assign(MK, 0.0);
  matvec_add(params.w1, c.h, params.b1, c.z1);
  c.a.resize(MK);
  for (std::size_t i = 0; i < MK; ++i) c.a[i] = softplus(c.z1[i]);

  Vector logits(MK);
  for (std::size_t i = 0; i < MK; ++i) logits[i] = log_softplus(c.z1[i]);
  if (g.noise) {
    SplitMix64 rng = substream(g.seed, stream);
    for (double& l : logits) l += gumbel_from_uniform(rng.uniform());
  }

  c.p.resize(MK);
  c.code.resize(spec.M);
  for (std::size_t m = 0; m < spec.M; ++m) {
    const std::span<const double> lm(logits.data() + m * spec.K, spec.K);
    const std::span<double> pm(c.p.data() + m * spec.K, spec.K);
    const double mx = *std::max_element(lm.begin(), lm.end());
    double z = 0.0;
    for (std::size_t j = 0; j < spec.K; ++j) {
      pm[j] = std::exp((lm[j] - mx) / g.tau);
      z += pm[j];
    }
    for (double& v : pm) v /= z;
    c.code[m] = argmax_lowest(pm);
  }
  check_finite(c.h, "encoder hidden layer");
  check_finite(c.a, "encoder softplus layer");
  check_finite(c.p, "encoder distribution");
  return c;
}

}  // namespace detail

/// Runs the encoder for one token. `stream` selects the noise substream
/// (callers pass a token or step index) and `position` feeds the optional
/// position feature.
inline EncoderTrace encoder_forward(const CQParams& params, std::span<const double> e_t,
                                    std::span<const double> e_bar, const GumbelConfig& g,
                                    std::uint64_t stream = 0, std::size_t position = 0) {
  auto c = detail::encoder_cache(params, e_t, e_bar, g, stream, position);
  EncoderTrace t;
  t.h = std::move(c.h);
  t.a = Matrix(params.spec.M, params.spec.K);
  t.a.data = std::move(c.a);
  t.p = Matrix(params.spec.M, params.spec.K);
  t.p.data = std::move(c.p);
  t.code = std::move(c.code);
  return t;
}

inline Vector decode_delta(const CQParams& params, const Code& code) {
  return decode_codes(params.codebooks, code);
}

/// Training-time relaxation: each book contributes sum_j p^m_j c^m_j.
inline Vector soft_decode_delta(const CQParams& params, const Matrix& p) {
  const auto& spec = params.spec;
  require(p.rows == spec.M && p.cols == spec.K, ErrorCode::BadDistribution,
          "distribution matrix must be M x K");
  for (std::size_t m = 0; m < spec.M; ++m) {
    double s = 0.0;
    for (double v : p.row(m)) {
      if (v < 0.0 || !std::isfinite(v))
        fail(ErrorCode::BadDistribution,
             "negative or non-finite probability in book " + std::to_string(m));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      fail(ErrorCode::BadDistribution,
           "book " + std::to_string(m) + " probabilities sum to " + std::to_string(s));
  }
  Vector out(spec.D, 0.0);
  for (std::size_t m = 0; m < spec.M; ++m) {
    const auto& book = params.codebooks.books[m];
    const std::size_t offset = spec.mode == QuantizerMode::Product ? m * spec.h : 0;
    for (std::size_t j = 0; j < spec.K; ++j) {
      const double w = p(m, j);
      if (w == 0.0) continue;
      const auto c = book.row(j);
      for (std::size_t k = 0; k < spec.h; ++k) out[offset + k] += w * c[k];
    }
  }
  return out;
}

inline Vector compose(const CQParams& params, std::span<const double> delta_hat,
                      std::span<const double> e_bar) {
  const std::size_t D = params.spec.D;
  check_dim(delta_hat.size(), D, "compose delta");
  check_dim(e_bar.size(), D, "compose E(t_bar)");
  Vector out(D);
  for (std::size_t r = 0; r < D; ++r) {
    const auto w = params.w2.row(r);
    double z = params.b2[r];
    for (std::size_t k = 0; k < D; ++k) z += w[k] * delta_hat[k] + w[D + k] * e_bar[k];
    out[r] = std::tanh(z);
  }
  check_finite(out, "composed embedding");
  return out;
}

/// Offline encoding of a document: deterministic hard codes, one per token,
/// in token order.
inline DocumentCodes quantize_document(const CQParams& params, const DocumentTokens& doc,
                                       const DocIndepTable& table,
                                       const GumbelConfig& g = inference_gumbel()) {
  require(g.hard && !g.noise, ErrorCode::BadParam,
          "offline quantization requires hard mode without noise");
  require(doc.embeddings.rows == doc.token_ids.size(), ErrorCode::DimMismatch,
          "token id count does not match embedding rows");
  DocumentCodes out;
  out.doc_id = doc.doc_id;
  out.token_ids = doc.token_ids;
  out.codes.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto e_bar = table.lookup(doc.token_ids[i]);
    out.codes.push_back(encoder_forward(params, doc.embeddings.row(i), e_bar, g, i, i).code);
  }
  return out;
}

inline Matrix reconstruct_document(const CQParams& params, const DocumentCodes& codes,
                                   const DocIndepTable& table) {
  require(codes.codes.size() == codes.token_ids.size(), ErrorCode::BadCode,
          "code count does not match token count");
  Matrix out(codes.codes.size(), params.spec.D);
  for (std::size_t i = 0; i < codes.codes.size(); ++i) {
    const auto e_bar = table.lookup(codes.token_ids[i]);
    const Vector y = compose(params, decode_delta(params, codes.codes[i]), e_bar);
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace cq
