#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cq/error.hpp"
#include "cq/late_interaction.hpp"
#include "cq/model.hpp"
#include "cq/rng.hpp"
#include "cq/types.hpp"

namespace cq {

enum class LossKind { MSE, PairwiseCE, MarginMSE };

inline std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::MSE:
      return "mse";
    case LossKind::PairwiseCE:
      return "pairwise-ce";
    case LossKind::MarginMSE:
      return "margin-mse";
  }
  return "?";
}

/// One training token: its contextual embedding, vocabulary id and position
/// inside its document.
struct TokenSample {
  Vector e_t;
  TokenId token_id = 0;
  std::size_t position = 0;
};

struct RankTriple {
  Matrix query;
  DocumentTokens pos_doc;
  DocumentTokens neg_doc;
};

/// A triple after offline encoding of both documents with the frozen
/// encoder, carrying the cached teacher scores.
struct PreparedTriple {
  Matrix query;
  DocumentCodes pos;
  DocumentCodes neg;
  double teacher_pos = 0.0;
  double teacher_neg = 0.0;
};

using TeacherFn = std::function<double(const Matrix& query, const DocumentTokens& doc)>;

inline TeacherFn maxsim_teacher() {
  return [](const Matrix& q, const DocumentTokens& d) { return maxsim_score(q, d.embeddings); };
}

// ---------------------------------------------------------------------------
// Losses

/// -log(exp(f+) / (exp(f+) + exp(f-))) = softplus(f- - f+).
inline double loss_pairwise_ce(double f_pos_hat, double f_neg_hat) {
  require(std::isfinite(f_pos_hat) && std::isfinite(f_neg_hat), ErrorCode::NonFinite,
          "pairwise CE scores must be finite");
  return softplus(f_neg_hat - f_pos_hat);
}

inline double loss_margin_mse(double f_pos, double f_neg, double f_pos_hat, double f_neg_hat) {
  require(std::isfinite(f_pos) && std::isfinite(f_neg) && std::isfinite(f_pos_hat) &&
              std::isfinite(f_neg_hat),
          ErrorCode::NonFinite, "margin MSE scores must be finite");
  const double diff = (f_pos - f_neg) - (f_pos_hat - f_neg_hat);
  return diff * diff;
}

/// d loss / d f_pos_hat; the derivative w.r.t. f_neg_hat is its negation.
inline double margin_mse_grad(double f_pos, double f_neg, double f_pos_hat, double f_neg_hat) {
  return -2.0 * ((f_pos - f_neg) - (f_pos_hat - f_neg_hat));
}

inline double pairwise_ce_grad(double f_pos_hat, double f_neg_hat) {
  return -sigmoid(f_neg_hat - f_pos_hat);
}

/// Soft-path reconstruction: encoder distribution, p-weighted codewords,
/// composition.
inline Vector soft_reconstruct(const CQParams& model, const TokenSample& s,
                               const DocIndepTable& table, const GumbelConfig& g,
                               std::uint64_t stream) {
  const auto e_bar = table.lookup(s.token_id);
  const auto trace = encoder_forward(model, s.e_t, e_bar, g, stream, s.position);
  return compose(model, soft_decode_delta(model, trace.p), e_bar);
}

/// sum_i ||E(t_i) - E_hat(t_i)||^2 over the batch; sample i uses noise
/// stream i of g.
inline double loss_mse(const CQParams& model, std::span<const TokenSample> batch,
                       const DocIndepTable& table, const GumbelConfig& g) {
  require(!batch.empty(), ErrorCode::EmptyBatch, "MSE loss over an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += squared_distance(batch[i].e_t, soft_reconstruct(model, batch[i], table, g, i));
  }
  return total;
}

/// Student MaxSim score of a compressed document.
inline double student_score(const CQParams& model, const Matrix& query, const DocumentCodes& doc,
                            const DocIndepTable& table) {
  return maxsim_score(query, reconstruct_document(model, doc, table));
}

inline double ranking_loss(const CQParams& model, std::span<const PreparedTriple> triples,
                           const DocIndepTable& table, LossKind kind) {
  require(kind != LossKind::MSE, ErrorCode::BadParam, "ranking loss needs a ranking loss kind");
  require(!triples.empty(), ErrorCode::EmptyBatch, "ranking loss over an empty batch");
  double total = 0.0;
  for (const auto& t : triples) {
    const double fp = student_score(model, t.query, t.pos, table);
    const double fn = student_score(model, t.query, t.neg, table);
    total += kind == LossKind::MarginMSE ? loss_margin_mse(t.teacher_pos, t.teacher_neg, fp, fn)
                                         : loss_pairwise_ce(fp, fn);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Analytic gradients

namespace detail {

inline void add_outer(Matrix& dst, std::span<const double> col, std::span<const double> row) {
  for (std::size_t r = 0; r < col.size(); ++r) {
    if (col[r] == 0.0) continue;
    auto d = dst.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) d[c] += col[r] * row[c];
  }
}

inline void add_to(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

/// Backpropagates d loss / d E_hat(t) through the composition layer into
/// grads.w2 / grads.b2; returns d loss / d delta_hat.
inline Vector compose_backward(const CQParams& model, std::span<const double> delta,
                               std::span<const double> e_bar, std::span<const double> y,
                               std::span<const double> dy, Gradients& grads) {
  const std::size_t D = model.spec.D;
  Vector input(2 * D);
  std::copy(delta.begin(), delta.end(), input.begin());
  std::copy(e_bar.begin(), e_bar.end(), input.begin() + static_cast<std::ptrdiff_t>(D));
  Vector dz(D);
  for (std::size_t r = 0; r < D; ++r) dz[r] = dy[r] * (1.0 - y[r] * y[r]);
  add_to(grads.b2, dz);
  add_outer(grads.w2, dz, input);
  Vector ddelta(D, 0.0);
  for (std::size_t r = 0; r < D; ++r) {
    if (dz[r] == 0.0) continue;
    const auto w = model.w2.row(r);
    for (std::size_t k = 0; k < D; ++k) ddelta[k] += w[k] * dz[r];
  }
  return ddelta;
}

inline std::size_t book_offset(const QuantizerSpec& spec, std::size_t m) {
  return spec.mode == QuantizerMode::Product ? m * spec.h : 0;
}

}  // namespace detail

inline void check_same_shape(const CQParams& a, const CQParams& b) {
  std::vector<std::size_t> sa, sb;
  for_each_tensor(a, [&](std::span<const double> t, const char*) { sa.push_back(t.size()); });
  for_each_tensor(b, [&](std::span<const double> t, const char*) { sb.push_back(t.size()); });
  require(sa == sb && a.spec == b.spec && a.use_position == b.use_position,
          ErrorCode::ShapeMismatch, "parameter and gradient shapes differ");
}

/// MSE loss and its gradient w.r.t. every parameter, through the soft
/// (p-weighted) decoder. Gumbel noise is a constant of the pass.
inline std::pair<double, Gradients> backward_mse(const CQParams& model,
                                                 std::span<const TokenSample> batch,
                                                 const DocIndepTable& table,
                                                 const GumbelConfig& g) {
  require(!g.hard, ErrorCode::HardModeGradient, "gradients need the soft relaxation");
  require(!batch.empty(), ErrorCode::EmptyBatch, "MSE loss over an empty batch");
  const auto& spec = model.spec;
  const std::size_t D = spec.D;
  const std::size_t K = spec.K;
  Gradients grads = zeros_like(model);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    const auto e_bar = table.lookup(s.token_id);
    const auto c = detail::encoder_cache(model, s.e_t, e_bar, g, i, s.position);

    Vector delta(D, 0.0);
    for (std::size_t m = 0; m < spec.M; ++m) {
      const std::size_t off = detail::book_offset(spec, m);
      for (std::size_t j = 0; j < K; ++j) {
        const double p = c.p[m * K + j];
        const auto cw = model.codebooks.codeword(m, j);
        for (std::size_t k = 0; k < spec.h; ++k) delta[off + k] += p * cw[k];
      }
    }
    const Vector y = compose(model, delta, e_bar);
    Vector dy(D);
    for (std::size_t k = 0; k < D; ++k) {
      const double r = s.e_t[k] - y[k];
      loss += r * r;
      dy[k] = -2.0 * r;
    }
    const Vector ddelta = detail::compose_backward(model, delta, e_bar, y, dy, grads);

    Vector dz1(spec.M * K);
    for (std::size_t m = 0; m < spec.M; ++m) {
      const std::size_t off = detail::book_offset(spec, m);
      const std::span<const double> dd(ddelta.data() + off, spec.h);
      Vector dp(K);
      double mean = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        const double p = c.p[m * K + j];
        dp[j] = dot(model.codebooks.codeword(m, j), dd);
        mean += p * dp[j];
        auto gw = grads.codebooks.books[m].row(j);
        for (std::size_t k = 0; k < spec.h; ++k) gw[k] += p * dd[k];
      }
      for (std::size_t j = 0; j < K; ++j) {
        const std::size_t idx = m * K + j;
        const double dlogit = c.p[idx] * (dp[j] - mean) / g.tau;
        dz1[idx] = dlogit * log_softplus_grad(c.z1[idx]);
      }
    }
    detail::add_to(grads.b1, dz1);
    detail::add_outer(grads.w1, dz1, c.h);

    const std::size_t hid = model.hidden();
    Vector dz0(hid, 0.0);
    for (std::size_t r = 0; r < dz1.size(); ++r) {
      const auto w = model.w1.row(r);
      for (std::size_t k = 0; k < hid; ++k) dz0[k] += w[k] * dz1[r];
    }
    for (std::size_t k = 0; k < hid; ++k) dz0[k] *= 1.0 - c.h[k] * c.h[k];
    detail::add_to(grads.b0, dz0);
    detail::add_outer(grads.w0, dz0, c.x);
  }
  return {loss, std::move(grads)};
}

namespace detail {

/// Accumulates d loss / d params for one student score given upstream
/// d loss / d f_hat. Codes are fixed, so only codebooks and the
/// composition layer receive gradient.
inline double student_score_backward(const CQParams& model, const Matrix& query,
                                     const DocumentCodes& doc, const DocIndepTable& table,
                                     double upstream, Gradients* grads) {
  const auto& spec = model.spec;
  const std::size_t n = doc.codes.size();
  std::vector<Vector> deltas(n);
  Matrix recon(n, spec.D);
  for (std::size_t t = 0; t < n; ++t) {
    deltas[t] = decode_delta(model, doc.codes[t]);
    const Vector y = compose(model, deltas[t], table.lookup(doc.token_ids[t]));
    std::copy(y.begin(), y.end(), recon.row(t).begin());
  }
  const auto ms = maxsim_detail(query, recon);
  if (!grads || upstream == 0.0) return ms.score;

  Matrix dY(n, spec.D);
  for (std::size_t i = 0; i < query.rows; ++i) {
    auto d = dY.row(ms.argmax[i]);
    const auto q = query.row(i);
    for (std::size_t k = 0; k < spec.D; ++k) d[k] += upstream * q[k];
  }
  for (std::size_t t = 0; t < n; ++t) {
    const auto dy = dY.row(t);
    if (std::all_of(dy.begin(), dy.end(), [](double v) { return v == 0.0; })) continue;
    const Vector ddelta = compose_backward(model, deltas[t], table.lookup(doc.token_ids[t]),
                                           recon.row(t), dy, *grads);
    for (std::size_t m = 0; m < spec.M; ++m) {
      const std::size_t off = book_offset(spec, m);
      auto gw = grads->codebooks.books[m].row(doc.codes[t][m]);
      for (std::size_t k = 0; k < spec.h; ++k) gw[k] += ddelta[off + k];
    }
  }
  return ms.score;
}

}  // namespace detail

/// Ranking loss (PairwiseCE or MarginMSE) with the encoder frozen: document
/// codes are fixed and gradients reach the codebooks and composition layer.
inline std::pair<double, Gradients> backward_ranking(const CQParams& model,
                                                     std::span<const PreparedTriple> triples,
                                                     const DocIndepTable& table, LossKind kind) {
  require(kind != LossKind::MSE, ErrorCode::BadParam, "ranking backward needs a ranking loss");
  require(!triples.empty(), ErrorCode::EmptyBatch, "ranking loss over an empty batch");
  Gradients grads = zeros_like(model);
  double loss = 0.0;
  for (const auto& t : triples) {
    const double fp = detail::student_score_backward(model, t.query, t.pos, table, 0.0, nullptr);
    const double fn = detail::student_score_backward(model, t.query, t.neg, table, 0.0, nullptr);
    double g_pos = 0.0;
    if (kind == LossKind::MarginMSE) {
      loss += loss_margin_mse(t.teacher_pos, t.teacher_neg, fp, fn);
      g_pos = margin_mse_grad(t.teacher_pos, t.teacher_neg, fp, fn);
    } else {
      loss += loss_pairwise_ce(fp, fn);
      g_pos = pairwise_ce_grad(fp, fn);
    }
    detail::student_score_backward(model, t.query, t.pos, table, g_pos, &grads);
    detail::student_score_backward(model, t.query, t.neg, table, -g_pos, &grads);
  }
  return {loss, std::move(grads)};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const CQParams& like) : m(zeros_like(like)), v(zeros_like(like)) {}
};

/// One bias-corrected Adam update of params in place.
inline void adam_step(AdamState& state, CQParams& params, const Gradients& grads, double lr) {
  check_same_shape(params, grads);
  check_same_shape(params, state.m);
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  std::vector<std::span<double>> p, m, v;
  std::vector<std::span<const double>> g;
  for_each_tensor(params, [&](std::span<double> t, const char*) { p.push_back(t); });
  for_each_tensor(state.m, [&](std::span<double> t, const char*) { m.push_back(t); });
  for_each_tensor(state.v, [&](std::span<double> t, const char*) { v.push_back(t); });
  for_each_tensor(grads, [&](std::span<const double> t, const char*) { g.push_back(t); });
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double gi = g[k][i];
      m[k][i] = state.beta1 * m[k][i] + (1.0 - state.beta1) * gi;
      v[k][i] = state.beta2 * v[k][i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[k][i] / c1;
      const double vhat = v[k][i] / c2;
      p[k][i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst_tensor;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares every entry of `analytic` with a central difference of `loss`
/// (step `step`) evaluated at `params`.
inline GradCheckResult compare_with_finite_differences(
    const CQParams& params, const Gradients& analytic,
    const std::function<double(const CQParams&)>& loss, double step = 1e-3) {
  GradCheckResult res;
  CQParams probe = params;
  std::vector<std::pair<std::span<double>, const char*>> tensors;
  std::vector<std::span<const double>> grads;
  for_each_tensor(probe,
                  [&](std::span<double> t, const char* name) { tensors.emplace_back(t, name); });
  for_each_tensor(analytic, [&](std::span<const double> t, const char*) { grads.push_back(t); });
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto [t, name] = tensors[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss(probe);
      t[i] = orig - step;
      const double down = loss(probe);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(grads[k][i], numeric);
      ++res.entries;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = name;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training loop

struct WarmupConfig {
  double lr = 1e-4;
  std::size_t batch = 128;
  std::size_t steps = 200000;
};

struct FinetuneConfig {
  double lr = 3e-6;
  std::size_t pairs_per_batch = 32;
  std::size_t steps = 800;
  LossKind loss = LossKind::MarginMSE;
};

struct TrainConfig {
  WarmupConfig warmup;
  FinetuneConfig finetune;
  std::uint64_t seed = 0;
  std::size_t sample_size = 500000;
  double tau = 1.0;
  bool use_position = false;
};

struct TrainLog {
  std::vector<double> warmup_loss;
  std::vector<double> finetune_loss;
};

/// Up to `count` tokens drawn without replacement from the corpus.
inline std::vector<TokenSample> select_training_tokens(const std::vector<DocumentTokens>& docs,
                                                       std::size_t count, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t t = 0; t < docs[d].size(); ++t) all.emplace_back(d, t);
  }
  SplitMix64 rng(seed);
  auto pick = sample_without_replacement(all.size(), count, rng);
  std::sort(pick.begin(), pick.end());
  std::vector<TokenSample> out;
  out.reserve(pick.size());
  for (auto idx : pick) {
    const auto [d, t] = all[idx];
    const auto row = docs[d].embeddings.row(t);
    out.push_back({Vector(row.begin(), row.end()), docs[d].token_ids[t], t});
  }
  return out;
}

inline std::vector<PreparedTriple> prepare_triples(const CQParams& model,
                                                   const std::vector<RankTriple>& triples,
                                                   const DocIndepTable& table,
                                                   const TeacherFn& teacher) {
  std::vector<PreparedTriple> out;
  out.reserve(triples.size());
  for (const auto& t : triples) {
    out.push_back({t.query, quantize_document(model, t.pos_doc, table),
                   quantize_document(model, t.neg_doc, table), teacher(t.query, t.pos_doc),
                   teacher(t.query, t.neg_doc)});
  }
  return out;
}

/// Phase 1 minimizes the reconstruction MSE through the Gumbel-softmax
/// relaxation. Phase 2 (skipped for LossKind::MSE or zero steps) freezes
/// the encoder and fine-tunes codebooks and composition with the ranking
/// loss against cached teacher scores. Parameters are rounded to binary32
/// on return.
inline CQParams train_cq(const QuantizerSpec& spec, std::span<const TokenSample> tokens,
                         const DocIndepTable& table, const std::vector<RankTriple>& triples,
                         const TeacherFn& teacher, const TrainConfig& cfg,
                         TrainLog* log = nullptr) {
  require(!tokens.empty(), ErrorCode::EmptyBatch, "no training tokens");
  require(cfg.warmup.lr > 0 && cfg.finetune.lr > 0, ErrorCode::BadParam,
          "learning rates must be positive");
  require(cfg.warmup.batch >= 1 && cfg.finetune.pairs_per_batch >= 1, ErrorCode::BadParam,
          "batch sizes must be positive");
  check_dim(table.dim(), spec.D, "document-independent table");
  const bool finetune = cfg.finetune.steps > 0 && cfg.finetune.loss != LossKind::MSE;
  require(!finetune || !triples.empty(), ErrorCode::BadParam,
          "ranking-loss fine-tuning needs training triples");

  CQParams params = init_params(spec, substream(cfg.seed, 0).next(), cfg.use_position);

  AdamState adam(params);
  SplitMix64 rng = substream(cfg.seed, 1);
  std::vector<TokenSample> batch(cfg.warmup.batch);
  for (std::size_t step = 0; step < cfg.warmup.steps; ++step) {
    for (auto& s : batch) s = tokens[rng.index(tokens.size())];
    GumbelConfig g;
    g.tau = cfg.tau;
    g.seed = substream(cfg.seed ^ 0x5EEDULL, step).next();
    g.hard = false;
    g.noise = true;
    auto [loss, grads] = backward_mse(params, batch, table, g);
    if (log) log->warmup_loss.push_back(loss);
    adam_step(adam, params, grads, cfg.warmup.lr);
  }

  if (finetune) {
    const auto prepared = prepare_triples(params, triples, table, teacher);
    AdamState ft(params);
    SplitMix64 pick = substream(cfg.seed, 2);
    std::vector<PreparedTriple> pb(cfg.finetune.pairs_per_batch);
    for (std::size_t step = 0; step < cfg.finetune.steps; ++step) {
      for (auto& t : pb) t = prepared[pick.index(prepared.size())];
      auto [loss, grads] = backward_ranking(params, pb, table, cfg.finetune.loss);
      if (log) log->finetune_loss.push_back(loss);
      adam_step(ft, params, grads, cfg.finetune.lr);
    }
  }
  round_to_binary32(params);
  return params;
}

}  // namespace cq
