#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cq/error.hpp"
#include "cq/rng.hpp"
#include "cq/types.hpp"

namespace cq {

/// M codebooks, each K x h. Shared by the k-means baselines and the
/// contextual quantizer's decoder.
struct CodebookSet {
  QuantizerSpec spec;
  std::vector<Matrix> books;

  CodebookSet() = default;
  explicit CodebookSet(const QuantizerSpec& s) : spec(s), books(s.M, Matrix(s.K, s.h)) {}

  std::span<const double> codeword(std::size_t m, std::size_t j) const { return books[m].row(j); }

  bool operator==(const CodebookSet&) const = default;
};

enum class EmptyClusterPolicy { ReseedFarthest };

struct KMeansConfig {
  std::size_t iterations = 25;
  std::uint64_t seed = 0;
  EmptyClusterPolicy empty_cluster_policy = EmptyClusterPolicy::ReseedFarthest;
};

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  /// Mean squared assignment distance after each assignment step.
  std::vector<double> mse_history;
};

inline std::size_t nearest_row(const Matrix& centroids, std::span<const double> x,
                               double* best_out = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows; ++j) {
    const double d = squared_distance(x, centroids.row(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

/// Lloyd's k-means. Initial centroids are K distinct sample rows chosen by a
/// seeded Fisher-Yates draw; a cluster left empty after assignment is
/// reseeded with the point currently farthest from its centroid.
inline KMeansResult kmeans(const Matrix& points, std::size_t K, const KMeansConfig& cfg) {
  require(cfg.iterations >= 1, ErrorCode::BadParam, "k-means needs at least one iteration");
  require(K >= 1, ErrorCode::BadParam, "K must be positive");
  if (points.rows < K)
    fail(ErrorCode::TooFewSamples,
         std::to_string(points.rows) + " samples for K=" + std::to_string(K));
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;

  KMeansResult res;
  res.centroids = Matrix(K, d);
  SplitMix64 rng(cfg.seed);
  const auto init = sample_without_replacement(n, K, rng);
  for (std::size_t j = 0; j < K; ++j) {
    const auto src = points.row(init[j]);
    std::copy(src.begin(), src.end(), res.centroids.row(j).begin());
  }

  res.assignment.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  std::vector<std::size_t> counts(K);
  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    bool changed = iter == 0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = nearest_row(res.centroids, points.row(i), &dist[i]);
      if (a != res.assignment[i]) changed = true;
      res.assignment[i] = a;
      total += dist[i];
    }
    res.mse_history.push_back(total / static_cast<double>(n));
    if (!changed) break;

    Matrix sums(K, d);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = res.assignment[i];
      ++counts[a];
      auto dst = sums.row(a);
      const auto src = points.row(i);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    for (std::size_t j = 0; j < K; ++j) {
      if (counts[j] == 0) continue;
      auto dst = res.centroids.row(j);
      const auto src = sums.row(j);
      for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] / static_cast<double>(counts[j]);
    }
    for (std::size_t j = 0; j < K; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      const auto src = points.row(far);
      std::copy(src.begin(), src.end(), res.centroids.row(j).begin());
      dist[far] = 0.0;
    }
  }
  return res;
}

inline Matrix slice_columns(const Matrix& x, std::size_t begin, std::size_t width) {
  Matrix out(x.rows, width);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto src = x.row(i).subspan(begin, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline void round_to_binary32(CodebookSet& cb) {
  for (auto& book : cb.books) round_to_binary32(book.data);
}

/// Product quantizer: independent k-means in each of the M h-wide subspaces.
inline CodebookSet train_pq(const Matrix& samples, const QuantizerSpec& spec,
                            const KMeansConfig& cfg) {
  require(spec.mode == QuantizerMode::Product, ErrorCode::BadParam, "train_pq needs product mode");
  check_dim(samples.cols, spec.D, "train_pq samples");
  if (samples.rows < spec.K)
    fail(ErrorCode::TooFewSamples,
         std::to_string(samples.rows) + " samples for K=" + std::to_string(spec.K));
  check_finite(samples.data, "train_pq samples");
  CodebookSet cb(spec);
  for (std::size_t m = 0; m < spec.M; ++m) {
    KMeansConfig sub = cfg;
    sub.seed = substream(cfg.seed, m).next();
    cb.books[m] = kmeans(slice_columns(samples, m * spec.h, spec.h), spec.K, sub).centroids;
  }
  round_to_binary32(cb);
  return cb;
}

struct RqTrainingTrace {
  /// Mean squared residual after stage m has been applied.
  std::vector<double> stage_mse;
};

/// Residual (additive) quantizer: book m is k-means over what stages
/// 1..m-1 failed to reconstruct. Encoding is greedy per stage.
inline CodebookSet train_rq(const Matrix& samples, const QuantizerSpec& spec,
                            const KMeansConfig& cfg, RqTrainingTrace* trace = nullptr) {
  require(spec.mode == QuantizerMode::Additive, ErrorCode::BadParam,
          "train_rq needs additive mode");
  check_dim(samples.cols, spec.D, "train_rq samples");
  if (samples.rows < spec.K)
    fail(ErrorCode::TooFewSamples,
         std::to_string(samples.rows) + " samples for K=" + std::to_string(spec.K));
  check_finite(samples.data, "train_rq samples");
  CodebookSet cb(spec);
  Matrix residual = samples;
  for (std::size_t m = 0; m < spec.M; ++m) {
    KMeansConfig sub = cfg;
    sub.seed = substream(cfg.seed, m).next();
    cb.books[m] = kmeans(residual, spec.K, sub).centroids;
    round_to_binary32(cb.books[m].data);
    double total = 0.0;
    for (std::size_t i = 0; i < residual.rows; ++i) {
      auto r = residual.row(i);
      const auto c = cb.books[m].row(nearest_row(cb.books[m], r));
      for (std::size_t k = 0; k < r.size(); ++k) r[k] -= c[k];
      total += dot(r, r);
    }
    if (trace) trace->stage_mse.push_back(total / static_cast<double>(residual.rows));
  }
  return cb;
}

inline Code encode_baseline(const CodebookSet& cb, std::span<const double> x) {
  const auto& spec = cb.spec;
  check_dim(x.size(), spec.D, "encode_baseline input");
  Code code(spec.M);
  if (spec.mode == QuantizerMode::Product) {
    for (std::size_t m = 0; m < spec.M; ++m) {
      code[m] = static_cast<std::uint32_t>(nearest_row(cb.books[m], x.subspan(m * spec.h, spec.h)));
    }
  } else {
    Vector residual(x.begin(), x.end());
    for (std::size_t m = 0; m < spec.M; ++m) {
      const std::size_t j = nearest_row(cb.books[m], residual);
      code[m] = static_cast<std::uint32_t>(j);
      const auto c = cb.books[m].row(j);
      for (std::size_t k = 0; k < residual.size(); ++k) residual[k] -= c[k];
    }
  }
  return code;
}

/// Concatenation (product) or sum (additive) of the selected codewords.
inline Vector decode_codes(const CodebookSet& cb, const Code& code) {
  const auto& spec = cb.spec;
  validate_code(code, spec);
  Vector out(spec.D, 0.0);
  for (std::size_t m = 0; m < spec.M; ++m) {
    const auto c = cb.books[m].row(code[m]);
    if (spec.mode == QuantizerMode::Product) {
      std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(m * spec.h));
    } else {
      for (std::size_t k = 0; k < spec.D; ++k) out[k] += c[k];
    }
  }
  return out;
}

inline Vector decode_baseline(const CodebookSet& cb, const Code& code) {
  return decode_codes(cb, code);
}

}  // namespace cq
