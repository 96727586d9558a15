#pragma once

// Exhaustive reference solvers for small instances. They share no code with
// the production paths they are used to check.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cq/baseline.hpp"
#include "cq/error.hpp"
#include "cq/types.hpp"

namespace cq::oracle {

struct KMeansOptimum {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> assignment;
  Matrix centroids;
};

/// Globally optimal k-means by enumerating all K^n assignments.
inline KMeansOptimum kmeans_exhaustive(const Matrix& points, std::size_t K) {
  require(points.rows <= 12 && K <= 3 && K >= 1, ErrorCode::TooLarge,
          "exhaustive k-means is limited to 12 points and 3 clusters");
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= K;
  KMeansOptimum best;
  std::vector<std::size_t> assign(n);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      assign[i] = c % K;
      c /= K;
    }
    Matrix mean(K, d);
    std::vector<double> count(K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      count[assign[i]] += 1.0;
      for (std::size_t k = 0; k < d; ++k) mean(assign[i], k) += points(i, k);
    }
    bool empty = false;
    for (std::size_t j = 0; j < K; ++j) {
      if (count[j] == 0.0) empty = true;
      for (std::size_t k = 0; k < d; ++k) mean(j, k) /= count[j] == 0.0 ? 1.0 : count[j];
    }
    if (empty && n >= K) continue;
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = points(i, k) - mean(assign[i], k);
        cost += diff * diff;
      }
    }
    if (cost < best.cost) {
      best.cost = cost;
      best.assignment = assign;
      best.centroids = mean;
    }
  }
  return best;
}

/// sum_i max_j <q_i, d_j> with plain nested loops.
inline double maxsim_bruteforce(const Matrix& Q, const Matrix& Dm) {
  double total = 0.0;
  for (std::size_t i = 0; i < Q.rows; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < Dm.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < Q.cols; ++k) s += Q(i, k) * Dm(j, k);
      if (s > best) best = s;
    }
    total += best;
  }
  return total;
}

/// Code minimizing ||x - reconstruction||^2 over all K^M codes; the first
/// minimizer in lexicographic order wins ties.
inline Code code_search_bruteforce(const CodebookSet& cb, std::span<const double> x) {
  const auto& spec = cb.spec;
  double total = 1.0;
  for (std::size_t m = 0; m < spec.M; ++m) total *= static_cast<double>(spec.K);
  require(total <= 4096.0, ErrorCode::TooLarge, "K^M exceeds 4096");
  Code code(spec.M, 0), best;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < static_cast<std::size_t>(total); ++it) {
    std::size_t c = it;
    for (std::size_t m = spec.M; m-- > 0;) {
      code[m] = static_cast<std::uint32_t>(c % spec.K);
      c /= spec.K;
    }
    std::vector<double> recon(spec.D, 0.0);
    for (std::size_t m = 0; m < spec.M; ++m) {
      for (std::size_t k = 0; k < spec.h; ++k) {
        const double v = cb.books[m](code[m], k);
        if (spec.mode == QuantizerMode::Product) {
          recon[m * spec.h + k] = v;
        } else {
          recon[k] += v;
        }
      }
    }
    double err = 0.0;
    for (std::size_t k = 0; k < spec.D; ++k) err += (x[k] - recon[k]) * (x[k] - recon[k]);
    if (err < best_err) {
      best_err = err;
      best = code;
    }
  }
  return best;
}

}  // namespace cq::oracle
