#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <limits>
#include <thread>
#include <vector>

#include "cq/codestore.hpp"
#include "cq/error.hpp"
#include "cq/model.hpp"
#include "cq/types.hpp"

namespace cq {

struct ScoredDoc {
  std::uint64_t doc_id = 0;
  double score = 0.0;

  bool operator==(const ScoredDoc&) const = default;
};

struct RerankRequest {
  EmbeddingMatrix query;
  std::vector<std::uint64_t> candidates;
  std::size_t k = 10;
};

/// MaxSim score plus, for each query row, the document row that attained
/// the max (first one on ties).
struct MaxSimResult {
  double score = 0.0;
  std::vector<std::size_t> argmax;
};

inline MaxSimResult maxsim_detail(const Matrix& query, const Matrix& doc) {
  MaxSimResult res;
  if (query.rows == 0) {
    std::clog << "warning: empty query scores 0\n";
    return res;
  }
  require(doc.rows > 0, ErrorCode::EmptyDoc, "document has no tokens");
  check_dim(doc.cols, query.cols, "maxsim document");
  res.argmax.resize(query.rows);
  for (std::size_t i = 0; i < query.rows; ++i) {
    const auto q = query.row(i);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < doc.rows; ++j) {
      const double s = dot(q, doc.row(j));
      if (s > best) {
        best = s;
        arg = j;
      }
    }
    res.argmax[i] = arg;
    res.score += best;
  }
  return res;
}

/// f(q, d) = sum_i max_j <q_i, d_j>.
inline double maxsim_score(const Matrix& query, const Matrix& doc) {
  return maxsim_detail(query, doc).score;
}

/// Teacher scores: MaxSim over the uncompressed embeddings, in input order.
inline std::vector<double> teacher_scores(const Matrix& query,
                                          const std::vector<DocumentTokens>& raw_docs) {
  std::vector<double> out;
  out.reserve(raw_docs.size());
  for (const auto& d : raw_docs) out.push_back(maxsim_score(query, d.embeddings));
  return out;
}

/// Descending by score, ascending doc id on ties.
inline void sort_scored(std::vector<ScoredDoc>& docs) {
  std::sort(docs.begin(), docs.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; callers write results by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Decompresses each candidate on demand with `reconstruct` (DocumentCodes
/// -> Matrix), scores it against the query and returns the top k.
template <typename Reconstruct>
std::vector<ScoredDoc> rerank_with(const RerankRequest& req, const CodeStore& store,
                                   Reconstruct&& reconstruct, std::size_t threads = 1) {
  require(req.k >= 1, ErrorCode::BadParam, "rerank depth k must be at least 1");
  require(!req.candidates.empty(), ErrorCode::BadParam, "no candidates to rerank");
  for (auto id : req.candidates) {
    if (!store.contains(id))
      fail(ErrorCode::MissingDoc, "doc " + std::to_string(id) + " not in store");
  }
  std::vector<ScoredDoc> scored(req.candidates.size());
  parallel_for(req.candidates.size(), threads, [&](std::size_t i) {
    const auto id = req.candidates[i];
    scored[i] = {id, maxsim_score(req.query, reconstruct(store.get(id)))};
  });
  sort_scored(scored);
  if (scored.size() > req.k) scored.resize(req.k);
  return scored;
}

inline std::vector<ScoredDoc> rerank(const RerankRequest& req, const CodeStore& store,
                                     const CQParams& model, const DocIndepTable& table,
                                     std::size_t threads = 1) {
  return rerank_with(
      req, store, [&](const DocumentCodes& d) { return reconstruct_document(model, d, table); },
      threads);
}

/// Baseline quantizers reconstruct tokens from codebooks alone.
inline Matrix reconstruct_baseline_document(const CodebookSet& cb, const DocumentCodes& codes) {
  Matrix out(codes.codes.size(), cb.spec.D);
  for (std::size_t i = 0; i < codes.codes.size(); ++i) {
    const Vector v = decode_baseline(cb, codes.codes[i]);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<ScoredDoc> rerank(const RerankRequest& req, const CodeStore& store,
                                     const CodebookSet& cb, std::size_t threads = 1) {
  return rerank_with(
      req, store, [&](const DocumentCodes& d) { return reconstruct_baseline_document(cb, d); },
      threads);
}

}  // namespace cq
