#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cq/error.hpp"
#include "cq/late_interaction.hpp"
#include "cq/model.hpp"
#include "cq/rng.hpp"
#include "cq/types.hpp"

namespace cq {

/// Synthetic corpus in which every token embedding is literally a
/// document-independent base row plus a document-specific delta.
struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t V = 512;
  std::size_t Z = 200;
  std::size_t n = 24;
  std::size_t D = 16;
  /// ||delta|| / ||base||, in [0, 1]. Zero is a degenerate test mode.
  double delta_scale = 0.2;
  std::size_t cluster_count = 16;
  std::size_t query_count = 20;
  std::size_t l = 6;
  std::size_t candidates = 20;
  /// Per-coordinate std of the additive query perturbation.
  double query_noise = 0.05;
  /// Per-coordinate std of cluster centers and of rows around their center.
  double center_scale = 0.25;
  double spread = 0.08;
  /// Fraction of a document's tokens drawn from its topic cluster.
  double topic_ratio = 0.75;
};

struct SynthCorpus {
  DocIndepTable table;
  std::vector<DocumentTokens> docs;
  std::vector<std::size_t> topics;
};

struct SynthQuery {
  std::uint64_t query_id = 0;
  std::uint64_t target = 0;
  Matrix query;
  std::vector<std::uint64_t> candidates;
  /// Candidates sorted by MaxSim on the clean embeddings.
  std::vector<ScoredDoc> teacher_order;
};

inline void validate(const SynthConfig& c) {
  require(c.V >= 1 && c.Z >= 1 && c.n >= 1 && c.D >= 1 && c.cluster_count >= 1 &&
              c.query_count >= 1 && c.l >= 1 && c.candidates >= 1,
          ErrorCode::BadParam, "synthetic corpus sizes must be positive");
  require(c.V <= 65536, ErrorCode::BadParam, "vocabulary must fit 16-bit token ids");
  require(c.cluster_count <= c.V, ErrorCode::BadParam, "more clusters than vocabulary entries");
  require(c.delta_scale >= 0.0 && c.delta_scale <= 1.0, ErrorCode::BadParam,
          "delta_scale must lie in [0, 1]");
  require(c.topic_ratio >= 0.0 && c.topic_ratio <= 1.0, ErrorCode::BadParam,
          "topic_ratio must lie in [0, 1]");
  require(c.query_noise >= 0.0 && c.center_scale > 0.0 && c.spread >= 0.0, ErrorCode::BadParam,
          "noise scales must be non-negative");
}

inline void normalize(std::span<double> v) {
  const double norm = std::sqrt(dot(v, v));
  if (norm > 0.0)
    for (double& x : v) x /= norm;
}

/// Base rows and token embeddings are unit length, so an exact copy of a
/// token is its own best match under dot-product MaxSim.
inline SynthCorpus gen_corpus(const SynthConfig& cfg) {
  validate(cfg);
  SynthCorpus out;
  SplitMix64 rng = substream(cfg.seed, 100);

  Matrix centers(cfg.cluster_count, cfg.D);
  for (double& v : centers.data) v = cfg.center_scale * rng.gaussian();
  Matrix base(cfg.V, cfg.D);
  for (std::size_t id = 0; id < cfg.V; ++id) {
    const auto c = centers.row(id % cfg.cluster_count);
    auto r = base.row(id);
    for (std::size_t k = 0; k < cfg.D; ++k) r[k] = c[k] + cfg.spread * rng.gaussian();
    normalize(r);
  }
  round_to_binary32(base.data);
  out.table.rows = base;

  const std::size_t C = cfg.cluster_count;
  for (std::size_t d = 0; d < cfg.Z; ++d) {
    DocumentTokens doc;
    doc.doc_id = d;
    doc.embeddings = Matrix(cfg.n, cfg.D);
    const std::size_t topic = rng.index(C);
    out.topics.push_back(topic);
    const std::size_t in_topic = (cfg.V - topic + C - 1) / C;
    for (std::size_t t = 0; t < cfg.n; ++t) {
      const std::size_t id =
          rng.uniform() < cfg.topic_ratio ? topic + C * rng.index(in_topic) : rng.index(cfg.V);
      doc.token_ids.push_back(static_cast<TokenId>(id));
      const auto b = base.row(id);
      const double scale = cfg.delta_scale * std::sqrt(dot(b, b) / static_cast<double>(cfg.D));
      auto e = doc.embeddings.row(t);
      for (std::size_t k = 0; k < cfg.D; ++k) e[k] = b[k] + scale * rng.gaussian();
      if (cfg.delta_scale > 0.0) normalize(e);
      for (std::size_t k = 0; k < cfg.D; ++k) {
        e[k] = static_cast<float>(e[k]);
        // e and b are binary32, so their difference is exact in binary64.
        const double delta = e[k] - b[k];
        require(b[k] + delta == e[k], ErrorCode::NonFinite, "decomposition identity violated");
      }
    }
    out.docs.push_back(std::move(doc));
  }
  return out;
}

/// Queries are noisy copies of l tokens of a target document; candidates
/// are the target plus distractors from documents of other topics.
inline std::vector<SynthQuery> gen_queries(const SynthConfig& cfg, const SynthCorpus& corpus) {
  validate(cfg);
  require(!corpus.docs.empty(), ErrorCode::BadParam, "empty corpus");
  SplitMix64 rng = substream(cfg.seed, 200);
  std::vector<SynthQuery> out;
  for (std::size_t q = 0; q < cfg.query_count; ++q) {
    SynthQuery sq;
    sq.query_id = q;
    const std::size_t target = rng.index(corpus.docs.size());
    sq.target = corpus.docs[target].doc_id;
    const auto& doc = corpus.docs[target];
    require(cfg.l <= doc.size(), ErrorCode::BadParam, "query length exceeds document length");
    const auto rows = sample_without_replacement(doc.size(), cfg.l, rng);
    sq.query = Matrix(cfg.l, doc.embeddings.cols);
    for (std::size_t i = 0; i < cfg.l; ++i) {
      const auto src = doc.embeddings.row(rows[i]);
      auto dst = sq.query.row(i);
      for (std::size_t k = 0; k < src.size(); ++k)
        dst[k] = src[k] + cfg.query_noise * rng.gaussian();
    }
    round_to_binary32(sq.query.data);

    std::vector<std::size_t> pool;
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
      if (corpus.topics[d] != corpus.topics[target]) pool.push_back(d);
    }
    require(pool.size() + 1 >= cfg.candidates, ErrorCode::BadParam,
            "not enough off-topic documents for the candidate list");
    sq.candidates.push_back(sq.target);
    for (auto i : sample_without_replacement(pool.size(), cfg.candidates - 1, rng)) {
      sq.candidates.push_back(corpus.docs[pool[i]].doc_id);
    }
    std::sort(sq.candidates.begin(), sq.candidates.end());

    for (auto id : sq.candidates) {
      const auto& cand = *std::find_if(corpus.docs.begin(), corpus.docs.end(),
                                       [&](const DocumentTokens& d) { return d.doc_id == id; });
      sq.teacher_order.push_back({id, maxsim_score(sq.query, cand.embeddings)});
    }
    sort_scored(sq.teacher_order);
    out.push_back(std::move(sq));
  }
  return out;
}

}  // namespace cq
