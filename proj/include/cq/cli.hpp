#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "cq/baseline.hpp"
#include "cq/codestore.hpp"
#include "cq/error.hpp"
#include "cq/eval.hpp"
#include "cq/late_interaction.hpp"
#include "cq/model.hpp"
#include "cq/synth.hpp"
#include "cq/train.hpp"

namespace cq::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kDataError = 2;

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline QuantizerMode parse_mode(const std::string& s) {
  return s == "additive" ? QuantizerMode::Additive : QuantizerMode::Product;
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::MSE;
  if (s == "pairwise-ce") return LossKind::PairwiseCE;
  return LossKind::MarginMSE;
}

inline Run to_run(const std::map<std::uint64_t, std::vector<ScoredDoc>>& ranked) {
  Run run;
  for (const auto& [qid, docs] : ranked) {
    auto& out = run[std::to_string(qid)];
    for (const auto& d : docs) out.push_back({std::to_string(d.doc_id), d.score});
  }
  return run;
}

inline std::uint64_t parse_id(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ParseError, "identifier '" + s + "' is not an unsigned integer");
}

inline const DocumentTokens& find_doc(const std::unordered_map<std::uint64_t, std::size_t>& index,
                                      const std::vector<DocumentTokens>& docs, std::uint64_t id) {
  const auto it = index.find(id);
  if (it == index.end()) fail(ErrorCode::MissingDoc, "doc " + std::to_string(id) + " not found");
  return docs[it->second];
}

inline std::unordered_map<std::uint64_t, std::size_t> index_docs(
    const std::vector<DocumentTokens>& docs) {
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < docs.size(); ++i) index.emplace(docs[i].doc_id, i);
  return index;
}

struct SynthArgs {
  SynthConfig cfg;
  std::string corpus_out, table_out, queries_out, run_out, qrels_out;
};

inline void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto corpus = gen_corpus(a.cfg);
  const auto queries = gen_queries(a.cfg, corpus);
  write_embeddings(a.corpus_out, corpus.docs, a.cfg.D);
  write_table(a.table_out, corpus.table);

  std::vector<DocumentTokens> qdocs;
  std::map<std::uint64_t, std::vector<ScoredDoc>> teacher;
  Qrels qrels;
  for (const auto& q : queries) {
    DocumentTokens d;
    d.doc_id = q.query_id;
    d.token_ids.assign(q.query.rows, 0);
    d.embeddings = q.query;
    qdocs.push_back(std::move(d));
    teacher[q.query_id] = q.teacher_order;
    qrels[std::to_string(q.query_id)][std::to_string(q.target)] = 1;
  }
  write_embeddings(a.queries_out, qdocs, a.cfg.D);
  write_run(a.run_out, to_run(teacher), "teacher");
  write_text(a.qrels_out, serialize_qrels(qrels));
  out << "docs=" << corpus.docs.size() << "\n"
      << "tokens=" << corpus.docs.size() * a.cfg.n << "\n"
      << "vocab=" << a.cfg.V << "\n"
      << "queries=" << queries.size() << "\n";
}

struct BaselineArgs {
  std::string embeddings, out;
  std::size_t M = 16, K = 256, iters = 25, sample_size = 500000;
  std::uint64_t seed = 42;
};

inline void cmd_train_baseline(const BaselineArgs& a, QuantizerMode mode, std::ostream& out) {
  const auto emb = read_embeddings(a.embeddings);
  const auto spec = make_quantizer_spec(mode, a.M, a.K, emb.dim);
  const auto tokens = select_training_tokens(emb.docs, a.sample_size, a.seed);
  Matrix samples(0, emb.dim);
  for (const auto& t : tokens) samples.append_row(t.e_t);
  KMeansConfig kc;
  kc.iterations = a.iters;
  kc.seed = a.seed;
  const auto cb =
      mode == QuantizerMode::Product ? train_pq(samples, spec, kc) : train_rq(samples, spec, kc);
  write_codebooks(a.out, cb);
  double err = 0.0;
  for (std::size_t i = 0; i < samples.rows; ++i) {
    err +=
        squared_distance(samples.row(i), decode_baseline(cb, encode_baseline(cb, samples.row(i))));
  }
  out << "mode=" << mode_name(mode) << "\n"
      << "samples=" << samples.rows << "\n"
      << "train_mse=" << fmt("%.9g", err / static_cast<double>(samples.rows)) << "\n";
}

struct TrainCqArgs {
  std::string embeddings, table, queries, run, out, log;
  std::string mode = "product", loss = "margin-mse";
  std::size_t M = 16, K = 256;
  TrainConfig cfg;
};

inline std::vector<RankTriple> build_triples(const std::string& queries_path,
                                             const std::string& run_path,
                                             const std::vector<DocumentTokens>& docs) {
  const auto queries = read_embeddings(queries_path);
  const auto run = parse_run(run_path);
  const auto index = index_docs(docs);
  std::vector<RankTriple> triples;
  for (const auto& q : queries.docs) {
    const auto it = run.find(std::to_string(q.doc_id));
    if (it == run.end() || it->second.size() < 2) continue;
    const auto& pos = find_doc(index, docs, parse_id(it->second.front().doc_id));
    for (std::size_t i = 1; i < it->second.size(); ++i) {
      triples.push_back({q.embeddings, pos, find_doc(index, docs, parse_id(it->second[i].doc_id))});
    }
  }
  return triples;
}

inline void cmd_train_cq(TrainCqArgs a, std::ostream& out) {
  const auto emb = read_embeddings(a.embeddings);
  const auto table = read_table(a.table);
  const auto spec = make_quantizer_spec(parse_mode(a.mode), a.M, a.K, emb.dim);
  a.cfg.finetune.loss = parse_loss(a.loss);
  const auto tokens = select_training_tokens(emb.docs, a.cfg.sample_size, a.cfg.seed);
  std::vector<RankTriple> triples;
  if (a.cfg.finetune.loss != LossKind::MSE && a.cfg.finetune.steps > 0) {
    require(!a.queries.empty() && !a.run.empty(), ErrorCode::BadParam,
            "--queries and --run are required for ranking-loss fine-tuning");
    triples = build_triples(a.queries, a.run, emb.docs);
  }
  TrainLog log;
  const auto params = train_cq(spec, tokens, table, triples, maxsim_teacher(), a.cfg, &log);
  write_model(a.out, params);
  if (!a.log.empty()) {
    std::string text;
    for (std::size_t i = 0; i < log.warmup_loss.size(); ++i) {
      text += "warmup " + std::to_string(i) + " " + format_score(log.warmup_loss[i]) + "\n";
    }
    for (std::size_t i = 0; i < log.finetune_loss.size(); ++i) {
      text += "finetune " + std::to_string(i) + " " + format_score(log.finetune_loss[i]) + "\n";
    }
    write_text(a.log, text);
  }
  out << "tokens=" << tokens.size() << "\n"
      << "triples=" << triples.size() << "\n";
  if (!log.warmup_loss.empty()) {
    out << "warmup_first_loss=" << format_score(log.warmup_loss.front()) << "\n"
        << "warmup_last_loss=" << format_score(log.warmup_loss.back()) << "\n";
  }
  if (!log.finetune_loss.empty()) {
    out << "finetune_first_loss=" << format_score(log.finetune_loss.front()) << "\n"
        << "finetune_last_loss=" << format_score(log.finetune_loss.back()) << "\n";
  }
}

/// A trained quantizer loaded from either a CQNN or a CQBK file.
struct LoadedModel {
  bool neural = false;
  CQParams params;
  CodebookSet codebooks;
  DocIndepTable table;

  const QuantizerSpec& spec() const { return neural ? params.spec : codebooks.spec; }

  Matrix reconstruct(const DocumentCodes& d) const {
    return neural ? reconstruct_document(params, d, table)
                  : reconstruct_baseline_document(codebooks, d);
  }
};

inline LoadedModel load_model(const std::string& model_path, const std::string& table_path) {
  LoadedModel m;
  const auto magic = peek_magic(model_path);
  if (magic == "CQNN") {
    m.neural = true;
    m.params = read_model(model_path);
    require(!table_path.empty(), ErrorCode::BadParam, "--table is required for a CQNN model");
    m.table = read_table(table_path);
    check_dim(m.table.dim(), m.params.spec.D, "document-independent table");
  } else if (magic == "CQBK") {
    m.codebooks = read_codebooks(model_path);
  } else {
    fail(ErrorCode::BadMagic, model_path + " is neither a CQNN nor a CQBK file");
  }
  return m;
}

struct CodecArgs {
  std::string model, table, embeddings, store, out;
  std::size_t threads = 1;
};

inline void cmd_encode(const CodecArgs& a, std::ostream& out) {
  const auto m = load_model(a.model, a.table);
  const auto emb = read_embeddings(a.embeddings);
  check_dim(emb.dim, m.spec().D, "embeddings");
  std::vector<DocumentCodes> docs(emb.docs.size());
  parallel_for(docs.size(), a.threads, [&](std::size_t i) {
    const auto& d = emb.docs[i];
    if (m.neural) {
      docs[i] = quantize_document(m.params, d, m.table);
    } else {
      docs[i].doc_id = d.doc_id;
      docs[i].token_ids = d.token_ids;
      for (std::size_t t = 0; t < d.size(); ++t) {
        docs[i].codes.push_back(encode_baseline(m.codebooks, d.embeddings.row(t)));
      }
    }
  });
  write_store(a.out, m.spec(), docs);
  double err = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const Matrix recon = m.reconstruct(docs[i]);
    err += squared_distance(recon.data, emb.docs[i].embeddings.data);
    tokens += recon.rows;
  }
  out << "docs=" << docs.size() << "\n"
      << "tokens=" << tokens << "\n"
      << "recon_mse=" << fmt("%.9g", tokens ? err / static_cast<double>(tokens) : 0.0) << "\n";
}

inline void cmd_decode(const CodecArgs& a, std::ostream& out) {
  const auto m = load_model(a.model, a.table);
  const auto store = read_store(a.store);
  require(store.spec() == m.spec(), ErrorCode::MismatchedSets,
          "store and model quantizer headers differ");
  std::vector<DocumentTokens> docs(store.size());
  parallel_for(docs.size(), a.threads, [&](std::size_t i) {
    const auto& d = store.docs()[i];
    docs[i].doc_id = d.doc_id;
    docs[i].token_ids = d.token_ids;
    docs[i].embeddings = m.reconstruct(d);
  });
  write_embeddings(a.out, docs, m.spec().D);
  out << "docs=" << docs.size() << "\n";
}

struct RerankArgs {
  std::string model, table, store, queries, candidates, out, tag = "cq";
  std::size_t k = 1000, threads = 1;
};

inline void cmd_rerank(const RerankArgs& a, std::ostream& out) {
  const auto m = load_model(a.model, a.table);
  const auto store = read_store(a.store);
  require(store.spec() == m.spec(), ErrorCode::MismatchedSets,
          "store and model quantizer headers differ");
  const auto queries = read_embeddings(a.queries);
  const auto cands = parse_run(a.candidates);
  std::map<std::uint64_t, std::vector<ScoredDoc>> ranked;
  for (const auto& q : queries.docs) {
    const auto it = cands.find(std::to_string(q.doc_id));
    if (it == cands.end()) continue;
    RerankRequest req;
    req.query = q.embeddings;
    req.k = a.k;
    for (const auto& d : it->second) req.candidates.push_back(parse_id(d.doc_id));
    ranked[q.doc_id] = rerank_with(
        req, store, [&](const DocumentCodes& d) { return m.reconstruct(d); }, a.threads);
  }
  write_run(a.out, to_run(ranked), a.tag);
  out << "queries=" << ranked.size() << "\n";
}

struct EvalArgs {
  std::string run, qrels;
  std::vector<std::string> metrics{"mrr@10"};
};

inline void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto run = parse_run(a.run);
  const auto qrels = parse_qrels(a.qrels);
  std::vector<std::string> skipped;
  for (const auto& metric : a.metrics) {
    double v = 0.0;
    skipped.clear();
    if (metric == "ndcg@10") {
      v = ndcg_at_10(run, qrels, &skipped);
    } else if (metric.rfind("mrr@", 0) == 0) {
      v = mrr_at_k(run, qrels, static_cast<std::size_t>(parse_id(metric.substr(4))), &skipped);
    } else {
      fail(ErrorCode::BadParam, "unknown metric " + metric);
    }
    out << metric << "=" << fmt("%.4f", v) << "\n";
  }
  out << "skipped_queries=" << skipped.size() << "\n";
}

struct SpaceArgs {
  SpaceModel m;
  std::string mode = "product";
  std::size_t h = 0;
};

inline void cmd_space(SpaceArgs a, std::ostream& out) {
  if (a.h == 0) {
    a.m.h = parse_mode(a.mode) == QuantizerMode::Product && a.m.M > 0 ? a.m.D / a.m.M : a.m.D;
  } else {
    a.m.h = a.h;
  }
  const auto r = space_report(a.m);
  out << "codebook_bytes=" << fmt("%.0f", r.codebook_bytes) << "\n"
      << "doc_indep_bytes=" << fmt("%.0f", r.doc_indep_bytes) << "\n"
      << "codes_bytes=" << fmt("%.0f", r.codes_bytes) << "\n"
      << "colbert_bytes=" << fmt("%.0f", r.colbert_baseline_bytes) << "\n"
      << "ratio_colbert_to_cq=" << fmt("%.4f", r.ratio_colbert_to_cq) << "\n"
      << "becr_ratio=" << fmt("%.4f", becr_ratio(a.m.M, a.m.K, a.m.token_id_bytes)) << "\n";
}

struct GradcheckArgs {
  std::uint64_t seed = 7;
  std::size_t M = 2, K = 4, D = 8, batch = 4;
  std::string mode = "product", loss = "mse";
  double step = 1e-3;
  bool position = false;
};

/// Random small model + data; compares analytic MSE and ranking gradients
/// with central differences.
inline GradCheckResult run_gradcheck(const GradcheckArgs& a, LossKind kind) {
  const auto spec = make_quantizer_spec(parse_mode(a.mode), a.M, a.K, a.D);
  SplitMix64 rng = substream(a.seed, 11);
  CQParams params = init_params(spec, a.seed, a.position);

  DocIndepTable table{Matrix(8, a.D)};
  for (double& v : table.rows.data) v = rng.uniform(-0.5, 0.5);
  if (kind == LossKind::MSE) {
    std::vector<TokenSample> batch(a.batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i].token_id = static_cast<TokenId>(rng.index(8));
      batch[i].position = i;
      batch[i].e_t.resize(a.D);
      for (double& v : batch[i].e_t) v = rng.uniform(-0.8, 0.8);
    }
    GumbelConfig g;
    g.seed = a.seed;
    g.hard = false;
    g.noise = true;
    const auto [loss, grads] = backward_mse(params, batch, table, g);
    return compare_with_finite_differences(
        params, grads, [&](const CQParams& p) { return loss_mse(p, batch, table, g); }, a.step);
  }
  auto random_doc = [&](std::size_t n) {
    DocumentCodes d;
    for (std::size_t t = 0; t < n; ++t) {
      d.token_ids.push_back(static_cast<TokenId>(rng.index(8)));
      Code c(spec.M);
      for (auto& e : c) e = static_cast<std::uint32_t>(rng.index(spec.K));
      d.codes.push_back(c);
    }
    return d;
  };
  // MaxSim is only piecewise smooth; resample documents until every query
  // row's best match beats the runner-up by a margin no probe can close.
  auto clear_argmax = [&](const Matrix& q, const DocumentCodes& d) {
    const Matrix r = reconstruct_document(params, d, table);
    for (std::size_t i = 0; i < q.rows; ++i) {
      std::vector<double> s;
      for (std::size_t j = 0; j < r.rows; ++j) s.push_back(dot(q.row(i), r.row(j)));
      std::sort(s.rbegin(), s.rend());
      if (s.size() > 1 && s[0] - s[1] < 0.05) return false;
    }
    return true;
  };
  auto separated_doc = [&](const Matrix& q) {
    for (;;) {
      auto d = random_doc(5);
      if (clear_argmax(q, d)) return d;
    }
  };
  std::vector<PreparedTriple> triples(a.batch);
  for (auto& t : triples) {
    t.query = Matrix(3, a.D);
    for (double& v : t.query.data) v = rng.uniform(-1, 1);
    t.pos = separated_doc(t.query);
    t.neg = separated_doc(t.query);
    t.teacher_pos = rng.uniform(0, 2);
    t.teacher_neg = rng.uniform(0, 2);
  }
  const auto [loss, grads] = backward_ranking(params, triples, table, kind);
  return compare_with_finite_differences(
      params, grads, [&](const CQParams& p) { return ranking_loss(p, triples, table, kind); },
      a.step);
}

inline bool cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<LossKind> kinds;
  if (a.loss == "all") {
    kinds = {LossKind::MSE, LossKind::MarginMSE, LossKind::PairwiseCE};
  } else {
    kinds = {parse_loss(a.loss)};
  }
  double worst = 0.0;
  for (auto kind : kinds) {
    const auto r = run_gradcheck(a, kind);
    out << "max_rel_error." << loss_name(kind) << "=" << fmt("%.3e", r.max_rel_error) << "\n";
    worst = std::max(worst, r.max_rel_error);
  }
  const bool ok = worst < 1e-4;
  out << "max_rel_error=" << fmt("%.3e", worst) << "\n"
      << "pass=" << (ok ? 1 : 0) << "\n";
  return ok;
}

struct FidelityArgs {
  std::string teacher, student, out;
};

inline void cmd_fidelity(const FidelityArgs& a, std::ostream& out) {
  const auto rep = fidelity_report(parse_run(a.teacher), parse_run(a.student));
  if (!a.out.empty()) {
    std::string text = "query\tdoc\tteacher\tstudent\n";
    for (const auto& p : rep.pairs) {
      text += p.query_id + "\t" + p.doc_id + "\t" + format_score(p.teacher) + "\t" +
              format_score(p.student) + "\n";
    }
    write_text(a.out, text);
  }
  for (const auto& [qid, tau] : rep.per_query_tau)
    out << "tau." << qid << "=" << fmt("%.6f", tau) << "\n";
  out << "median_tau=" << fmt("%.6f", rep.median_tau()) << "\n";
}

/// Builds the full command tree. Exposed so tests can snapshot the help.
class App {
 public:
  App() : app_("Contextual quantization toolkit for late-interaction re-ranking", "cq") {
    app_.require_subcommand(1);
    app_.fallthrough(false);

    auto* s =
        app_.add_subcommand("synth", "Generate a synthetic corpus, queries, teacher run and qrels");
    s->add_option("--seed", synth_.cfg.seed, "Random seed")->capture_default_str();
    s->add_option("--V", synth_.cfg.V, "Vocabulary size")->capture_default_str();
    s->add_option("--Z", synth_.cfg.Z, "Number of documents")->capture_default_str();
    s->add_option("--n", synth_.cfg.n, "Tokens per document")->capture_default_str();
    s->add_option("--D", synth_.cfg.D, "Embedding dimension")->capture_default_str();
    s->add_option("--delta-scale", synth_.cfg.delta_scale,
                  "Norm of the document-specific delta relative to the base row")
        ->capture_default_str();
    s->add_option("--clusters", synth_.cfg.cluster_count, "Number of base-embedding clusters")
        ->capture_default_str();
    s->add_option("--queries", synth_.cfg.query_count, "Number of queries")->capture_default_str();
    s->add_option("--query-len", synth_.cfg.l, "Query tokens")->capture_default_str();
    s->add_option("--candidates", synth_.cfg.candidates, "Candidates per query")
        ->capture_default_str();
    s->add_option("--query-noise", synth_.cfg.query_noise, "Per-coordinate query perturbation")
        ->capture_default_str();
    s->add_option("--corpus-out", synth_.corpus_out, "Output CQEM corpus")->required();
    s->add_option("--table-out", synth_.table_out, "Output CQEM document-independent table")
        ->required();
    s->add_option("--queries-out", synth_.queries_out, "Output CQEM query embeddings")->required();
    s->add_option("--run-out", synth_.run_out, "Output teacher run (candidate lists)")->required();
    s->add_option("--qrels-out", synth_.qrels_out, "Output qrels")->required();
    s->callback([this] { action_ = [this](std::ostream& o) { cmd_synth(synth_, o); }; });

    add_baseline("train-pq", "Train a product quantizer with k-means", QuantizerMode::Product);
    add_baseline("train-rq", "Train a residual quantizer with stage-wise k-means",
                 QuantizerMode::Additive);

    auto* t = app_.add_subcommand(
        "train-cq", "Train a contextual quantizer (MSE warm-up, then ranking fine-tune)");
    t->add_option("--embeddings", cq_.embeddings, "CQEM training corpus")->required();
    t->add_option("--table", cq_.table, "CQEM document-independent table")->required();
    t->add_option("--mode", cq_.mode, "Codeword combination")
        ->check(CLI::IsMember({"product", "additive"}))
        ->capture_default_str();
    t->add_option("--M", cq_.M, "Number of codebooks")->capture_default_str();
    t->add_option("--K", cq_.K, "Codewords per codebook")->capture_default_str();
    t->add_option("--seed", cq_.cfg.seed, "Random seed")->capture_default_str();
    t->add_option("--steps", cq_.cfg.warmup.steps, "MSE warm-up steps")->capture_default_str();
    t->add_option("--batch", cq_.cfg.warmup.batch, "Warm-up batch size")->capture_default_str();
    t->add_option("--lr", cq_.cfg.warmup.lr, "Warm-up learning rate")->capture_default_str();
    t->add_option("--sample-size", cq_.cfg.sample_size, "Training tokens drawn from the corpus")
        ->capture_default_str();
    t->add_option("--tau", cq_.cfg.tau, "Gumbel-softmax temperature")->capture_default_str();
    t->add_flag("--position", cq_.cfg.use_position,
                "Feed a sinusoidal position feature to the encoder");
    t->add_option("--loss", cq_.loss, "Fine-tuning loss")
        ->check(CLI::IsMember({"mse", "pairwise-ce", "margin-mse"}))
        ->capture_default_str();
    t->add_option("--finetune-steps", cq_.cfg.finetune.steps, "Ranking-loss fine-tuning steps")
        ->capture_default_str();
    t->add_option("--finetune-lr", cq_.cfg.finetune.lr, "Fine-tuning learning rate")
        ->capture_default_str();
    t->add_option("--pairs", cq_.cfg.finetune.pairs_per_batch,
                  "Training pairs per fine-tuning batch")
        ->capture_default_str();
    t->add_option("--queries", cq_.queries, "CQEM query embeddings for fine-tuning");
    t->add_option("--run", cq_.run, "Teacher run giving candidates for fine-tuning");
    t->add_option("--log", cq_.log, "Optional per-step loss log");
    t->add_option("--out", cq_.out, "Output CQNN model")->required();
    t->callback([this] { action_ = [this](std::ostream& o) { cmd_train_cq(cq_, o); }; });

    auto* e = app_.add_subcommand("encode", "Compress token embeddings into a CQCS code store");
    e->add_option("--model", encode_.model, "CQNN or CQBK model")->required();
    e->add_option("--table", encode_.table, "CQEM document-independent table (CQNN only)");
    e->add_option("--embeddings", encode_.embeddings, "CQEM embeddings to compress")->required();
    e->add_option("--threads", encode_.threads, "Worker threads")->capture_default_str();
    e->add_option("--out", encode_.out, "Output CQCS store")->required();
    e->callback([this] { action_ = [this](std::ostream& o) { cmd_encode(encode_, o); }; });

    auto* d = app_.add_subcommand("decode", "Reconstruct embeddings from a CQCS code store");
    d->add_option("--model", decode_.model, "CQNN or CQBK model")->required();
    d->add_option("--table", decode_.table, "CQEM document-independent table (CQNN only)");
    d->add_option("--store", decode_.store, "CQCS store")->required();
    d->add_option("--threads", decode_.threads, "Worker threads")->capture_default_str();
    d->add_option("--out", decode_.out, "Output CQEM embeddings")->required();
    d->callback([this] { action_ = [this](std::ostream& o) { cmd_decode(decode_, o); }; });

    auto* r = app_.add_subcommand("rerank",
                                  "Re-rank candidates with MaxSim over decompressed embeddings");
    r->add_option("--model", rerank_.model, "CQNN or CQBK model")->required();
    r->add_option("--table", rerank_.table, "CQEM document-independent table (CQNN only)");
    r->add_option("--store", rerank_.store, "CQCS store")->required();
    r->add_option("--queries", rerank_.queries, "CQEM query embeddings")->required();
    r->add_option("--candidates", rerank_.candidates, "Run file listing candidates per query")
        ->required();
    r->add_option("--k", rerank_.k, "Re-rank depth")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    r->add_option("--threads", rerank_.threads, "Worker threads")->capture_default_str();
    r->add_option("--tag", rerank_.tag, "Run tag")->capture_default_str();
    r->add_option("--out", rerank_.out, "Output run")->required();
    r->callback([this] { action_ = [this](std::ostream& o) { cmd_rerank(rerank_, o); }; });

    auto* v = app_.add_subcommand("eval", "Score a run against qrels");
    v->add_option("--run", eval_.run, "Run file")->required();
    v->add_option("--qrels", eval_.qrels, "Qrels file")->required();
    v->add_option("--metric", eval_.metrics, "mrr@K or ndcg@10 (repeatable)")
        ->capture_default_str();
    v->callback([this] { action_ = [this](std::ostream& o) { cmd_eval(eval_, o); }; });

    auto* sp =
        app_.add_subcommand("space-report", "Online space cost of compressed token embeddings");
    sp->add_option("--Z", space_.m.Z, "Number of documents")->required();
    sp->add_option("--n", space_.m.n, "Mean tokens per document")->required();
    sp->add_option("--D", space_.m.D, "Embedding dimension")->required();
    sp->add_option("--M", space_.m.M, "Number of codebooks")->required();
    sp->add_option("--K", space_.m.K, "Codewords per codebook")->required();
    space_.m.V = 32000;
    sp->add_option("--V", space_.m.V, "Vocabulary size")->capture_default_str();
    sp->add_option("--codeword-dim", space_.h,
                   "Codeword dimension (default D/M for product, D for additive)");
    sp->add_option("--mode", space_.mode, "Codeword combination")
        ->check(CLI::IsMember({"product", "additive"}))
        ->capture_default_str();
    sp->add_option("--float-bytes", space_.m.bytes_per_float,
                   "Bytes per float in the uncompressed baseline")
        ->check(CLI::IsMember({2, 4}))
        ->capture_default_str();
    sp->add_option("--id-bytes", space_.m.token_id_bytes, "Bytes per stored token id")
        ->capture_default_str();
    sp->callback([this] { action_ = [this](std::ostream& o) { cmd_space(space_, o); }; });

    auto* g = app_.add_subcommand("gradcheck",
                                  "Compare analytic gradients with central finite differences");
    g->add_option("--seed", grad_.seed, "Random seed")->capture_default_str();
    g->add_option("--M", grad_.M, "Number of codebooks")->capture_default_str();
    g->add_option("--K", grad_.K, "Codewords per codebook")->capture_default_str();
    g->add_option("--D", grad_.D, "Embedding dimension")->capture_default_str();
    g->add_option("--mode", grad_.mode, "Codeword combination")
        ->check(CLI::IsMember({"product", "additive"}))
        ->capture_default_str();
    g->add_option("--loss", grad_.loss, "Loss to differentiate")
        ->check(CLI::IsMember({"mse", "pairwise-ce", "margin-mse", "all"}))
        ->capture_default_str();
    g->add_option("--batch", grad_.batch, "Samples per loss evaluation")->capture_default_str();
    g->add_option("--step", grad_.step, "Finite-difference step")->capture_default_str();
    g->add_flag("--position", grad_.position, "Include the position feature");
    g->callback([this] {
      action_ = [this](std::ostream& o) {
        if (!cmd_gradcheck(grad_, o)) fail(ErrorCode::BadParam, "gradient check failed");
      };
    });

    auto* f =
        app_.add_subcommand("fidelity", "Per-query Kendall tau between teacher and student runs");
    f->add_option("--teacher", fid_.teacher, "Teacher run")->required();
    f->add_option("--student", fid_.student, "Student run")->required();
    f->add_option("--out", fid_.out, "Output TSV of (teacher, student) score pairs");
    f->callback([this] { action_ = [this](std::ostream& o) { cmd_fidelity(fid_, o); }; });
  }

  CLI::App& app() { return app_; }

  /// Exit codes: 0 success, 1 usage error, 2 data error.
  int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    std::reverse(args.begin(), args.end());
    try {
      app_.parse(args);
    } catch (const CLI::ParseError& e) {
      const int rc = app_.exit(e, out, err);
      return rc == 0 ? kOk : kUsageError;
    }
    try {
      action_(out);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kDataError;
    }
    return kOk;
  }

 private:
  void add_baseline(const std::string& name, const std::string& desc, QuantizerMode mode) {
    auto& a = mode == QuantizerMode::Product ? pq_ : rq_;
    auto* b = app_.add_subcommand(name, desc);
    b->add_option("--embeddings", a.embeddings, "CQEM training corpus")->required();
    b->add_option("--M", a.M, "Number of codebooks")->capture_default_str();
    b->add_option("--K", a.K, "Codewords per codebook")->capture_default_str();
    b->add_option("--iters", a.iters, "Lloyd iterations")->capture_default_str();
    b->add_option("--seed", a.seed, "Random seed")->capture_default_str();
    b->add_option("--sample-size", a.sample_size, "Training tokens drawn from the corpus")
        ->capture_default_str();
    b->add_option("--out", a.out, "Output CQBK codebooks")->required();
    b->callback([this, &a, mode] {
      action_ = [&a, mode](std::ostream& o) { cmd_train_baseline(a, mode, o); };
    });
  }

  CLI::App app_;
  std::function<void(std::ostream&)> action_;
  SynthArgs synth_;
  BaselineArgs pq_, rq_;
  TrainCqArgs cq_;
  CodecArgs encode_, decode_;
  RerankArgs rerank_;
  EvalArgs eval_;
  SpaceArgs space_;
  GradcheckArgs grad_;
  FidelityArgs fid_;
};

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  App app;
  return app.run(args, out, err);
}

}  // namespace cq::cli
