#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cq/error.hpp"

namespace cq {

struct RankedDoc {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const RankedDoc&) const = default;
};

/// Per-query ranked lists, best first. Query order is lexicographic.
using Run = std::map<std::string, std::vector<RankedDoc>>;

/// (query, doc) -> graded relevance.
using Qrels = std::map<std::string, std::map<std::string, int>>;

inline void check_unit_range(double v, double lo, const char* what) {
  if (!(v >= lo - 1e-12 && v <= 1.0 + 1e-12))
    fail(ErrorCode::BadParam, std::string(what) + " out of range: " + std::to_string(v));
}

/// Queries of `run` that have judgments; the rest go to `skipped`.
inline std::vector<std::string> judged_queries(const Run& run, const Qrels& qrels,
                                               std::vector<std::string>* skipped) {
  require(!run.empty(), ErrorCode::EmptyRun, "run has no queries");
  std::vector<std::string> out;
  for (const auto& [qid, _] : run) {
    if (qrels.count(qid)) {
      out.push_back(qid);
    } else if (skipped) {
      skipped->push_back(qid);
    }
  }
  require(!out.empty(), ErrorCode::EmptyRun, "no run query has judgments");
  return out;
}

inline int grade_of(const Qrels& qrels, const std::string& qid, const std::string& doc) {
  const auto q = qrels.find(qid);
  if (q == qrels.end()) return 0;
  const auto d = q->second.find(doc);
  return d == q->second.end() ? 0 : d->second;
}

/// Mean reciprocal rank of the first document with grade >= 1 in the top k.
inline double mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k,
                       std::vector<std::string>* skipped = nullptr) {
  require(k >= 1, ErrorCode::BadParam, "cutoff must be at least 1");
  const auto queries = judged_queries(run, qrels, skipped);
  double sum = 0.0;
  for (const auto& qid : queries) {
    const auto& docs = run.at(qid);
    for (std::size_t r = 0; r < std::min(k, docs.size()); ++r) {
      if (grade_of(qrels, qid, docs[r].doc_id) >= 1) {
        sum += 1.0 / static_cast<double>(r + 1);
        break;
      }
    }
  }
  const double v = sum / static_cast<double>(queries.size());
  check_unit_range(v, 0.0, "MRR");
  return v;
}

/// NDCG@10 with exponential gain (2^g - 1) / log2(rank + 1). Queries whose
/// judgments are all zero contribute 0.
inline double ndcg_at_10(const Run& run, const Qrels& qrels,
                         std::vector<std::string>* skipped = nullptr) {
  constexpr std::size_t kDepth = 10;
  const auto queries = judged_queries(run, qrels, skipped);
  double sum = 0.0;
  for (const auto& qid : queries) {
    const auto& docs = run.at(qid);
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(kDepth, docs.size()); ++r) {
      const int g = grade_of(qrels, qid, docs[r].doc_id);
      dcg += (std::pow(2.0, g) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
    }
    std::vector<int> grades;
    for (const auto& [_, g] : qrels.at(qid)) grades.push_back(g);
    std::sort(grades.rbegin(), grades.rend());
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(kDepth, grades.size()); ++r) {
      idcg += (std::pow(2.0, grades[r]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
    }
    if (idcg > 0.0) sum += dcg / idcg;
  }
  const double v = sum / static_cast<double>(queries.size());
  check_unit_range(v, 0.0, "NDCG");
  return v;
}

/// Kendall's tau-a between two orderings of the same item set, counted with
/// a merge sort in O(N log N).
template <typename Id>
double kendall_tau(const std::vector<Id>& a, const std::vector<Id>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::NotPermutation,
          "rankings must have equal length >= 2");
  std::map<Id, std::size_t> pos;
  for (std::size_t i = 0; i < b.size(); ++i) {
    require(pos.emplace(b[i], i).second, ErrorCode::NotPermutation, "duplicate id in ranking");
  }
  std::vector<std::size_t> seq(a.size());
  std::set<Id> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto it = pos.find(a[i]);
    require(it != pos.end() && seen.insert(a[i]).second, ErrorCode::NotPermutation,
            "rankings are not permutations of one another");
    seq[i] = it->second;
  }
  // Count inversions (discordant pairs).
  std::vector<std::size_t> tmp(seq.size());
  std::size_t inversions = 0;
  for (std::size_t width = 1; width < seq.size(); width *= 2) {
    for (std::size_t lo = 0; lo < seq.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, seq.size());
      const std::size_t hi = std::min(lo + 2 * width, seq.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (seq[i] <= seq[j]) {
          tmp[k++] = seq[i++];
        } else {
          inversions += mid - i;
          tmp[k++] = seq[j++];
        }
      }
      while (i < mid) tmp[k++] = seq[i++];
      while (j < hi) tmp[k++] = seq[j++];
    }
    seq.swap(tmp);
  }
  const double n = static_cast<double>(a.size());
  const double pairs = n * (n - 1.0) / 2.0;
  const double tau = (pairs - 2.0 * static_cast<double>(inversions)) / pairs;
  require(tau >= -1.0 - 1e-12 && tau <= 1.0 + 1e-12, ErrorCode::BadParam, "tau out of range");
  return tau;
}

// ---------------------------------------------------------------------------
// TREC text formats

inline std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// "qid Q0 docid rank score tag", one line per document, ranks from 1.
inline std::string serialize_run(const Run& run, const std::string& tag) {
  std::string out;
  for (const auto& [qid, docs] : run) {
    for (std::size_t r = 0; r < docs.size(); ++r) {
      out += qid + " Q0 " + docs[r].doc_id + " " + std::to_string(r + 1) + " " +
             format_score(docs[r].score) + " " + tag + "\n";
    }
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot create " + path);
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_run(const std::string& path, const Run& run, const std::string& tag) {
  write_text(path, serialize_run(run, tag));
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad number '" + s + "'");
}

inline int parse_int(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad integer '" + s + "'");
}

}  // namespace detail

/// Parses a run. The rank column is ignored: documents are ordered by score
/// (descending), ties keep file order. Blank lines are skipped.
inline Run parse_run_text(const std::string& text) {
  Run run;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::set<std::string>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 6)
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 6 fields, got " +
                                      std::to_string(f.size()));
    detail::parse_int(f[3], line_no);
    const double score = detail::parse_double(f[4], line_no);
    if (!seen[f[0]].insert(f[2]).second)
      fail(ErrorCode::ParseError,
           "line " + std::to_string(line_no) + ": duplicate document " + f[2]);
    run[f[0]].push_back({f[2], score});
  }
  for (auto& [_, docs] : run) {
    std::stable_sort(docs.begin(), docs.end(),
                     [](const RankedDoc& a, const RankedDoc& b) { return a.score > b.score; });
  }
  return run;
}

inline Run parse_run(const std::string& path) { return parse_run_text(read_text(path)); }

/// "qid 0 docid grade" per line.
inline Qrels parse_qrels_text(const std::string& text) {
  Qrels qrels;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 4)
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                      std::to_string(f.size()));
    const int grade = detail::parse_int(f[3], line_no);
    if (grade < 0)
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": negative grade");
    qrels[f[0]][f[2]] = grade;
  }
  return qrels;
}

inline Qrels parse_qrels(const std::string& path) { return parse_qrels_text(read_text(path)); }

inline std::string serialize_qrels(const Qrels& qrels) {
  std::string out;
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [doc, g] : docs) out += qid + " 0 " + doc + " " + std::to_string(g) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher vs student fidelity

struct ScorePair {
  std::string query_id;
  std::string doc_id;
  double teacher = 0.0;
  double student = 0.0;
};

struct FidelityReport {
  std::vector<std::pair<std::string, double>> per_query_tau;
  std::vector<ScorePair> pairs;

  double median_tau() const {
    require(!per_query_tau.empty(), ErrorCode::EmptyRun, "no queries in fidelity report");
    std::vector<double> t;
    for (const auto& [_, v] : per_query_tau) t.push_back(v);
    std::sort(t.begin(), t.end());
    const std::size_t n = t.size();
    return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
  }
};

inline std::vector<std::string> ranked_ids(const std::vector<RankedDoc>& docs) {
  std::vector<std::string> out;
  for (const auto& d : docs) out.push_back(d.doc_id);
  return out;
}

/// Kendall tau per query between the two orderings, plus the (teacher,
/// student) score pairs for scatter plots. Both runs must rank the same
/// documents for the same queries.
inline FidelityReport fidelity_report(const Run& teacher, const Run& student) {
  require(!teacher.empty(), ErrorCode::EmptyRun, "teacher run is empty");
  require(teacher.size() == student.size(), ErrorCode::MismatchedSets,
          "runs cover different query sets");
  FidelityReport rep;
  for (const auto& [qid, tdocs] : teacher) {
    const auto it = student.find(qid);
    if (it == student.end())
      fail(ErrorCode::MismatchedSets, "query " + qid + " missing in student");
    const auto& sdocs = it->second;
    std::unordered_map<std::string, double> sscore;
    for (const auto& d : sdocs) sscore[d.doc_id] = d.score;
    if (sscore.size() != tdocs.size())
      fail(ErrorCode::MismatchedSets, "query " + qid + ": runs rank different documents");
    for (const auto& d : tdocs) {
      const auto s = sscore.find(d.doc_id);
      if (s == sscore.end())
        fail(ErrorCode::MismatchedSets,
             "query " + qid + ": doc " + d.doc_id + " missing in student");
      rep.pairs.push_back({qid, d.doc_id, d.score, s->second});
    }
    if (tdocs.size() >= 2) {
      rep.per_query_tau.emplace_back(qid, kendall_tau(ranked_ids(tdocs), ranked_ids(sdocs)));
    } else {
      rep.per_query_tau.emplace_back(qid, 1.0);
    }
  }
  return rep;
}

}  // namespace cq
