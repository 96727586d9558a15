#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cq/error.hpp"

namespace cq {

enum class QuantizerMode : std::uint8_t { Product = 0, Additive = 1 };

inline std::string mode_name(QuantizerMode mode) {
  return mode == QuantizerMode::Product ? "product" : "additive";
}

/// Shape of a codebook quantizer: M books of K codewords, each h wide,
/// reconstructing D-dimensional vectors. Product mode slices D into M
/// chunks (h = D / M); additive mode sums M full-width codewords (h = D).
struct QuantizerSpec {
  QuantizerMode mode = QuantizerMode::Product;
  std::size_t M = 1;
  std::size_t K = 2;
  std::size_t D = 1;
  std::size_t h = 1;
  unsigned bits_per_entry = 1;

  bool operator==(const QuantizerSpec&) const = default;
};

/// Smallest b with 2^b >= K.
inline unsigned bits_for(std::size_t K) {
  unsigned b = 0;
  while ((std::size_t{1} << b) < K) ++b;
  return b;
}

inline QuantizerSpec make_quantizer_spec(QuantizerMode mode, std::size_t M, std::size_t K,
                                         std::size_t D) {
  require(M >= 1 && D >= 1, ErrorCode::BadParam, "M and D must be positive");
  if (K < 2) fail(ErrorCode::BadParam, "K must be at least 2, got " + std::to_string(K));
  require(K <= (std::size_t{1} << 32), ErrorCode::BadParam, "K exceeds 2^32");
  if (mode == QuantizerMode::Product) {
    if (D % M != 0)
      fail(ErrorCode::NonDivisible,
           "D=" + std::to_string(D) + " is not divisible by M=" + std::to_string(M));
  }
  QuantizerSpec spec;
  spec.mode = mode;
  spec.M = M;
  spec.K = K;
  spec.D = D;
  spec.h = mode == QuantizerMode::Product ? D / M : D;
  spec.bits_per_entry = bits_for(K);
  return spec;
}

using Vector = std::vector<double>;
using EmbeddingVector = Vector;

/// Dense row-major matrix. Embeddings are binary32 on disk but held as
/// doubles in memory.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void append_row(std::span<const double> values) {
    if ((rows != 0 || cols != 0) && values.size() != cols)
      fail(ErrorCode::DimMismatch,
           "row width " + std::to_string(values.size()) + " != " + std::to_string(cols));
    if (rows == 0 && cols == 0) cols = values.size();
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }

  bool operator==(const Matrix&) const = default;
};

using EmbeddingMatrix = Matrix;

using TokenId = std::uint16_t;

/// One document: its token ids and one embedding row per token.
struct DocumentTokens {
  std::uint64_t doc_id = 0;
  std::vector<TokenId> token_ids;
  EmbeddingMatrix embeddings;

  std::size_t size() const { return token_ids.size(); }
  bool operator==(const DocumentTokens&) const = default;
};

/// M code entries, each in [0, K). Stored 0-based.
using Code = std::vector<std::uint32_t>;

inline void validate_code(const Code& code, const QuantizerSpec& spec) {
  if (code.size() != spec.M)
    fail(ErrorCode::BadCode,
         "code length " + std::to_string(code.size()) + " != M=" + std::to_string(spec.M));
  for (auto entry : code) {
    if (entry >= spec.K)
      fail(ErrorCode::BadCode,
           "code entry " + std::to_string(entry) + " >= K=" + std::to_string(spec.K));
  }
}

/// 1-based rendering, e.g. "[4,4,3,1]".
inline std::string render_code(const Code& code) {
  std::string out = "[";
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(code[i] + 1);
  }
  return out + "]";
}

/// Compressed form of one document: token ids (to look up the
/// document-independent rows) plus one code per token.
struct DocumentCodes {
  std::uint64_t doc_id = 0;
  std::vector<TokenId> token_ids;
  std::vector<Code> codes;

  bool operator==(const DocumentCodes&) const = default;
};

inline void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v))
      fail(ErrorCode::NonFinite, std::string(what) + " has a non-finite entry");
  }
}

inline void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    fail(ErrorCode::DimMismatch,
         std::string(what) + ": dimension " + std::to_string(got) + " != " + std::to_string(want));
}

/// Rounds every entry to the nearest binary32 value so in-memory state
/// matches what the file formats persist.
inline void round_to_binary32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace cq
