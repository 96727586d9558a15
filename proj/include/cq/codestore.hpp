#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cq/baseline.hpp"
#include "cq/error.hpp"
#include "cq/model.hpp"
#include "cq/types.hpp"

namespace cq {

// ---------------------------------------------------------------------------
// Bit packing

inline std::size_t packed_size(std::size_t count, const QuantizerSpec& spec) {
  return (count * spec.M * spec.bits_per_entry + 7) / 8;
}

/// Entries are written LSB-first, bits_per_entry bits each, entry after
/// entry and code after code. The last byte is zero padded.
inline std::vector<std::uint8_t> pack_codes(std::span<const Code> codes,
                                            const QuantizerSpec& spec) {
  std::vector<std::uint8_t> out(packed_size(codes.size(), spec), 0);
  const unsigned bits = spec.bits_per_entry;
  std::size_t bitpos = 0;
  for (const auto& code : codes) {
    validate_code(code, spec);
    for (std::uint32_t entry : code) {
      std::uint64_t v = entry;
      for (unsigned written = 0; written < bits;) {
        const std::size_t byte = bitpos / 8;
        const unsigned offset = bitpos % 8;
        const unsigned take = std::min(8u - offset, bits - written);
        out[byte] |= static_cast<std::uint8_t>((v & ((1u << take) - 1)) << offset);
        v >>= take;
        written += take;
        bitpos += take;
      }
    }
  }
  return out;
}

inline std::vector<Code> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count,
                                      const QuantizerSpec& spec) {
  if (bytes.size() != packed_size(count, spec))
    fail(ErrorCode::LengthMismatch, "expected " + std::to_string(packed_size(count, spec)) +
                                        " bytes, got " + std::to_string(bytes.size()));
  const unsigned bits = spec.bits_per_entry;
  std::vector<Code> out(count, Code(spec.M));
  std::size_t bitpos = 0;
  for (auto& code : out) {
    for (auto& entry : code) {
      std::uint64_t v = 0;
      for (unsigned read = 0; read < bits;) {
        const std::size_t byte = bitpos / 8;
        const unsigned offset = bitpos % 8;
        const unsigned take = std::min(8u - offset, bits - read);
        v |= static_cast<std::uint64_t>((bytes[byte] >> offset) & ((1u << take) - 1)) << read;
        read += take;
        bitpos += take;
      }
      entry = static_cast<std::uint32_t>(v);
    }
  }
  for (const auto& code : out) validate_code(code, spec);
  return out;
}

// ---------------------------------------------------------------------------
// Little-endian byte streams

inline constexpr std::uint32_t kFormatVersion = 1;

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
      fail(ErrorCode::BadMagic, "expected magic " + std::string(magic));
    pos_ += magic.size();
  }
  void expect_version() {
    const auto v = u32();
    if (v != kFormatVersion)
      fail(ErrorCode::VersionMismatch, "format version " + std::to_string(v) +
                                           ", reader supports " + std::to_string(kFormatVersion));
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void ensure(std::size_t n) const { need(n); }
  void expect_end() const {
    if (pos_ != data_.size())
      fail(ErrorCode::CorruptFile, std::to_string(data_.size() - pos_) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      fail(ErrorCode::CorruptFile, "truncated file at byte offset " + std::to_string(pos_));
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

inline void write_spec(ByteWriter& w, const QuantizerSpec& spec) {
  require(spec.M <= 0xFFFF, ErrorCode::BadParam, "M does not fit in u16");
  w.u8(static_cast<std::uint8_t>(spec.mode));
  w.u16(static_cast<std::uint16_t>(spec.M));
  w.u32(static_cast<std::uint32_t>(spec.K));
  w.u32(static_cast<std::uint32_t>(spec.D));
}

inline QuantizerSpec read_spec(ByteReader& r) {
  const auto mode = r.u8();
  if (mode > 1) fail(ErrorCode::CorruptFile, "unknown quantizer mode " + std::to_string(mode));
  const std::size_t M = r.u16();
  const std::size_t K = r.u32();
  const std::size_t D = r.u32();
  try {
    return make_quantizer_spec(static_cast<QuantizerMode>(mode), M, K, D);
  } catch (const Error& e) {
    fail(ErrorCode::CorruptFile, std::string("invalid quantizer header: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CQCS: compressed document store

/// Immutable collection of compressed documents with random access by id.
class CodeStore {
 public:
  CodeStore() = default;
  CodeStore(const QuantizerSpec& spec, std::vector<DocumentCodes> docs)
      : spec_(spec), docs_(std::move(docs)) {
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      const auto& d = docs_[i];
      if (d.codes.size() != d.token_ids.size())
        fail(ErrorCode::BadCode, "doc " + std::to_string(d.doc_id) + ": code count != token count");
      for (const auto& c : d.codes) validate_code(c, spec_);
      if (!index_.emplace(d.doc_id, i).second)
        fail(ErrorCode::BadParam, "duplicate doc id " + std::to_string(d.doc_id));
    }
  }

  const QuantizerSpec& spec() const { return spec_; }
  const std::vector<DocumentCodes>& docs() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool contains(std::uint64_t doc_id) const { return index_.count(doc_id) != 0; }

  const DocumentCodes& get(std::uint64_t doc_id) const {
    const auto it = index_.find(doc_id);
    if (it == index_.end())
      fail(ErrorCode::MissingDoc, "doc " + std::to_string(doc_id) + " not in store");
    return docs_[it->second];
  }

 private:
  QuantizerSpec spec_;
  std::vector<DocumentCodes> docs_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// magic "CQCS" | version u32 | mode u8 | M u16 | K u32 | D u32 | docs u64,
/// then per doc: doc_id u64 | n u32 | token ids u16[n] | packed codes.
inline std::vector<std::uint8_t> serialize_store(const QuantizerSpec& spec,
                                                 std::span<const DocumentCodes> docs) {
  ByteWriter w;
  w.bytes("CQCS");
  w.u32(kFormatVersion);
  write_spec(w, spec);
  w.u64(docs.size());
  for (const auto& d : docs) {
    if (d.codes.size() != d.token_ids.size())
      fail(ErrorCode::BadCode, "doc " + std::to_string(d.doc_id) + ": code count != token count");
    w.u64(d.doc_id);
    w.u32(static_cast<std::uint32_t>(d.token_ids.size()));
    for (auto t : d.token_ids) w.u16(t);
    w.raw(pack_codes(d.codes, spec));
  }
  return w.buffer();
}

inline void write_store(const std::string& path, const QuantizerSpec& spec,
                        std::span<const DocumentCodes> docs) {
  write_file(path, serialize_store(spec, docs));
}

inline CodeStore parse_store(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CQCS");
  r.expect_version();
  const auto spec = read_spec(r);
  const auto count = r.u64();
  std::vector<DocumentCodes> docs;
  for (std::uint64_t i = 0; i < count; ++i) {
    DocumentCodes d;
    d.doc_id = r.u64();
    const std::size_t n = r.u32();
    const auto ids = r.raw(2 * n);
    d.token_ids.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      d.token_ids[t] = static_cast<TokenId>(ids[2 * t] | (ids[2 * t + 1] << 8));
    }
    try {
      d.codes = unpack_codes(r.raw(packed_size(n, spec)), n, spec);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::CorruptFile) throw;
      fail(ErrorCode::CorruptFile, std::string("bad code payload: ") + e.what());
    }
    docs.push_back(std::move(d));
  }
  r.expect_end();
  return CodeStore(spec, std::move(docs));
}

inline CodeStore read_store(const std::string& path) { return parse_store(read_file(path)); }

inline std::size_t store_file_size(const QuantizerSpec& spec,
                                   std::span<const std::size_t> doc_lengths) {
  std::size_t total = 4 + 4 + 1 + 2 + 4 + 4 + 8;
  for (auto n : doc_lengths) total += 8 + 4 + 2 * n + packed_size(n, spec);
  return total;
}

// ---------------------------------------------------------------------------
// CQEM: token embeddings

/// magic "CQEM" | version u32 | D u32 | docs u64, then per doc:
/// doc_id u64 | n u32 | token ids u16[n] | f32[n*D] row-major.
inline std::vector<std::uint8_t> serialize_embeddings(std::span<const DocumentTokens> docs,
                                                      std::size_t D) {
  ByteWriter w;
  w.bytes("CQEM");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(D));
  w.u64(docs.size());
  for (const auto& d : docs) {
    if (d.embeddings.rows != d.token_ids.size())
      fail(ErrorCode::DimMismatch,
           "doc " + std::to_string(d.doc_id) + ": token ids and rows disagree");
    if (d.embeddings.rows > 0) check_dim(d.embeddings.cols, D, "embedding rows");
    w.u64(d.doc_id);
    w.u32(static_cast<std::uint32_t>(d.token_ids.size()));
    for (auto t : d.token_ids) w.u16(t);
    for (double v : d.embeddings.data) w.f32(v);
  }
  return w.buffer();
}

inline void write_embeddings(const std::string& path, std::span<const DocumentTokens> docs,
                             std::size_t D) {
  write_file(path, serialize_embeddings(docs, D));
}

struct EmbeddingFile {
  std::size_t dim = 0;
  std::vector<DocumentTokens> docs;

  /// All rows stacked in document order.
  Matrix stacked() const {
    Matrix out(0, dim);
    for (const auto& d : docs) {
      out.data.insert(out.data.end(), d.embeddings.data.begin(), d.embeddings.data.end());
      out.rows += d.embeddings.rows;
    }
    return out;
  }
};

inline EmbeddingFile parse_embeddings(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CQEM");
  r.expect_version();
  EmbeddingFile f;
  f.dim = r.u32();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    DocumentTokens d;
    d.doc_id = r.u64();
    const std::size_t n = r.u32();
    r.ensure(n * (2 + 4 * f.dim));
    d.token_ids.resize(n);
    for (auto& t : d.token_ids) t = r.u16();
    d.embeddings = Matrix(n, f.dim);
    for (double& v : d.embeddings.data) v = r.f32();
    check_finite(d.embeddings.data, "embedding file");
    f.docs.push_back(std::move(d));
  }
  r.expect_end();
  return f;
}

inline EmbeddingFile read_embeddings(const std::string& path) {
  return parse_embeddings(read_file(path));
}

inline std::size_t embeddings_file_size(std::size_t D, std::span<const std::size_t> doc_lengths) {
  std::size_t total = 4 + 4 + 4 + 8;
  for (auto n : doc_lengths) total += 8 + 4 + 2 * n + 4 * n * D;
  return total;
}

/// The document-independent table is stored as a one-document CQEM file
/// whose token ids are 0..V-1 in order.
inline void write_table(const std::string& path, const DocIndepTable& table) {
  DocumentTokens d;
  d.doc_id = 0;
  d.token_ids.resize(table.vocab_size());
  for (std::size_t i = 0; i < d.token_ids.size(); ++i) d.token_ids[i] = static_cast<TokenId>(i);
  d.embeddings = table.rows;
  write_embeddings(path, std::span(&d, 1), table.dim());
}

inline DocIndepTable read_table(const std::string& path) {
  auto f = read_embeddings(path);
  require(f.docs.size() == 1, ErrorCode::CorruptFile, "table file must hold exactly one document");
  const auto& d = f.docs[0];
  for (std::size_t i = 0; i < d.token_ids.size(); ++i) {
    require(d.token_ids[i] == i, ErrorCode::CorruptFile, "table token ids must be 0..V-1");
  }
  return DocIndepTable{d.embeddings};
}

// ---------------------------------------------------------------------------
// CQBK / CQNN: codebooks and full model parameters

/// magic "CQBK" | version u32 | mode u8 | M u16 | K u32 | D u32 |
/// f32 codebooks, book-major then row-major (M x K x h).
inline std::vector<std::uint8_t> serialize_codebooks(const CodebookSet& cb) {
  ByteWriter w;
  w.bytes("CQBK");
  w.u32(kFormatVersion);
  write_spec(w, cb.spec);
  for (const auto& book : cb.books) {
    for (double v : book.data) w.f32(v);
  }
  return w.buffer();
}

inline CodebookSet parse_codebooks(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CQBK");
  r.expect_version();
  CodebookSet cb(read_spec(r));
  for (auto& book : cb.books) {
    for (double& v : book.data) v = r.f32();
    check_finite(book.data, "codebook file");
  }
  r.expect_end();
  return cb;
}

inline void write_codebooks(const std::string& path, const CodebookSet& cb) {
  write_file(path, serialize_codebooks(cb));
}

inline CodebookSet read_codebooks(const std::string& path) {
  return parse_codebooks(read_file(path));
}

/// magic "CQNN" | version u32 | mode u8 | M u16 | K u32 | D u32 |
/// use_position u8 | f32 tensors w0, b0, w1, b1, w2, b2, codebooks (row-major).
inline std::vector<std::uint8_t> serialize_model(const CQParams& params) {
  ByteWriter w;
  w.bytes("CQNN");
  w.u32(kFormatVersion);
  write_spec(w, params.spec);
  w.u8(params.use_position ? 1 : 0);
  for_each_tensor(params, [&](std::span<const double> t, const char*) {
    for (double v : t) w.f32(v);
  });
  return w.buffer();
}

inline CQParams parse_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CQNN");
  r.expect_version();
  const auto spec = read_spec(r);
  const auto pos = r.u8();
  require(pos <= 1, ErrorCode::CorruptFile, "bad position flag");
  require((spec.M * spec.K) % 2 == 0, ErrorCode::CorruptFile, "M*K must be even");
  CQParams p = zero_params(spec, pos == 1);
  for_each_tensor(p, [&](std::span<double> t, const char* name) {
    for (double& v : t) v = r.f32();
    check_finite(t, name);
  });
  r.expect_end();
  return p;
}

inline void write_model(const std::string& path, const CQParams& params) {
  write_file(path, serialize_model(params));
}

inline CQParams read_model(const std::string& path) { return parse_model(read_file(path)); }

inline std::size_t model_file_size(const CQParams& p) {
  std::size_t floats = 0;
  for_each_tensor(p, [&](std::span<const double> t, const char*) { floats += t.size(); });
  return 4 + 4 + 1 + 2 + 4 + 4 + 1 + 4 * floats;
}

/// Magic of a file on disk, or empty if it is shorter than four bytes.
inline std::string peek_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::array<char, 4> m{};
  in.read(m.data(), 4);
  if (in.gcount() != 4) return {};
  return std::string(m.data(), 4);
}

// ---------------------------------------------------------------------------
// Space accounting

struct SpaceModel {
  double Z = 0;  // documents
  double n = 0;  // mean tokens per document
  std::size_t V = 0;
  std::size_t D = 0;
  std::size_t M = 0;
  std::size_t K = 0;
  std::size_t h = 0;
  unsigned bytes_per_float = 2;
  unsigned token_id_bytes = 2;
};

struct SpaceReport {
  double codebook_bytes = 0;
  double doc_indep_bytes = 0;
  double codes_bytes = 0;
  double colbert_baseline_bytes = 0;
  double ratio_colbert_to_cq = 0;
};

inline SpaceReport space_report(const SpaceModel& m) {
  require(m.Z > 0 && m.n > 0 && m.V > 0 && m.D > 0 && m.M > 0 && m.h > 0, ErrorCode::BadParam,
          "space model fields must be positive");
  require(m.K >= 2, ErrorCode::BadParam, "K must be at least 2");
  require(m.bytes_per_float == 2 || m.bytes_per_float == 4, ErrorCode::BadParam,
          "bytes per float must be 2 or 4");
  const double log2k = std::log2(static_cast<double>(m.K));
  const double M = static_cast<double>(m.M);
  const double D = static_cast<double>(m.D);
  const double ids = static_cast<double>(m.token_id_bytes);
  const double bpf = static_cast<double>(m.bytes_per_float);
  SpaceReport r;
  r.codebook_bytes = M * static_cast<double>(m.K) * static_cast<double>(m.h) * 4.0;
  r.doc_indep_bytes = static_cast<double>(m.V) * D * 4.0;
  r.codes_bytes = m.Z * m.n * (M * log2k / 8.0 + ids);
  r.colbert_baseline_bytes = m.Z * D * m.n * bpf;
  r.ratio_colbert_to_cq = (bpf * D * 8.0) / (M * log2k + 8.0 * ids);
  return r;
}

/// Space of five 256-bit LSH signatures per token relative to one CQ code
/// plus its token id.
inline double becr_ratio(std::size_t M, std::size_t K, unsigned token_id_bytes) {
  require(M > 0 && K >= 2, ErrorCode::BadParam, "M must be positive and K at least 2");
  return (5.0 * 256.0) /
         (static_cast<double>(M) * std::log2(static_cast<double>(K)) + 8.0 * token_id_bytes);
}

}  // namespace cq
