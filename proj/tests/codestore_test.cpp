#include "cq/codestore.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace {

using namespace cq;
using cq::testing::random_code;
using cq::testing::random_matrix;
using cq::testing::scratch_dir;

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::BadParam;
}

// Bit-at-a-time reference packer.
std::vector<std::uint8_t> reference_pack(const std::vector<Code>& codes, unsigned bits) {
  std::vector<bool> stream;
  for (const auto& c : codes) {
    for (auto e : c) {
      for (unsigned b = 0; b < bits; ++b) stream.push_back((e >> b) & 1u);
    }
  }
  std::vector<std::uint8_t> out((stream.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (stream[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

TEST(Pack, NibbleLayout) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 4, 16, 8);
  const std::vector<Code> codes{{3, 1, 4, 1}};
  EXPECT_EQ(pack_codes(codes, spec), (std::vector<std::uint8_t>{0x13, 0x14}));
}

TEST(Pack, ByteLayoutForK256) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 3, 256, 3);
  const std::vector<Code> codes{{7, 200, 0}, {255, 1, 2}};
  EXPECT_EQ(pack_codes(codes, spec), (std::vector<std::uint8_t>{7, 200, 0, 255, 1, 2}));
}

TEST(Pack, RoundTripMatchesReference) {
  SplitMix64 rng(1);
  for (std::size_t K : {2, 3, 4, 5, 16, 100, 256}) {
    const auto spec = make_quantizer_spec(QuantizerMode::Additive, 3, K, 4);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<Code> codes(rng.index(12));
      for (auto& c : codes) c = random_code(spec, rng);
      const auto bytes = pack_codes(codes, spec);
      ASSERT_EQ(bytes, reference_pack(codes, spec.bits_per_entry));
      ASSERT_EQ(unpack_codes(bytes, codes.size(), spec), codes);
    }
  }
}

TEST(Pack, PaddingBitsIgnored) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 1, 4, 2);
  auto bytes = pack_codes(std::vector<Code>{{2}}, spec);
  bytes[0] |= 0xF0;
  EXPECT_EQ(unpack_codes(bytes, 1, spec), (std::vector<Code>{{2}}));
}

TEST(Pack, Errors) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 2, 4, 2);
  EXPECT_EQ(code_of([&] { unpack_codes(std::vector<std::uint8_t>{0, 0}, 1, spec); }),
            ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { pack_codes(std::vector<Code>{{4, 0}}, spec); }), ErrorCode::BadCode);
  const auto spec3 = make_quantizer_spec(QuantizerMode::Product, 1, 3, 2);
  EXPECT_EQ(code_of([&] { unpack_codes(std::vector<std::uint8_t>{3}, 1, spec3); }),
            ErrorCode::BadCode);
}

std::vector<DocumentCodes> random_docs(const QuantizerSpec& spec, std::size_t count,
                                       SplitMix64& rng) {
  std::vector<DocumentCodes> docs(count);
  for (std::size_t i = 0; i < count; ++i) {
    docs[i].doc_id = rng.next();
    const std::size_t n = rng.index(20);
    for (std::size_t t = 0; t < n; ++t) {
      docs[i].token_ids.push_back(static_cast<TokenId>(rng.index(65536)));
      docs[i].codes.push_back(random_code(spec, rng));
    }
  }
  return docs;
}

TEST(Store, RoundTripAndSize) {
  SplitMix64 rng(2);
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 4, 16, 8);
  const auto docs = random_docs(spec, 1000, rng);
  const auto path = (scratch_dir("store") / "s.cqcs").string();
  write_store(path, spec, docs);
  const auto store = read_store(path);
  EXPECT_EQ(store.spec(), spec);
  EXPECT_EQ(store.docs(), docs);
  std::vector<std::size_t> lengths;
  for (const auto& d : docs) lengths.push_back(d.codes.size());
  EXPECT_EQ(read_file(path).size(), store_file_size(spec, lengths));
  for (const auto& d : docs) EXPECT_EQ(store.get(d.doc_id), d);
  EXPECT_EQ(code_of([&] { store.get(12345); }), ErrorCode::MissingDoc);
}

TEST(Store, HeaderLayout) {
  const auto spec = make_quantizer_spec(QuantizerMode::Additive, 2, 16, 4);
  DocumentCodes d{0x0102030405060708ULL, {0xABCD}, {{1, 15}}};
  const auto bytes = serialize_store(spec, std::vector<DocumentCodes>{d});
  const std::vector<std::uint8_t> want{'C',  'Q',  'C', 'S', 1, 0, 0, 0,  // magic, version
                                       1,                                 // mode
                                       2,    0,                           // M
                                       16,   0,    0,   0,                // K
                                       4,    0,    0,   0,                // D
                                       1,    0,    0,   0,   0, 0, 0, 0,  // doc count
                                       8,    7,    6,   5,   4, 3, 2, 1,  // doc id
                                       1,    0,    0,   0,                // n
                                       0xCD, 0xAB,                        // token id
                                       0xF1};                             // codes
  EXPECT_EQ(bytes, want);
}

TEST(Store, RejectsCorruption) {
  SplitMix64 rng(3);
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 2, 4, 4);
  const auto bytes = serialize_store(spec, random_docs(spec, 5, rng));
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { parse_store(truncated); }), ErrorCode::CorruptFile);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { parse_store(magic); }), ErrorCode::BadMagic);
  auto version = bytes;
  version[4] = 9;
  EXPECT_EQ(code_of([&] { parse_store(version); }), ErrorCode::VersionMismatch);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(code_of([&] { parse_store(trailing); }), ErrorCode::CorruptFile);
  EXPECT_EQ(code_of([&] { read_store("/nonexistent/dir/x.cqcs"); }), ErrorCode::IoError);
}

TEST(Store, DuplicateIdsRejected) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 1, 2, 1);
  std::vector<DocumentCodes> docs{{1, {}, {}}, {1, {}, {}}};
  EXPECT_THROW(CodeStore(spec, docs), Error);
}

TEST(Embeddings, RoundTripSizeAndCorruption) {
  SplitMix64 rng(4);
  std::vector<DocumentTokens> docs(20);
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    docs[i].doc_id = i * 7;
    const std::size_t n = rng.index(9);
    docs[i].embeddings = random_matrix(n, 6, rng);
    round_to_binary32(docs[i].embeddings.data);
    for (std::size_t t = 0; t < n; ++t) docs[i].token_ids.push_back(static_cast<TokenId>(t));
    lengths.push_back(n);
  }
  const auto bytes = serialize_embeddings(docs, 6);
  EXPECT_EQ(bytes.size(), embeddings_file_size(6, lengths));
  const auto f = parse_embeddings(bytes);
  EXPECT_EQ(f.dim, 6u);
  EXPECT_EQ(f.docs, docs);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_EQ(code_of([&] { parse_embeddings(truncated); }), ErrorCode::CorruptFile);
  auto magic = bytes;
  magic[3] = 'Z';
  EXPECT_EQ(code_of([&] { parse_embeddings(magic); }), ErrorCode::BadMagic);
}

TEST(Embeddings, HugeCountDoesNotAllocate) {
  ByteWriter w;
  w.bytes("CQEM");
  w.u32(kFormatVersion);
  w.u32(4);
  w.u64(1);
  w.u64(0);
  w.u32(0xFFFFFFFFu);
  EXPECT_EQ(code_of([&] { parse_embeddings(w.buffer()); }), ErrorCode::CorruptFile);
}

TEST(Table, RoundTrip) {
  SplitMix64 rng(5);
  DocIndepTable t{random_matrix(30, 4, rng)};
  round_to_binary32(t.rows.data);
  const auto path = (scratch_dir("table") / "t.cqem").string();
  write_table(path, t);
  EXPECT_EQ(read_table(path).rows, t.rows);
}

TEST(Codebooks, RoundTripAndCorruption) {
  SplitMix64 rng(6);
  CodebookSet cb(make_quantizer_spec(QuantizerMode::Product, 4, 8, 16));
  for (auto& b : cb.books) {
    b = random_matrix(8, 4, rng);
    round_to_binary32(b.data);
  }
  const auto bytes = serialize_codebooks(cb);
  EXPECT_EQ(parse_codebooks(bytes), cb);
  EXPECT_EQ(bytes.size(), 4 + 4 + 11 + 4u * 4 * 8 * 4);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { parse_codebooks(truncated); }), ErrorCode::CorruptFile);
  auto magic = bytes;
  magic[2] = 'N';
  EXPECT_EQ(code_of([&] { parse_codebooks(magic); }), ErrorCode::BadMagic);
}

TEST(Model, RoundTripSizeAndCorruption) {
  for (bool pos : {false, true}) {
    auto p = init_params(make_quantizer_spec(QuantizerMode::Additive, 2, 4, 6), 7, pos);
    round_to_binary32(p);
    const auto bytes = serialize_model(p);
    EXPECT_EQ(parse_model(bytes), p);
    EXPECT_EQ(bytes.size(), model_file_size(p));
    std::size_t floats = 0;
    for_each_tensor(p, [&](std::span<const double> t, const char*) { floats += t.size(); });
    EXPECT_EQ(bytes.size(), 4 + 4 + 11 + 1 + 4 * floats);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    EXPECT_EQ(code_of([&] { parse_model(truncated); }), ErrorCode::CorruptFile);
    auto version = bytes;
    version[5] = 1;
    EXPECT_EQ(code_of([&] { parse_model(version); }), ErrorCode::VersionMismatch);
  }
}

TEST(Files, PeekMagic) {
  const auto dir = scratch_dir("peek");
  CodebookSet cb(make_quantizer_spec(QuantizerMode::Product, 1, 2, 1));
  write_codebooks((dir / "a").string(), cb);
  EXPECT_EQ(peek_magic((dir / "a").string()), "CQBK");
}

TEST(Space, PublishedConfiguration) {
  SpaceModel m;
  m.Z = 8.8e6;
  m.n = 67.5;
  m.V = 32000;
  m.D = 128;
  m.M = 16;
  m.K = 256;
  m.h = 8;
  const auto r = space_report(m);
  EXPECT_EQ(r.codebook_bytes, 131072.0);
  EXPECT_EQ(r.doc_indep_bytes, 16384000.0);
  EXPECT_EQ(r.colbert_baseline_bytes, 8.8e6 * 128 * 67.5 * 2);
  EXPECT_NEAR(r.codes_bytes, 1.0692e10, 1e3);
  EXPECT_NEAR(r.ratio_colbert_to_cq, 2048.0 / 144.0, 1e-12);
  EXPECT_NEAR(becr_ratio(16, 256, 2), 1280.0 / 144.0, 1e-12);
  EXPECT_EQ(becr_ratio(16, 16, 2), 16.0);
  EXPECT_EQ(becr_ratio(16, 256, 0), 10.0);
}

TEST(Space, LinearInCorpusSize) {
  SpaceModel m;
  m.Z = 1000;
  m.n = 50;
  m.V = 100;
  m.D = 32;
  m.M = 4;
  m.K = 16;
  m.h = 8;
  const auto a = space_report(m);
  m.Z *= 2;
  EXPECT_EQ(space_report(m).codes_bytes, 2 * a.codes_bytes);
  m.Z /= 2;
  m.n *= 2;
  EXPECT_EQ(space_report(m).codes_bytes, 2 * a.codes_bytes);
}

}  // namespace
