#include "cq/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace {

using namespace cq;
using cq::testing::random_matrix;

const QuantizerSpec kSpec = make_quantizer_spec(QuantizerMode::Product, 2, 4, 4);

DocIndepTable random_table(std::size_t V, std::size_t D, SplitMix64& rng) {
  return DocIndepTable{random_matrix(V, D, rng, -0.5, 0.5)};
}

TEST(Params, Shapes) {
  const auto p = init_params(make_quantizer_spec(QuantizerMode::Product, 4, 8, 16), 1);
  EXPECT_EQ(p.hidden(), 16u);
  EXPECT_EQ(p.w0.rows, 16u);
  EXPECT_EQ(p.w0.cols, 32u);
  EXPECT_EQ(p.w1.rows, 32u);
  EXPECT_EQ(p.w1.cols, 16u);
  EXPECT_EQ(p.b1.size(), 32u);
  EXPECT_EQ(p.w2.rows, 16u);
  EXPECT_EQ(p.w2.cols, 32u);
  EXPECT_EQ(p.codebooks.books.size(), 4u);
  EXPECT_EQ(p.codebooks.books[0].cols, 4u);
  const auto q = init_params(make_quantizer_spec(QuantizerMode::Product, 4, 8, 16), 1, true);
  EXPECT_EQ(q.w0.cols, 48u);
}

TEST(Params, OddMKRejected) {
  EXPECT_THROW(zero_params(make_quantizer_spec(QuantizerMode::Product, 1, 3, 4)), Error);
}

TEST(Params, InitWithinXavierBoundAndSeeded) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 4, 8, 16);
  const auto p = init_params(spec, 7);
  const double r0 = std::sqrt(6.0 / (32 + 16));
  for (double v : p.w0.data) EXPECT_LE(std::abs(v), r0);
  for (double v : p.b0) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p, init_params(spec, 7));
  EXPECT_NE(p, init_params(spec, 8));
}

TEST(Encoder, SymmetricZeroNetwork) {
  const auto p = zero_params(kSpec);
  const Vector e(4, 0.3), eb(4, -0.2);
  const auto t = encoder_forward(p, e, eb, inference_gumbel());
  for (double v : t.h) EXPECT_EQ(v, 0.0);
  for (double v : t.a.data) EXPECT_NEAR(v, std::log(2.0), 1e-15);
  for (double v : t.p.data) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_EQ(t.code, (Code{0, 0}));
}

TEST(Encoder, GumbelFixedPoint) {
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
}

double softplus_inverse(double a) { return std::log(std::expm1(a)); }

TEST(Encoder, DistributionIsNormalizedActivation) {
  auto p = zero_params(kSpec);
  const double a[4] = {1, 2, 4, 1};
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t j = 0; j < 4; ++j) p.b1[m * 4 + j] = softplus_inverse(a[j]);
  }
  const auto t = encoder_forward(p, Vector(4, 0.1), Vector(4, 0.2), inference_gumbel());
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_NEAR(t.p(m, 0), 0.125, 1e-12);
    EXPECT_NEAR(t.p(m, 1), 0.25, 1e-12);
    EXPECT_NEAR(t.p(m, 2), 0.5, 1e-12);
    EXPECT_NEAR(t.p(m, 3), 0.125, 1e-12);
  }
  EXPECT_EQ(t.code, (Code{2, 2}));
}

TEST(Encoder, TemperatureSharpens) {
  auto p = zero_params(kSpec);
  for (std::size_t j = 0; j < 8; ++j) p.b1[j] = 0.1 * static_cast<double>(j % 4);
  GumbelConfig cold;
  cold.tau = 0.1;
  const auto warm = encoder_forward(p, Vector(4, 0.0), Vector(4, 0.0), inference_gumbel());
  const auto sharp = encoder_forward(p, Vector(4, 0.0), Vector(4, 0.0), cold);
  EXPECT_GT(sharp.p(0, 3), warm.p(0, 3));
  EXPECT_EQ(sharp.code, warm.code);
}

TEST(Encoder, NoiseIsSeededPerStream) {
  SplitMix64 rng(3);
  const auto p = init_params(kSpec, 3);
  const auto e = random_matrix(1, 4, rng), eb = random_matrix(1, 4, rng);
  GumbelConfig g;
  g.noise = true;
  g.seed = 17;
  const auto a = encoder_forward(p, e.row(0), eb.row(0), g, 5);
  const auto b = encoder_forward(p, e.row(0), eb.row(0), g, 5);
  const auto c = encoder_forward(p, e.row(0), eb.row(0), g, 6);
  EXPECT_EQ(a.p, b.p);
  EXPECT_NE(a.p, c.p);
}

TEST(Encoder, DimensionChecked) {
  const auto p = zero_params(kSpec);
  EXPECT_THROW(encoder_forward(p, Vector(3, 0.0), Vector(4, 0.0), inference_gumbel()), Error);
}

TEST(Decode, SharedCodebookSemantics) {
  auto p = zero_params(make_quantizer_spec(QuantizerMode::Additive, 2, 2, 2));
  p.codebooks.books[0](1, 0) = 1;
  p.codebooks.books[0](1, 1) = 2;
  p.codebooks.books[1](0, 0) = 10;
  p.codebooks.books[1](0, 1) = 20;
  EXPECT_EQ(decode_delta(p, Code{1, 0}), (Vector{11, 22}));
  EXPECT_EQ(decode_delta(zero_params(p.spec), Code{1, 1}), (Vector{0, 0}));
  const auto big = zero_params(make_quantizer_spec(QuantizerMode::Product, 16, 4, 128));
  EXPECT_EQ(decode_delta(big, Code(16, 3)).size(), 128u);
}

TEST(Compose, ZeroWeights) {
  const auto p = zero_params(kSpec);
  for (double v : compose(p, Vector(4, 3.0), Vector(4, -7.0))) EXPECT_EQ(v, 0.0);
}

TEST(Compose, BiasPath) {
  auto p = zero_params(kSpec);
  const Vector target{0.5, -0.25, 0.0, 0.9};
  for (std::size_t k = 0; k < 4; ++k) p.b2[k] = std::atanh(target[k]);
  const auto y = compose(p, Vector(4, 1.0), Vector(4, 1.0));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(y[k], target[k], 1e-15);
}

TEST(Compose, OpenUnitInterval) {
  SplitMix64 rng(4);
  const auto p = init_params(kSpec, 4);
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_matrix(1, 4, rng, -3, 3), e = random_matrix(1, 4, rng, -3, 3);
    for (double v : compose(p, d.row(0), e.row(0))) {
      ASSERT_GT(v, -1.0);
      ASSERT_LT(v, 1.0);
    }
  }
}

TEST(SoftDecode, OneHotMatchesHard) {
  SplitMix64 rng(5);
  const auto p = init_params(kSpec, 5);
  Matrix dist(2, 4);
  dist(0, 3) = 1.0;
  dist(1, 1) = 1.0;
  EXPECT_EQ(soft_decode_delta(p, dist), decode_delta(p, Code{3, 1}));
}

TEST(SoftDecode, UniformIsCentroid) {
  auto p = init_params(make_quantizer_spec(QuantizerMode::Product, 1, 4, 3), 6);
  Matrix dist(1, 4, 0.25);
  const auto out = soft_decode_delta(p, dist);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 4; ++j) mean += p.codebooks.books[0](j, k) / 4.0;
    EXPECT_NEAR(out[k], mean, 1e-15);
  }
}

TEST(SoftDecode, ConvexCombination) {
  auto p = zero_params(make_quantizer_spec(QuantizerMode::Product, 1, 2, 1));
  p.codebooks.books[0](1, 0) = 4.0;
  Matrix dist(1, 2);
  dist(0, 0) = 0.25;
  dist(0, 1) = 0.75;
  EXPECT_EQ(soft_decode_delta(p, dist), (Vector{3.0}));
}

TEST(SoftDecode, RejectsInvalidDistributions) {
  const auto p = zero_params(kSpec);
  auto code_of = [&](const Matrix& d) {
    try {
      soft_decode_delta(p, d);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::BadParam;
  };
  EXPECT_EQ(code_of(Matrix(2, 3, 1.0 / 3)), ErrorCode::BadDistribution);
  EXPECT_EQ(code_of(Matrix(2, 4, 0.3)), ErrorCode::BadDistribution);
  Matrix neg(2, 4, 0.25);
  neg(0, 0) = -0.25;
  neg(0, 1) = 0.75;
  EXPECT_EQ(code_of(neg), ErrorCode::BadDistribution);
}

TEST(QuantizeDocument, ShapesAndDeterminism) {
  SplitMix64 rng(6);
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 4, 4, 8);
  const auto p = init_params(spec, 6);
  const auto table = random_table(10, 8, rng);
  DocumentTokens doc;
  doc.doc_id = 9;
  doc.token_ids = {3, 5, 3};
  doc.embeddings = random_matrix(3, 8, rng);
  std::copy(doc.embeddings.row(0).begin(), doc.embeddings.row(0).end(),
            doc.embeddings.row(2).begin());
  const auto codes = quantize_document(p, doc, table);
  ASSERT_EQ(codes.codes.size(), 3u);
  for (const auto& c : codes.codes) {
    ASSERT_EQ(c.size(), 4u);
    for (auto e : c) EXPECT_LT(e, 4u);
  }
  EXPECT_EQ(codes.codes[0], codes.codes[2]);
  EXPECT_EQ(codes.doc_id, 9u);
  EXPECT_EQ(reconstruct_document(p, codes, table), reconstruct_document(p, codes, table));
}

TEST(QuantizeDocument, EmptyDocument) {
  const auto p = init_params(kSpec, 1);
  DocumentTokens doc;
  doc.embeddings = Matrix(0, 4);
  SplitMix64 rng(1);
  const auto codes = quantize_document(p, doc, random_table(4, 4, rng));
  EXPECT_TRUE(codes.codes.empty());
}

TEST(QuantizeDocument, RequiresDeterministicHardMode) {
  const auto p = init_params(kSpec, 1);
  SplitMix64 rng(1);
  const auto table = random_table(4, 4, rng);
  DocumentTokens doc;
  doc.token_ids = {1};
  doc.embeddings = random_matrix(1, 4, rng);
  GumbelConfig g;
  g.noise = true;
  EXPECT_THROW(quantize_document(p, doc, table, g), Error);
  doc.token_ids = {7};
  EXPECT_THROW(quantize_document(p, doc, table), Error);
}

TEST(ReconstructDocument, ZeroModelGivesZeros) {
  SplitMix64 rng(2);
  const auto table = random_table(5, 4, rng);
  DocumentCodes codes;
  codes.token_ids = {0, 4};
  codes.codes = {{1, 2}, {3, 0}};
  const auto out = reconstruct_document(zero_params(kSpec), codes, table);
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(PositionFeature, BoundedAndDistinct) {
  const auto a = position_feature(0, 8), b = position_feature(5, 8);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_NE(a, b);
  for (double v : b) EXPECT_LE(std::abs(v), 1.0);
}

}  // namespace
