#include "cq/baseline.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "cq/oracles.hpp"
#include "test_support.hpp"

namespace {

using namespace cq;
using cq::testing::random_matrix;

Matrix rows_of(std::initializer_list<std::vector<double>> rows) {
  Matrix m(0, rows.begin()->size());
  for (const auto& r : rows) m.append_row(r);
  return m;
}

std::vector<double> sorted_column(const Matrix& m, std::size_t c) {
  std::vector<double> v;
  for (std::size_t r = 0; r < m.rows; ++r) v.push_back(m(r, c));
  std::sort(v.begin(), v.end());
  return v;
}

TEST(TrainPq, FourPointSquare) {
  const auto pts = rows_of({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 2, 2, 2);
  KMeansConfig cfg;
  cfg.iterations = 10;
  cfg.seed = 3;
  const auto cb = train_pq(pts, spec, cfg);
  EXPECT_EQ(sorted_column(cb.books[0], 0), (std::vector<double>{0, 10}));
  EXPECT_EQ(sorted_column(cb.books[1], 0), (std::vector<double>{0, 1}));

  // Each 1-d subspace agrees with the exhaustive optimum.
  for (std::size_t m = 0; m < 2; ++m) {
    const auto opt = oracle::kmeans_exhaustive(slice_columns(pts, m, 1), 2);
    std::vector<double> want{opt.centroids(0, 0), opt.centroids(1, 0)};
    std::sort(want.begin(), want.end());
    EXPECT_EQ(sorted_column(cb.books[m], 0), want);
  }
}

TEST(TrainPq, DistinctPointsReconstructExactly) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 2, 4, 4);
  SplitMix64 rng(1);
  const auto pts = random_matrix(4, 4, rng);
  Matrix pts32 = pts;
  round_to_binary32(pts32.data);
  const auto cb = train_pq(pts32, spec, {});
  for (std::size_t i = 0; i < pts32.rows; ++i) {
    const auto x = pts32.row(i);
    EXPECT_EQ(squared_distance(x, decode_baseline(cb, encode_baseline(cb, x))), 0.0);
  }
}

TEST(TrainPq, TooFewSamples) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 1, 4, 2);
  SplitMix64 rng(2);
  try {
    train_pq(random_matrix(3, 2, rng), spec, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewSamples);
  }
}

TEST(TrainPq, DeterministicPerSeed) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 2, 8, 6);
  SplitMix64 rng(4);
  const auto pts = random_matrix(200, 6, rng);
  KMeansConfig cfg;
  cfg.seed = 99;
  EXPECT_EQ(train_pq(pts, spec, cfg), train_pq(pts, spec, cfg));
}

TEST(KMeans, MseIsNonIncreasing) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SplitMix64 rng(seed);
    const auto pts = random_matrix(300, 3, rng);
    KMeansConfig cfg;
    cfg.seed = seed;
    cfg.iterations = 40;
    const auto res = kmeans(pts, 12, cfg);
    for (std::size_t i = 1; i < res.mse_history.size(); ++i) {
      EXPECT_LE(res.mse_history[i], res.mse_history[i - 1] + 1e-12) << "seed " << seed;
    }
  }
}

TEST(KMeans, ReseedsEmptyClusters) {
  // Identical initial picks cannot happen (distinct indices), but duplicate
  // points can; every centroid must still end up owning a point.
  const auto pts = rows_of({{0}, {0}, {0}, {5}, {6}, {100}});
  KMeansConfig cfg;
  cfg.seed = 0;
  const auto res = kmeans(pts, 3, cfg);
  std::vector<int> owned(3, 0);
  for (auto a : res.assignment) owned[a]++;
  for (int c : owned) EXPECT_GT(c, 0);
}

TEST(TrainRq, RepeatedSample) {
  Matrix pts(0, 3);
  for (int i = 0; i < 5; ++i) pts.append_row(std::vector<double>{0.5, -1.25, 2.0});
  const auto spec = make_quantizer_spec(QuantizerMode::Additive, 3, 2, 3);
  RqTrainingTrace trace;
  const auto cb = train_rq(pts, spec, {}, &trace);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(cb.books[0](j, 0), 0.5);
    EXPECT_EQ(cb.books[0](j, 1), -1.25);
    EXPECT_EQ(cb.books[0](j, 2), 2.0);
  }
  for (std::size_t m = 1; m < 3; ++m) {
    for (double v : cb.books[m].data) EXPECT_EQ(v, 0.0);
  }
  for (double mse : trace.stage_mse) EXPECT_EQ(mse, 0.0);
}

TEST(TrainRq, CollinearStages) {
  const auto pts = rows_of({{0}, {1}, {10}, {11}});
  const auto spec = make_quantizer_spec(QuantizerMode::Additive, 2, 2, 1);
  const auto cb = train_rq(pts, spec, {});
  EXPECT_EQ(sorted_column(cb.books[0], 0), (std::vector<double>{0.5, 10.5}));
  EXPECT_EQ(sorted_column(cb.books[1], 0), (std::vector<double>{-0.5, 0.5}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(decode_baseline(cb, encode_baseline(cb, pts.row(i)))[0], pts(i, 0));
  }
}

TEST(TrainRq, SingleStageMatchesPlainKMeans) {
  SplitMix64 rng(8);
  Matrix pts(0, 2);
  const double centers[3][2] = {{0, 0}, {20, 0}, {0, 20}};
  for (int i = 0; i < 60; ++i) {
    const auto& c = centers[i % 3];
    pts.append_row(std::vector<double>{c[0] + rng.uniform(-1, 1), c[1] + rng.uniform(-1, 1)});
  }
  round_to_binary32(pts.data);
  const auto spec = make_quantizer_spec(QuantizerMode::Additive, 1, 3, 2);
  KMeansConfig cfg;
  cfg.seed = 5;
  const auto cb = train_rq(pts, spec, cfg);
  KMeansConfig sub = cfg;
  sub.seed = substream(cfg.seed, 0).next();
  Matrix want = kmeans(pts, 3, sub).centroids;
  round_to_binary32(want.data);
  EXPECT_EQ(cb.books[0], want);
}

TEST(TrainRq, RejectsProductMode) {
  const auto spec = make_quantizer_spec(QuantizerMode::Product, 1, 2, 2);
  SplitMix64 rng(1);
  EXPECT_THROW(train_rq(random_matrix(10, 2, rng), spec, {}), Error);
}

CodebookSet small_product_set() {
  CodebookSet cb(make_quantizer_spec(QuantizerMode::Product, 2, 4, 4));
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t j = 0; j < 4; ++j) {
      cb.books[m](j, 0) = 10.0 * m + j;
      cb.books[m](j, 1) = -static_cast<double>(j);
    }
  }
  return cb;
}

TEST(EncodeBaseline, ExactConcatenation) {
  const auto cb = small_product_set();
  Vector x;
  for (auto v : cb.codeword(0, 3)) x.push_back(v);
  for (auto v : cb.codeword(1, 1)) x.push_back(v);
  EXPECT_EQ(encode_baseline(cb, x), (Code{3, 1}));
  EXPECT_EQ(decode_baseline(cb, Code{3, 1}), x);
}

TEST(EncodeBaseline, IdenticalCodebookTiesToZero) {
  CodebookSet cb(make_quantizer_spec(QuantizerMode::Product, 3, 4, 6));
  for (auto& b : cb.books) std::fill(b.data.begin(), b.data.end(), 0.25);
  SplitMix64 rng(3);
  const auto x = random_matrix(1, 6, rng);
  EXPECT_EQ(encode_baseline(cb, x.row(0)), (Code{0, 0, 0}));
}

TEST(EncodeBaseline, MatchesBruteForce) {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    CodebookSet cb(make_quantizer_spec(QuantizerMode::Product, 2, 4, 6));
    for (auto& b : cb.books) b = random_matrix(4, 3, rng);
    const auto x = random_matrix(1, 6, rng);
    EXPECT_EQ(encode_baseline(cb, x.row(0)), oracle::code_search_bruteforce(cb, x.row(0)));
  }
}

TEST(EncodeBaseline, ReencodeIsFixedPoint) {
  SplitMix64 rng(13);
  CodebookSet cb(make_quantizer_spec(QuantizerMode::Product, 4, 8, 8));
  for (auto& b : cb.books) b = random_matrix(8, 2, rng);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_matrix(1, 8, rng);
    const Code c = encode_baseline(cb, x.row(0));
    EXPECT_EQ(encode_baseline(cb, decode_baseline(cb, c)), c);
  }
}

TEST(DecodeBaseline, ProductAndAdditive) {
  CodebookSet p(make_quantizer_spec(QuantizerMode::Product, 2, 2, 2));
  p.books[0](0, 0) = 5;
  p.books[1](0, 0) = 7;
  EXPECT_EQ(decode_baseline(p, Code{0, 0}), (Vector{5, 7}));

  CodebookSet a(make_quantizer_spec(QuantizerMode::Additive, 2, 2, 2));
  a.books[0](1, 0) = 1;
  a.books[0](1, 1) = 2;
  a.books[1](0, 0) = 10;
  a.books[1](0, 1) = 20;
  EXPECT_EQ(decode_baseline(a, Code{1, 0}), (Vector{11, 22}));
}

TEST(DecodeBaseline, RejectsBadCode) {
  const auto cb = small_product_set();
  EXPECT_THROW(decode_baseline(cb, Code{4, 0}), Error);
  EXPECT_THROW(decode_baseline(cb, Code{0}), Error);
}

}  // namespace
