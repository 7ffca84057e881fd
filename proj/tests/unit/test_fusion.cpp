#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fixture.hpp"
#include "nsfwguard/error.hpp"
#include "nsfwguard/fusion.hpp"

namespace nsfwguard {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

AttentionParams identity_params(std::size_t d) {
  AttentionParams p = AttentionParams::zeros(d, 1);
  p.wq = p.wk = p.wv = Matrix::identity(d);
  return p;
}

TEST(CrossAttention, SingleLogitIsCertain) {
  AttentionParams p = AttentionParams::zeros(1, 1);
  p.wq = p.wk = p.wv = Matrix{{1.0}};
  const auto out = cross_attention(Matrix{{0.3}}, Matrix{{-1.7}}, p);
  EXPECT_EQ(out.attention[0], (Matrix{{1.0}}));
  EXPECT_DOUBLE_EQ(out.attended(0, 0), -1.7);
}

TEST(CrossAttention, IdenticalKeysSplitEvenly) {
  std::mt19937_64 rng(1);
  const Matrix text = random_matrix(3, 4, rng);
  const Matrix row = random_matrix(1, 4, rng);
  Matrix image(2, 4);
  for (std::size_t r = 0; r < 2; ++r) std::copy(row.row(0).begin(), row.row(0).end(), image.row(r).begin());
  const auto out = cross_attention(text, image, AttentionParams::initialize(4, 2, 3));
  for (const auto& a : out.attention) {
    for (double v : a.values()) EXPECT_NEAR(v, 0.5, 1e-12);
  }
}

TEST(CrossAttention, HandComputedTwoDimensionalCase) {
  const auto out = cross_attention(Matrix{{1, 0}}, Matrix{{1, 0}, {0, 1}}, identity_params(2));
  // softmax(1/sqrt(2), 0)
  EXPECT_NEAR(out.attention[0](0, 0), 0.6698, 1e-4);
  EXPECT_NEAR(out.attention[0](0, 1), 0.3302, 1e-4);
}

TEST(CrossAttention, RowsAreStochastic) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t heads = 1 + rng() % 4;
    const std::size_t d = heads * (1 + rng() % 4);
    const Matrix text = random_matrix(1 + rng() % 6, d, rng, 3.0);
    const Matrix image = random_matrix(1 + rng() % 6, d, rng, 3.0);
    const auto out = cross_attention(text, image, AttentionParams::initialize(d, heads, rng()));
    ASSERT_EQ(out.attention.size(), heads);
    for (const auto& a : out.attention) {
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
        for (double v : row) EXPECT_GE(v, 0.0);
      }
    }
  }
}

TEST(CrossAttention, ImagePermutationEquivariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix text = random_matrix(3, 8, rng);
    const Matrix image = random_matrix(5, 8, rng);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix permuted(5, 8);
    for (std::size_t r = 0; r < 5; ++r) {
      std::copy(image.row(perm[r]).begin(), image.row(perm[r]).end(), permuted.row(r).begin());
    }
    const auto params = AttentionParams::initialize(8, 4, rng());
    const auto a = cross_attention(text, image, params);
    const auto b = cross_attention(text, permuted, params);
    for (std::size_t h = 0; h < 4; ++h) {
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
          EXPECT_NEAR(b.attention[h](r, c), a.attention[h](r, perm[c]), 1e-12);
        }
      }
    }
    for (std::size_t i = 0; i < a.fused.size(); ++i) {
      EXPECT_NEAR(a.fused.values()[i], b.fused.values()[i], 1e-12);
    }
  }
}

TEST(CrossAttention, ScaleMatchesExplicitDivisionOracle) {
  std::mt19937_64 rng(4);
  const std::size_t d = 8, heads = 2, dh = d / heads;
  const Matrix text = random_matrix(3, d, rng);
  const Matrix image = random_matrix(4, d, rng);
  const auto params = AttentionParams::initialize(d, heads, 9);
  const auto out = cross_attention(text, image, params);
  const Matrix q = matmul(text, params.wq), k = matmul(image, params.wk);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> logits(4);
      for (std::size_t c = 0; c < 4; ++c) {
        double dotp = 0.0;
        for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) dotp += q(r, j) * k(c, j);
        logits[c] = dotp / std::sqrt(static_cast<double>(dh));
      }
      double z = 0.0;
      for (double l : logits) z += std::exp(l);
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_NEAR(out.attention[h](r, c), std::exp(logits[c]) / z, 1e-12);
      }
    }
  }
}

TEST(CrossAttention, RejectsBadInput) {
  const auto params = AttentionParams::initialize(4, 2, 1);
  EXPECT_THROW(cross_attention(Matrix(2, 4), Matrix(2, 3), params), ShapeError);
  Matrix bad(2, 4);
  bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(cross_attention(bad, Matrix(2, 4), params), NumericError);
  EXPECT_THROW(AttentionParams::initialize(6, 4, 1).validate(), ShapeError);
}

TEST(Classify, HeadBehaviour) {
  std::mt19937_64 rng(5);
  const Matrix text = random_matrix(3, 4, rng), image = random_matrix(2, 4, rng);
  AttentionParams p = AttentionParams::initialize(4, 2, 1);
  p.head_w.fill(0.0);
  p.head_b.fill(0.0);
  EXPECT_EQ(classify(text, image, p).prob_nsfw, 0.5);
  p.head_b = Matrix{{0.0, 10.0}};
  EXPECT_GT(classify(text, image, p).prob_nsfw, 0.9999);
  EXPECT_DOUBLE_EQ(nsfw_probability({0.3, -1.2}), nsfw_probability({100.3, 98.8}));
  EXPECT_NEAR(nsfw_probability({1000.0, -1000.0}), 0.0, 1e-300);
}

TEST(Classify, ThresholdInclusiveAndMonotone) {
  EXPECT_TRUE(is_nsfw(0.5, 0.5));
  EXPECT_FALSE(is_nsfw(std::nextafter(0.5, 0.0), 0.5));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng), t1 = u(rng), t2 = t1 + (1.0 - t1) * u(rng);
    if (!is_nsfw(p, t1)) EXPECT_FALSE(is_nsfw(p, t2));
  }
}

TEST(Loss, PerfectFitAndUniform) {
  EXPECT_LE(cross_entropy({-30.0, 30.0}, Label::kNsfw), 1e-6);
  EXPECT_LE(cross_entropy({30.0, -30.0}, Label::kSafe), 1e-6);
  std::mt19937_64 rng(7);
  AttentionParams p = AttentionParams::initialize(4, 2, 1);
  p.head_w.fill(0.0);
  p.head_b.fill(0.0);
  std::vector<FusionExample> batch{{random_matrix(2, 4, rng), random_matrix(3, 4, rng), Label::kNsfw}};
  EXPECT_NEAR(loss_and_gradients(batch, p).loss, std::log(2.0), 1e-15);
  EXPECT_THROW(loss_and_gradients(std::vector<FusionExample>{}, p), EmptyBatch);
}

TEST(Gradients, FusionMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto report = testing::gradcheck_fusion(seed);
    EXPECT_LT(report.worst, 1e-3) << "seed " << seed << " worst at " << report.worst_tensor;
  }
}

}  // namespace
}  // namespace nsfwguard
