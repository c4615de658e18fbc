#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "agerank/gradcheck.hpp"
#include "agerank/rnc.hpp"
#include "support.hpp"

using namespace agerank;
using testing_support::random_tensor;
using testing_support::random_vector;

namespace {

using Idx = std::vector<std::size_t>;

double sim(const Tensor<double>& v, std::size_t a, std::size_t b, Similarity kind) {
  const std::size_t d = v.dim(1);
  double dot = 0.0, na = 0.0, nb = 0.0, sq = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double x = v[a * d + c], y = v[b * d + c];
    dot += x * y;
    na += x * x;
    nb += y * y;
    sq += (x - y) * (x - y);
  }
  return kind == Similarity::cosine ? dot / std::sqrt(na * nb) : -std::sqrt(sq);
}

/// Direct double sum over anchors, partners and ranked sets; no stabilisation.
double brute_force(const Tensor<double>& v, const std::vector<double>& y, double tau, Similarity kind,
                   long only_anchor = -1) {
  const std::size_t M = y.size();
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < M; ++i) {
    if (only_anchor >= 0 && static_cast<long>(i) != only_anchor) continue;
    ++anchors;
    double li = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      if (j == i) continue;
      double denom = 0.0;
      for (std::size_t k = 0; k < M; ++k)
        if (k != i && std::abs(y[i] - y[k]) >= std::abs(y[i] - y[j])) denom += std::exp(sim(v, i, k, kind) / tau);
      li += -std::log(std::exp(sim(v, i, j, kind) / tau) / denom);
    }
    total += li / static_cast<double>(M - 1);
  }
  return total / static_cast<double>(anchors);
}

EmbeddingBatch random_batch(std::size_t M, std::size_t d, std::mt19937_64& rng, bool integer_ages = false) {
  EmbeddingBatch b;
  b.embeddings = random_tensor({M, d}, rng);
  b.labels = random_vector(M, rng, 20.0, 100.0);
  if (integer_ages)
    for (auto& y : b.labels) y = std::round(y / 10.0) * 10.0;
  return b;
}

EmbeddingBatch permuted(const EmbeddingBatch& b, const Idx& perm) {
  const std::size_t d = b.embeddings.dim(1);
  EmbeddingBatch p{Tensor<double>(b.embeddings.shape()), std::vector<double>(b.size())};
  for (std::size_t i = 0; i < perm.size(); ++i) {
    p.labels[i] = b.labels[perm[i]];
    for (std::size_t c = 0; c < d; ++c) p.embeddings[i * d + c] = b.embeddings[perm[i] * d + c];
  }
  return p;
}

/// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
std::vector<double> random_orthogonal(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> q(d * d);
  for (auto& x : q) x = nd(rng);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += q[r * d + c] * q[r * d + p];
      for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dot * q[r * d + p];
    }
    double n = 0.0;
    for (std::size_t r = 0; r < d; ++r) n += q[r * d + c] * q[r * d + c];
    for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= std::sqrt(n);
  }
  return q;
}

}  // namespace

TEST(RankedSet, Examples) {
  const std::vector<double> y{20, 30, 50};
  EXPECT_EQ(ranked_set(y, 0, 1), (Idx{1, 2}));
  EXPECT_EQ(ranked_set(y, 0, 2), (Idx{2}));
  EXPECT_EQ(ranked_set(std::vector<double>(5, 40.0), 2, 4), (Idx{0, 1, 3, 4}));
}

TEST(RankedSet, TiesIncludedAndPartnerPresent) {
  const std::vector<double> y{50, 40, 60, 45, 70};
  EXPECT_EQ(ranked_set(y, 0, 1), (Idx{1, 2, 4}));  // |50-40| = |50-60|
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto labels = random_vector(7, rng, 20, 100);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        if (i == j) continue;
        const auto s = ranked_set(labels, i, j);
        EXPECT_TRUE(std::find(s.begin(), s.end(), j) != s.end());
        EXPECT_TRUE(std::find(s.begin(), s.end(), i) == s.end());
      }
  }
}

TEST(RankedSet, Errors) {
  EXPECT_THROW(ranked_set({20, 30}, 1, 1), std::invalid_argument);
  EXPECT_THROW(ranked_set({20, 30}, 0, 2), std::out_of_range);
}

TEST(RncLoss, TwoSamplesGiveZero) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto b = random_batch(2, 3, rng);
    EXPECT_EQ(rnc_per_sample_loss(b, 0, RncConfig{}), 0.0);
    EXPECT_EQ(rnc_batch_loss(b, RncConfig{}), 0.0);
  }
}

TEST(RncLoss, IdenticalBatchGivesLogThree) {
  EmbeddingBatch b{Tensor<double>({4, 3}, 0.25), {40, 40, 40, 40}};
  EXPECT_NEAR(rnc_batch_loss(b, RncConfig{}), std::log(3.0), 1e-15);
  EXPECT_NEAR(rnc_batch_loss(b, RncConfig{}), 1.0986123, 1e-7);
  RncConfig cos;
  cos.similarity = Similarity::cosine;
  EXPECT_NEAR(rnc_batch_loss(b, cos), std::log(3.0), 1e-15);
}

TEST(RncLoss, OneDimensionalExample) {
  EmbeddingBatch b{Tensor<double>({3, 1}, {0.0, 1.0, 3.0}), {20, 30, 50}};
  const double oracle = brute_force(b.embeddings, b.labels, 2.0, Similarity::negative_l2);
  EXPECT_NEAR(rnc_batch_loss(b, RncConfig{}), oracle, 1e-12);
  // Anchor 0 by hand: j=1 -> -log(e^-0.5 / (e^-0.5 + e^-1.5)), j=2 -> 0.
  const double l0 = 0.5 * std::log(1.0 + std::exp(-1.0));
  EXPECT_NEAR(rnc_per_sample_loss(b, 0, RncConfig{}), l0, 1e-15);
  EXPECT_NEAR(rnc_per_sample_loss(b, 0, RncConfig{}), brute_force(b.embeddings, b.labels, 2.0, Similarity::negative_l2, 0),
              1e-15);
}

TEST(RncLoss, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t M = 2 + rng() % 7, d = 1 + rng() % 8;
    const auto b = random_batch(M, d, rng, t % 3 == 0);
    for (auto kind : {Similarity::negative_l2, Similarity::cosine}) {
      RncConfig cfg;
      cfg.similarity = kind;
      cfg.temperature = t % 2 ? 2.0 : 0.3;
      const double oracle = brute_force(b.embeddings, b.labels, cfg.temperature, kind);
      const double got = rnc_batch_loss(b, cfg);
      EXPECT_LE(std::abs(got - oracle), 1e-10 * std::max(1.0, std::abs(oracle))) << "batch " << t;
      const std::size_t a = rng() % M;
      const double pa = brute_force(b.embeddings, b.labels, cfg.temperature, kind, static_cast<long>(a));
      EXPECT_LE(std::abs(rnc_per_sample_loss(b, a, cfg) - pa), 1e-10 * std::max(1.0, std::abs(pa)));
    }
  }
}

TEST(RncLoss, SixByFourExample) {
  std::mt19937_64 rng(4);
  const auto b = random_batch(6, 4, rng);
  const double oracle = brute_force(b.embeddings, b.labels, 2.0, Similarity::negative_l2);
  EXPECT_LE(std::abs(rnc_batch_loss(b, RncConfig{}) - oracle), 1e-10 * oracle);
}

TEST(RncLoss, StableAtSmallTemperature) {
  std::mt19937_64 rng(5);
  auto b = random_batch(6, 4, rng);
  for (auto& x : b.embeddings.data()) x *= 50.0;
  RncConfig cfg;
  cfg.temperature = 0.01;
  const double l = rnc_batch_loss(b, cfg);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GE(l, 0.0);
}

TEST(RncLoss, Nonnegative) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    const auto b = random_batch(2 + rng() % 9, 1 + rng() % 5, rng, t % 2 == 0);
    EXPECT_GE(rnc_batch_loss(b, RncConfig{}), 0.0);
  }
}

TEST(RncLoss, PermutationInvariance) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const auto b = random_batch(3 + rng() % 6, 4, rng, t % 2 == 0);
    Idx perm(b.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_NEAR(rnc_batch_loss(permuted(b, perm), RncConfig{}), rnc_batch_loss(b, RncConfig{}), 1e-12);
  }
}

TEST(RncLoss, IsometryInvariance) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 1 + rng() % 6;
    const auto b = random_batch(5, d, rng);
    const auto q = random_orthogonal(d, rng);
    const auto shift = random_vector(d, rng, -3, 3);
    EmbeddingBatch rot = b, moved = b;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t r = 0; r < d; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += q[r * d + c] * b.embeddings[i * d + c];
        rot.embeddings[i * d + r] = s;
        moved.embeddings[i * d + r] += shift[r];
      }
    for (auto kind : {Similarity::negative_l2, Similarity::cosine}) {
      RncConfig cfg;
      cfg.similarity = kind;
      EXPECT_NEAR(rnc_batch_loss(rot, cfg), rnc_batch_loss(b, cfg), 1e-12);
    }
    const auto g0 = rnc_batch_gradient(b, RncConfig{});
    const auto g1 = rnc_batch_gradient(moved, RncConfig{});
    EXPECT_NEAR(g1.loss, g0.loss, 1e-12);
    for (std::size_t k = 0; k < g0.gradient.size(); ++k) EXPECT_NEAR(g1.gradient[k], g0.gradient[k], 1e-10);
  }
}

TEST(RncLoss, MonotoneLabelInvariance) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    auto b = random_batch(6, 3, rng, t % 2 == 0);
    const double base = rnc_batch_loss(b, RncConfig{});
    // Power-of-two slopes keep tied label distances exactly tied in floating point.
    EmbeddingBatch g = b;
    const double slope = std::ldexp(1.0, static_cast<int>(rng() % 5) - 2);
    for (auto& y : g.labels) y = slope * y - 16.0;
    EXPECT_EQ(rnc_batch_loss(g, RncConfig{}), base);
    if (t % 2) {
      EmbeddingBatch h = b;
      const double any = 0.1 + 3.0 * std::uniform_real_distribution<double>()(rng);
      for (auto& y : h.labels) y = any * y - 17.0;
      EXPECT_NEAR(rnc_batch_loss(h, RncConfig{}), base, 1e-12);
    }
  }
}

TEST(RncGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 50; ++t) {
    const std::size_t M = 2 + rng() % 6, d = 1 + rng() % 5;
    const auto b = random_batch(M, d, rng, t % 4 == 0);
    for (auto kind : {Similarity::negative_l2, Similarity::cosine}) {
      RncConfig cfg;
      cfg.similarity = kind;
      auto fn = [&](Tape<double>& tape, Var v) { return rnc_loss_node(tape, v, b.labels, cfg); };
      const auto r = grad_check(fn, b.embeddings, 1e-5, 1e-4);
      EXPECT_TRUE(r.passed) << "batch " << t << " max rel " << r.max_rel_error;
      const auto g = rnc_batch_gradient(b, cfg);
      for (std::size_t k = 0; k < g.gradient.size(); ++k) ASSERT_EQ(g.gradient[k], r.analytic[k]);
    }
  }
}

TEST(RncGradient, FourRandomEmbeddings) {
  std::mt19937_64 rng(11);
  const auto b = random_batch(4, 3, rng);
  auto fn = [&](Tape<double>& tape, Var v) { return rnc_loss_node(tape, v, b.labels, RncConfig{}); };
  EXPECT_TRUE(grad_check(fn, b.embeddings, 1e-3, 1e-4).passed);
}

TEST(RncGradient, IdenticalEmbeddingsFiniteAndSwapSymmetric) {
  EmbeddingBatch b{Tensor<double>({4, 2}, 0.5), {30, 30, 50, 70}};
  const auto g = rnc_batch_gradient(b, RncConfig{});
  for (double x : g.gradient.data()) EXPECT_TRUE(std::isfinite(x));
  // Swapping the two equal-label samples swaps their gradient rows.
  const auto s = rnc_batch_gradient(permuted(b, {1, 0, 2, 3}), RncConfig{});
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(s.gradient[0 * 2 + c], g.gradient[1 * 2 + c]);
    EXPECT_EQ(s.gradient[1 * 2 + c], g.gradient[0 * 2 + c]);
  }
}

TEST(RncLoss, Errors) {
  EmbeddingBatch one{Tensor<double>({1, 2}, 0.0), {30}};
  EXPECT_THROW(rnc_batch_loss(one, RncConfig{}), std::invalid_argument);
  EmbeddingBatch mismatch{Tensor<double>({3, 2}, 0.0), {30, 40}};
  EXPECT_THROW(rnc_batch_loss(mismatch, RncConfig{}), ShapeError);
  RncConfig bad;
  bad.temperature = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_similarity("dot"), ConfigError);
}

TEST(L1Loss, Examples) {
  const auto r = l1_loss({21, 19}, {20, 20});
  EXPECT_EQ(r.loss, 1.0);
  EXPECT_EQ(r.gradient, (std::vector<double>{0.5, -0.5}));
  const auto z = l1_loss({33, 44}, {33, 44});
  EXPECT_EQ(z.loss, 0.0);
  EXPECT_EQ(z.gradient, (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(l1_loss({}, {}), std::invalid_argument);
  EXPECT_THROW(l1_loss({1}, {1, 2}), std::invalid_argument);
}

TEST(L1Loss, MatchesDirectSummation) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_vector(37, rng, 0, 100), y = random_vector(37, rng, 0, 100);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - y[i]);
    EXPECT_NEAR(l1_loss(p, y).loss, s / 37.0, 1e-12);
  }
}

TEST(L1Loss, GradientMatchesFiniteDifferencesAwayFromKink) {
  std::mt19937_64 rng(13);
  const auto y = random_vector(6, rng, 20, 80);
  auto p = y;
  for (auto& x : p) x += (rng() % 2 ? 1.0 : -1.0) * std::uniform_real_distribution<double>(0.5, 5.0)(rng);
  const auto r = l1_loss(p, y);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto up = p, dn = p;
    up[i] += 1e-4;
    dn[i] -= 1e-4;
    const double fd = (l1_loss(up, y).loss - l1_loss(dn, y).loss) / 2e-4;
    EXPECT_LE(std::abs(fd - r.gradient[i]), 1e-6 * std::abs(r.gradient[i]));
  }
}
