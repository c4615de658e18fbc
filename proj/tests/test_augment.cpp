#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "agerank/augment.hpp"

using namespace agerank;

namespace {

Volume random_volume(std::array<std::size_t, 3> dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume v(dims);
  for (auto& x : v.voxels) x = u(rng);
  return v;
}

AugmentConfig only(double AugmentConfig::*p) {
  auto c = AugmentConfig::disabled();
  c.*p = 1.0;
  return c;
}

}  // namespace

TEST(Augment, DisabledIsIdentity) {
  const auto v = random_volume({12, 10, 9}, 1);
  Rng rng(5);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(augment(v, AugmentConfig::disabled(), rng), v);
}

TEST(Augment, TranslateSpike) {
  Volume v({10, 10, 10});
  v.at(4, 5, 6) = 1.0f;
  const auto t = augment_ops::translate(v, {2, 0, 0});
  EXPECT_EQ(t.at(6, 5, 6), 1.0f);
  float total = 0.0f;
  for (float x : t.voxels) total += x;
  EXPECT_EQ(total, 1.0f);

  // Vacated slabs are zero-filled.
  const auto ones = augment_ops::translate(Volume({10, 10, 10}, 1.0f), {2, 0, -1});
  for (std::size_t z = 0; z < 10; ++z)
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 10; ++x) {
        const bool vacated = x < 2 || z == 9;
        ASSERT_EQ(ones.at(x, y, z), vacated ? 0.0f : 1.0f);
      }
}

TEST(Augment, NoiseStatistics) {
  const Volume zero({32, 32, 32}, 0.0f);
  Rng rng(11);
  AugmentTrace tr;
  const auto v = augment(zero, only(&AugmentConfig::p_noise), rng, &tr);
  ASSERT_TRUE(tr.noised);
  double s = 0.0, ss = 0.0;
  for (float x : v.voxels) s += x;
  const double n = static_cast<double>(v.count());
  const double mean = s / n;
  for (float x : v.voxels) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  EXPECT_NEAR(mean, 0.0, 0.002);
  EXPECT_NEAR(sd, 0.025, 0.002);
}

TEST(Augment, ShapePreservedUnderEveryTransform) {
  Rng rng(3);
  for (auto dims : {std::array<std::size_t, 3>{8, 8, 8}, {12, 9, 16}, {32, 32, 32}}) {
    const auto v = random_volume(dims, 2);
    for (int k = 0; k < 40; ++k) {
      AugmentConfig c;
      c.p_translate = c.p_rotate = c.p_noise = c.p_crop = 0.7;
      const auto out = augment(v, c, rng);
      ASSERT_EQ(out.dims, dims);
      ASSERT_EQ(out.voxels.size(), v.voxels.size());
      ASSERT_EQ(out.spacing, v.spacing);
      ASSERT_TRUE(out.all_finite());
    }
  }
}

TEST(Augment, CropNeverBelowSeventyPercent) {
  Rng rng(8);
  const auto v = random_volume({20, 13, 32}, 4);
  for (int k = 0; k < 500; ++k) {
    AugmentTrace tr;
    augment(v, only(&AugmentConfig::p_crop), rng, &tr);
    ASSERT_TRUE(tr.cropped);
    for (int a = 0; a < 3; ++a) {
      ASSERT_GE(static_cast<double>(tr.crop_extent[a]), 0.7 * static_cast<double>(v.dims[a]));
      ASSERT_LE(tr.crop_origin[a] + tr.crop_extent[a], v.dims[a]);
    }
  }
}

TEST(Augment, FullExtentCropIsIdentity) {
  const auto v = random_volume({9, 10, 11}, 6);
  const auto out = augment_ops::crop_resize(v, {0, 0, 0}, v.dims);
  for (std::size_t i = 0; i < v.count(); ++i) EXPECT_NEAR(out.voxels[i], v.voxels[i], 1e-6);
}

TEST(Augment, CropOfConstantFieldIsConstant) {
  const Volume v({16, 16, 16}, 0.3f);
  const auto out = augment_ops::crop_resize(v, {2, 3, 1}, {12, 11, 14});
  for (float x : out.voxels) ASSERT_NEAR(x, 0.3f, 1e-6);
}

TEST(Augment, DeterministicForFixedStream) {
  const auto v = random_volume({16, 16, 16}, 7);
  AugmentConfig c;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    AugmentTrace ta, tb;
    EXPECT_EQ(augment(v, c, a, &ta), augment(v, c, b, &tb));
    EXPECT_EQ(a(), b());
  }
}

TEST(Augment, StreamAdvanceIndependentOfCoinFlips) {
  const auto v = random_volume({8, 8, 8}, 1);
  Rng a(21), b(21);
  augment(v, AugmentConfig::disabled(), a);
  AugmentConfig all;
  all.p_translate = all.p_rotate = all.p_noise = all.p_crop = 1.0;
  augment(v, all, b);
  EXPECT_EQ(a(), b());
}

TEST(Augment, ApplicationFrequenciesAndRanges) {
  const auto v = random_volume({8, 8, 8}, 9);
  AugmentConfig c;
  Rng rng(12);
  int n_t = 0, n_r = 0, n_n = 0, n_c = 0;
  const int trials = 2000;
  double angle_sum = 0.0;
  const int lim = c.translation_limit(v.dims);
  EXPECT_EQ(lim, 1);
  for (int k = 0; k < trials; ++k) {
    AugmentTrace tr;
    augment(v, c, rng, &tr);
    n_t += tr.translated;
    n_r += tr.rotated;
    n_n += tr.noised;
    n_c += tr.cropped;
    ASSERT_GE(tr.angle, 0.1);
    ASSERT_LE(tr.angle, 0.5);
    angle_sum += tr.angle;
    ASSERT_NEAR(std::hypot(tr.axis[0], tr.axis[1], tr.axis[2]), 1.0, 1e-12);
    for (int s : tr.shift) ASSERT_LE(std::abs(s), lim);
  }
  // Binomial(2000, 0.5): 5 sigma is about 0.056.
  for (int n : {n_t, n_r, n_n, n_c}) EXPECT_NEAR(static_cast<double>(n) / trials, 0.5, 0.056);
  EXPECT_NEAR(angle_sum / trials, 0.3, 0.01);
}

TEST(Augment, TranslationLimitScalesWithSize) {
  AugmentConfig c;
  EXPECT_EQ(c.translation_limit({32, 32, 32}), 2);
  EXPECT_EQ(c.translation_limit({193, 229, 193}), 10);
  c.max_translation = 10;
  EXPECT_EQ(c.translation_limit({32, 32, 32}), 10);
}

TEST(Augment, RotationZeroAngleIsIdentity) {
  const auto v = random_volume({9, 9, 9}, 3);
  const auto out = augment_ops::rotate(v, {0.0, 0.0, 1.0}, 0.0);
  for (std::size_t i = 0; i < v.count(); ++i) EXPECT_NEAR(out.voxels[i], v.voxels[i], 1e-6);
}

TEST(Augment, QuarterTurnAboutZMovesSpike) {
  Volume v({9, 9, 9});
  v.at(7, 4, 4) = 1.0f;  // centre + (3, 0, 0)
  const auto out = augment_ops::rotate(v, {0.0, 0.0, 1.0}, std::numbers::pi / 2);
  EXPECT_NEAR(out.at(4, 7, 4), 1.0f, 1e-6);  // centre + (0, 3, 0)
  EXPECT_NEAR(out.at(7, 4, 4), 0.0f, 1e-6);
}

TEST(Augment, RotatedConstantFieldConstantInInterior) {
  const float c = 0.6f;
  const Volume v({24, 24, 24}, c);
  Rng rng(13);
  for (int k = 0; k < 20; ++k) {
    AugmentTrace tr;
    const auto out = augment(v, only(&AugmentConfig::p_rotate), rng, &tr);
    ASSERT_TRUE(tr.rotated);
    const double ctr = 11.5;
    for (std::size_t z = 0; z < 24; ++z)
      for (std::size_t y = 0; y < 24; ++y)
        for (std::size_t x = 0; x < 24; ++x) {
          const double r = std::hypot(x - ctr, y - ctr, z - ctr);
          // A rotation about the centre keeps the ball of radius r inside the grid.
          if (r <= 10.5) {
            ASSERT_NEAR(out.at(x, y, z), c, 1e-5) << x << "," << y << "," << z;
          }
        }
  }
}

TEST(Augment, Errors) {
  Rng rng(1);
  EXPECT_THROW(augment(Volume({7, 8, 8}), AugmentConfig{}, rng), ConfigError);
  AugmentConfig bad;
  bad.p_noise = 1.5;
  EXPECT_THROW(augment(Volume({8, 8, 8}), bad, rng), ConfigError);
  bad = AugmentConfig{};
  bad.rotation_min = 0.6;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = AugmentConfig{};
  bad.crop_min_fraction = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}
