#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "agerank/gradram.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace agerank;
using testing_support::random_tensor;
using testing_support::tiny_encoder;
using testing_support::tiny_phantom;

namespace {

// Straight transcription of the map definition, channel by channel.
std::vector<double> raw_oracle(const Tensor<double>& a, const Tensor<double>& g, bool relu_grads) {
  const std::size_t C = a.dim(0), D = a.dim(1), H = a.dim(2), W = a.dim(3);
  std::vector<double> out(D * H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double alpha = 0.0;
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double v = g[((c * D + z) * H + y) * W + x];
          alpha += relu_grads ? (v > 0 ? v : 0.0) : v;
        }
    alpha /= static_cast<double>(D * H * W);
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) out[(z * H + y) * W + x] += alpha * a[((c * D + z) * H + y) * W + x];
  }
  for (auto& v : out) v = v > 0 ? v : 0.0;
  return out;
}

// Half-pixel linear interpolation weights for one axis.
std::pair<std::size_t, double> src_pos(std::size_t o, std::size_t in, std::size_t out, std::size_t& hi) {
  double s = (o + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in - 1));
  const auto lo = static_cast<std::size_t>(std::floor(s));
  hi = std::min(lo + 1, in - 1);
  return {lo, s - static_cast<double>(lo)};
}

double upsample_oracle(const Tensor<double>& raw, std::array<std::size_t, 3> dims, std::size_t x, std::size_t y,
                       std::size_t z) {
  std::size_t x1, y1, z1;
  const auto [x0, fx] = src_pos(x, raw.dim(2), dims[0], x1);
  const auto [y0, fy] = src_pos(y, raw.dim(1), dims[1], y1);
  const auto [z0, fz] = src_pos(z, raw.dim(0), dims[2], z1);
  auto r = [&](std::size_t zz, std::size_t yy, std::size_t xx) { return raw[(zz * raw.dim(1) + yy) * raw.dim(2) + xx]; };
  double v = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const double w = (a ? fz : 1 - fz) * (b ? fy : 1 - fy) * (c ? fx : 1 - fx);
        v += w * r(a ? z1 : z0, b ? y1 : y0, c ? x1 : x0);
      }
  return v;
}

SaliencyMap map_of(std::array<std::size_t, 3> dims, std::vector<float> vals, const std::string& tag = "") {
  SaliencyMap m;
  m.volume = Volume(dims);
  m.volume.voxels = std::move(vals);
  m.tag = tag;
  return m;
}

ParcellationAtlas atlas_of(std::array<std::size_t, 3> dims, std::vector<int> labels, std::set<int> informative = {}) {
  ParcellationAtlas a;
  a.dims = dims;
  a.labels = std::move(labels);
  a.names = {"background", "a", "b", "c"};
  a.informative = std::move(informative);
  return a;
}

AgeModel<double> tiny_model(double bias = 50.0) {
  AgeModel<double> m(tiny_encoder());
  m.head = RegressionHead<double>::initialized(m.encoder.config().embedding_dim, bias, 4);
  m.has_head = true;
  return m;
}

const Dataset& tiny_data() {
  static const Dataset d = generate_dataset(12, tiny_phantom(), SplitRatios{}, 5);
  return d;
}

}  // namespace

TEST(GradRam, ToyTwoChannelWeights) {
  // Channel weights (1, -1): the map is ReLU(A0 - A1).
  Tensor<double> a({2, 1, 1, 3}, {3.0, 1.0, 2.0, 1.0, 4.0, 2.0});
  Tensor<double> g({2, 1, 1, 3}, {1.0, 1.0, 1.0, -1.0, -1.0, -1.0});
  const auto raw = gradram_raw(a, g, GradRamMode::weighted);
  EXPECT_EQ(raw, Tensor<double>({1, 1, 3}, {2.0, 0.0, 0.0}));
  // Only the positive-gradient channel survives in relu-gradients mode.
  const auto rg = gradram_raw(a, g, GradRamMode::relu_gradients);
  EXPECT_EQ(rg, Tensor<double>({1, 1, 3}, {3.0, 1.0, 2.0}));
}

TEST(GradRam, NegativeWeightsOnPositiveActivationsGiveZeroMap) {
  std::mt19937_64 rng(2);
  const auto a = random_tensor({3, 2, 2, 2}, rng, 0.1, 1.0);
  const auto g = random_tensor({3, 2, 2, 2}, rng, -1.0, -0.1);
  for (auto mode : {GradRamMode::weighted, GradRamMode::relu_gradients}) {
    const auto m = saliency_from_activations(a, g, {4, 4, 4}, mode);
    for (float v : m.volume.voxels) ASSERT_EQ(v, 0.0f);
    EXPECT_EQ(m.raw_max, 0.0);
  }
}

TEST(GradRam, RawMatchesOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = random_tensor({4, 3, 2, 5}, rng, 0.0, 2.0);
    const auto g = random_tensor({4, 3, 2, 5}, rng);
    for (bool rg : {false, true}) {
      const auto raw = gradram_raw(a, g, rg ? GradRamMode::relu_gradients : GradRamMode::weighted);
      const auto o = raw_oracle(a, g, rg);
      ASSERT_EQ(raw.size(), o.size());
      for (std::size_t i = 0; i < o.size(); ++i) ASSERT_NEAR(raw[i], o[i], 1e-12);
    }
  }
}

TEST(GradRam, UpsampleMatchesOracle) {
  std::mt19937_64 rng(4);
  const auto raw = random_tensor({3, 2, 4}, rng, 0.0, 1.0);
  const std::array<std::size_t, 3> dims{9, 7, 11};
  const auto up = upsample_map(raw, dims);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x)
        ASSERT_NEAR(up.at(x, y, z), upsample_oracle(raw, dims, x, y, z), 1e-6) << x << "," << y << "," << z;
  // Same-size resampling is the identity.
  const auto same = upsample_map(raw, {4, 2, 3});
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(same.voxels[i], raw[i], 1e-6);
  EXPECT_THROW(upsample_map(Tensor<double>({2, 2}), dims), ShapeError);
}

TEST(GradRam, NormalizationRangeAndIdempotence) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-3.0f, 7.0f);
  Volume v({6, 5, 4});
  for (auto& x : v.voxels) x = u(rng);
  const auto [lo, hi] = normalize_map(v);
  EXPECT_LT(lo, hi);
  EXPECT_EQ(*std::min_element(v.voxels.begin(), v.voxels.end()), 0.0f);
  EXPECT_FLOAT_EQ(*std::max_element(v.voxels.begin(), v.voxels.end()), 1.0f);
  const Volume once = v;
  normalize_map(v);
  for (std::size_t i = 0; i < v.count(); ++i) EXPECT_NEAR(v.voxels[i], once.voxels[i], 1e-6);

  Volume flat({3, 3, 3}, 0.4f);
  const auto [a, b] = normalize_map(flat);
  EXPECT_FLOAT_EQ(static_cast<float>(a), 0.4f);
  EXPECT_EQ(a, b);
  for (float x : flat.voxels) EXPECT_EQ(x, 0.0f);
}

TEST(GradRam, PositiveGradientScalingLeavesMapUnchanged) {
  std::mt19937_64 rng(6);
  const auto a = random_tensor({3, 2, 3, 2}, rng, 0.0, 1.0);
  const auto g = random_tensor({3, 2, 3, 2}, rng);
  for (auto mode : {GradRamMode::weighted, GradRamMode::relu_gradients}) {
    const auto base = saliency_from_activations(a, g, {6, 6, 6}, mode);
    for (double k : {0.01, 3.0, 250.0}) {
      Tensor<double> gk = g;
      for (auto& x : gk.data()) x *= k;
      const auto m = saliency_from_activations(a, gk, {6, 6, 6}, mode);
      for (std::size_t i = 0; i < m.volume.count(); ++i) ASSERT_NEAR(m.volume.voxels[i], base.volume.voxels[i], 1e-5);
      EXPECT_NEAR(m.raw_max, k * base.raw_max, 1e-6 * k * base.raw_max);  // read back from the float volume
    }
  }
}

TEST(GradRam, RawIsLinearInActivationsForFixedWeights) {
  // With nonnegative activations and nonnegative channel weights no clipping occurs.
  std::mt19937_64 rng(7);
  const auto a1 = random_tensor({2, 2, 2, 2}, rng, 0.0, 1.0), a2 = random_tensor({2, 2, 2, 2}, rng, 0.0, 1.0);
  const auto g = random_tensor({2, 2, 2, 2}, rng, 0.1, 1.0);
  Tensor<double> sum = a1;
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0 * a1[i] + 0.5 * a2[i];
  const auto r1 = gradram_raw(a1, g, GradRamMode::weighted), r2 = gradram_raw(a2, g, GradRamMode::weighted);
  const auto rs = gradram_raw(sum, g, GradRamMode::weighted);
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_NEAR(rs[i], 2.0 * r1[i] + 0.5 * r2[i], 1e-12);
}

TEST(GradRam, RawShapeErrors) {
  EXPECT_THROW(gradram_raw(Tensor<double>({2, 2, 2}), Tensor<double>({2, 2, 2}), GradRamMode::weighted), ShapeError);
  EXPECT_THROW(gradram_raw(Tensor<double>({1, 2, 2, 2}), Tensor<double>({2, 2, 2, 2}), GradRamMode::weighted),
               ShapeError);
}

TEST(GroupAverage, VoxelwiseMean) {
  const std::array<std::size_t, 3> d{2, 1, 1};
  const std::vector<SaliencyMap> maps{map_of(d, {0.0f, 1.0f}), map_of(d, {0.5f, 0.5f}), map_of(d, {1.0f, 0.0f}),
                                      map_of(d, {0.2f, 0.8f})};
  const auto g = group_average(maps, {"x", "y", "x", "x"}, {"x", "y"});
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].tag, "x");
  EXPECT_EQ(g[0].group_size, 3u);
  EXPECT_NEAR(g[0].volume.voxels[0], 0.4f, 1e-6);
  EXPECT_NEAR(g[0].volume.voxels[1], 0.6f, 1e-6);
  EXPECT_EQ(g[1].group_size, 1u);
  EXPECT_EQ(g[1].volume.voxels, maps[1].volume.voxels);

  EXPECT_THROW(group_average(maps, {"x", "y"}, {"x"}), std::invalid_argument);
  EXPECT_THROW(group_average(maps, {"x", "y", "x", "x"}, {"z"}), std::invalid_argument);
  auto odd = maps;
  odd[2] = map_of({1, 2, 1}, {0.0f, 0.0f});
  EXPECT_THROW(group_average(odd, {"x", "y", "x", "x"}, {"x"}), ShapeError);
}

TEST(ParcelScores, AccumulationMatchesOracle) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> lab(0, 3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const std::array<std::size_t, 3> d{5, 4, 3};
  std::vector<int> labels(60);
  std::vector<float> vals(60);
  for (std::size_t i = 0; i < 60; ++i) {
    labels[i] = lab(rng);
    vals[i] = u(rng);
  }
  const auto atlas = atlas_of(d, labels);
  const auto t = parcel_scores(map_of(d, vals).volume, atlas, 0.5);
  std::map<int, std::pair<double, int>> o;
  for (std::size_t i = 0; i < 60; ++i) {
    if (labels[i] == 0) continue;
    o[labels[i]].first += vals[i];
    o[labels[i]].second += 1;
  }
  ASSERT_EQ(t.rows.size(), o.size());
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& r = t.rows[k];
    const double mean = o.at(r.label).first / o.at(r.label).second;
    EXPECT_NEAR(r.mean, mean, 1e-12);
    EXPECT_EQ(r.voxels, static_cast<std::size_t>(o.at(r.label).second));
    EXPECT_EQ(r.relevant, mean > 0.5);
    EXPECT_EQ(r.name, atlas.names[r.label]);
    if (k > 0) {
      EXPECT_GE(t.rows[k - 1].mean, r.mean);
    }
  }
  const auto csv = t.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "label,name,mean,relevant");
}

TEST(ParcelScores, ThresholdIsStrict) {
  const std::array<std::size_t, 3> d{2, 1, 1};
  const auto t = parcel_scores(map_of(d, {0.8f, 0.9f}).volume, atlas_of(d, {1, 2}), 0.9);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].label, 2);
  EXPECT_FALSE(t.rows[0].relevant);  // 0.9f rounds just below 0.9
  const auto t2 = parcel_scores(map_of(d, {0.8f, 1.0f}).volume, atlas_of(d, {1, 2}), 0.9);
  EXPECT_TRUE(t2.rows[0].relevant);
  EXPECT_FALSE(t2.rows[1].relevant);
  EXPECT_THROW(parcel_scores(map_of(d, {0.f, 0.f}).volume, atlas_of(d, {0, 0})), std::invalid_argument);
  EXPECT_THROW(parcel_scores(map_of({1, 2, 1}, {0.f, 0.f}).volume, atlas_of(d, {1, 1})), ShapeError);
}

TEST(Atlas, MajorityVoteTiesGoLow) {
  const std::array<std::size_t, 3> d{3, 1, 1};
  const auto a = atlas_of(d, {1, 2, 3}), b = atlas_of(d, {1, 3, 2}), c = atlas_of(d, {2, 3, 1});
  const auto m = majority_atlas({&a, &b, &c});
  EXPECT_EQ(m.labels, (std::vector<int>{1, 3, 1}));
  const auto two = majority_atlas({&a, &b});
  EXPECT_EQ(two.labels, (std::vector<int>{1, 2, 2}));
  EXPECT_THROW(majority_atlas({}), std::invalid_argument);
}

TEST(Atlas, InformativeMassFraction) {
  const std::array<std::size_t, 3> d{4, 1, 1};
  const auto atlas = atlas_of(d, {0, 1, 2, 3}, {1, 3});
  EXPECT_NEAR(informative_mass_fraction(map_of(d, {1.0f, 2.0f, 3.0f, 4.0f}).volume, atlas), 0.6, 1e-7);
  EXPECT_EQ(informative_mass_fraction(map_of(d, {0.f, 0.f, 0.f, 0.f}).volume, atlas), 0.0);
}

TEST(AgeBins, Labels) {
  const std::vector<double> e{20, 40, 60, 80};
  EXPECT_EQ(age_bin(19.0, e), "20-40");
  EXPECT_EQ(age_bin(20.0, e), "20-40");
  EXPECT_EQ(age_bin(39.99, e), "20-40");
  EXPECT_EQ(age_bin(40.0, e), "40-60");
  EXPECT_EQ(age_bin(80.0, e), "80+");
  EXPECT_EQ(age_bin_names(e), (std::vector<std::string>{"20-40", "40-60", "60-80", "80+"}));
}

TEST(GradRamConfigTest, ValidationAndJson) {
  GradRamConfig c;
  EXPECT_NO_THROW(c.validate());
  c.threshold = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = GradRamConfig{};
  c.age_bin_edges = {20, 20};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_gradram_mode("positive"), ConfigError);
  EXPECT_THROW(parse_grouping("site"), ConfigError);
  GradRamConfig r;
  r.mode = GradRamMode::relu_gradients;
  r.layer = "stage1";
  const GradRamConfig back = nlohmann::json(r).get<GradRamConfig>();
  EXPECT_EQ(back.mode, r.mode);
  EXPECT_EQ(back.layer, r.layer);
  EXPECT_EQ(back.age_bin_edges, r.age_bin_edges);
}

TEST(GradRamModel, SubjectMapShapeRangeAndDeterminism) {
  auto model = tiny_model();
  const auto& v = tiny_data().volumes[0];
  const auto m = gradram(model, v, "", GradRamMode::weighted, "s0", "rnc");
  EXPECT_EQ(m.volume.dims, v.dims);
  EXPECT_EQ(m.layer, "stage2");
  EXPECT_EQ(m.tag, "s0");
  EXPECT_TRUE(m.volume.all_finite());
  for (float x : m.volume.voxels) {
    ASSERT_GE(x, 0.0f);
    ASSERT_LE(x, 1.0f);
  }
  EXPECT_EQ(gradram(model, v).volume, m.volume);
  const auto sc = m.sidecar();
  EXPECT_EQ(sc["mode"], "weighted");
  EXPECT_EQ(sc["model"], "rnc");
}

TEST(GradRamModel, HeadBiasAndPositiveWeightScaleDoNotChangeMap) {
  auto model = tiny_model(50.0);
  const auto& v = tiny_data().volumes[1];
  const auto base = gradram(model, v, "stage1");
  model.head.bias[0] = -7.0;
  for (auto& w : model.head.weight.data()) w *= 4.0;
  const auto m = gradram(model, v, "stage1");
  for (std::size_t i = 0; i < m.volume.count(); ++i) ASSERT_NEAR(m.volume.voxels[i], base.volume.voxels[i], 1e-5);
}

TEST(GradRamModel, RequiresHeadAndKnownLayer) {
  AgeModel<double> m(tiny_encoder());
  EXPECT_THROW(gradram(m, tiny_data().volumes[0]), std::logic_error);
  auto ok = tiny_model();
  EXPECT_ANY_THROW(gradram(ok, tiny_data().volumes[0], "stage9"));
}

TEST(GroupSaliencyTest, SexGroupsAndSkippedBins) {
  auto model = tiny_model();
  const auto& data = tiny_data();
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), 0);
  GradRamConfig cfg;
  const auto by_sex = group_saliency(model, data, all, Grouping::sex, cfg, "rnc");
  std::set<int> sexes;
  for (const auto& s : data.samples) sexes.insert(s.sex);
  EXPECT_EQ(by_sex.groups.size(), sexes.size());
  std::size_t members = 0;
  for (const auto& g : by_sex.groups) {
    members += g.average.group_size;
    EXPECT_GE(g.informative_fraction, 0.0);
    EXPECT_LE(g.informative_fraction, 1.0);
    EXPECT_FALSE(g.scores.rows.empty());
  }
  EXPECT_EQ(members, all.size());
  const double mean = mean_informative_fraction(by_sex);
  EXPECT_GE(mean, 0.0);

  // A single subject fills exactly one age bin.
  const auto one = group_saliency(model, data, {0}, Grouping::age, cfg, "rnc");
  ASSERT_EQ(one.groups.size(), 1u);
  EXPECT_EQ(one.groups[0].average.tag, age_bin(data.samples[0].age, cfg.age_bin_edges));
  EXPECT_EQ(one.skipped.size(), 3u);
  EXPECT_EQ(one.groups[0].atlas.labels, data.atlases[0].labels);
}
