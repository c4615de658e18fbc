#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/io.hpp"
#include "agerank/rng.hpp"
#include "agerank/volume.hpp"

namespace agerank {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Synthetic "aging phantom": a spherical cortical shell that thins with age,
/// a central ventricle that grows (exponent 1.2), two subcortical blobs that
/// fade, and age-independent distractor blobs.
struct PhantomConfig {
  std::array<std::size_t, 3> dims{32, 32, 32};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  double age_min = 20.0;
  double age_max = 100.0;

  double shell_outer_radius = 14.0;
  double shell_thickness_min = 2.0;  // at age_max
  double shell_thickness_max = 4.0;  // at age_min
  double ventricle_radius_min = 2.0;
  double ventricle_radius_max = 7.0;
  double ventricle_exponent = 1.2;
  std::array<double, 3> ventricle_axes{1.0, 0.6, 0.6};  // semi-axes relative to the radius

  double blob_radius = 1.8;
  double blob_offset = 6.0;            // along y, either side of the centre
  double blob_intensity_young = 1.0;   // at age_min
  double blob_intensity_old = 0.4;     // at age_max

  std::size_t distractor_count = 24;
  double distractor_radius_min = 1.5;
  double distractor_radius_max = 3.5;
  bool distractors_inside = false;  // inside the head, in tissue no informative structure reaches

  double intensity_tissue = 0.45;
  double intensity_shell = 0.55;
  double intensity_ventricle = 0.12;
  double intensity_distractor = 0.1;      // lower bound of the per-distractor intensity
  double intensity_distractor_max = 1.0;  // upper bound

  double noise_sigma = 0.02;
  std::uint64_t seed = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("phantom config: " + m); };
    for (auto d : dims)
      if (d < 8) fail("every dimension must be >= 8");
    for (auto s : spacing)
      if (!(s > 0.0f)) fail("spacing must be positive");
    if (!(age_max > age_min)) fail("age range must satisfy age_min < age_max");
    if (!(shell_thickness_max > shell_thickness_min) || shell_thickness_min <= 0.0)
      fail("shell thickness bounds must satisfy 0 < th_min < th_max");
    if (!(ventricle_radius_max > ventricle_radius_min) || ventricle_radius_min <= 0.0)
      fail("ventricle radius bounds must satisfy 0 < r_min < r_max");
    if (!(ventricle_exponent > 0.0)) fail("ventricle exponent must be positive");
    if (noise_sigma < 0.0) fail("noise sigma must be nonnegative");
    if (distractor_count > 250) fail("too many distractors");
    if (!(distractor_radius_max >= distractor_radius_min) || distractor_radius_min <= 0.0)
      fail("distractor radius bounds must be ordered and positive");
    if (!(intensity_distractor_max >= intensity_distractor)) fail("distractor intensity bounds must be ordered");
    const double half = 0.5 * static_cast<double>(*std::min_element(dims.begin(), dims.end()));
    if (shell_outer_radius >= half) fail("geometry exceeds dims: shell radius does not fit the volume");
    if (shell_outer_radius - shell_thickness_max <= 0.0) fail("geometry exceeds dims: shell thicker than its radius");
    const double vmax = ventricle_radius_max * *std::max_element(ventricle_axes.begin(), ventricle_axes.end());
    if (vmax >= shell_outer_radius - shell_thickness_max)
      fail("geometry exceeds dims: ventricle does not fit inside the shell");
    if (blob_offset + blob_radius >= shell_outer_radius) fail("geometry exceeds dims: blobs outside the shell");
  }

  double age_fraction(double age) const { return (age - age_min) / (age_max - age_min); }

  double shell_thickness(double age) const {
    return shell_thickness_max - (shell_thickness_max - shell_thickness_min) * age_fraction(age);
  }

  double ventricle_radius(double age) const {
    return ventricle_radius_min +
           (ventricle_radius_max - ventricle_radius_min) * std::pow(age_fraction(age), ventricle_exponent);
  }

  double blob_intensity(double age) const {
    return blob_intensity_young + (blob_intensity_old - blob_intensity_young) * age_fraction(age);
  }
};

/// Integer label volume plus names. Labels: 0 background, 1 shell,
/// 2 ventricle, 3-4 blobs, 5+ distractors.
struct ParcellationAtlas {
  std::array<std::size_t, 3> dims{};
  std::vector<int> labels;
  std::vector<std::string> names;
  std::set<int> informative;

  std::size_t label_count() const { return names.size(); }

  std::size_t voxels_with(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  Volume as_volume() const {
    Volume v(dims);
    for (std::size_t i = 0; i < labels.size(); ++i) v.voxels[i] = static_cast<float>(labels[i]);
    return v;
  }

  static ParcellationAtlas from_volume(const Volume& v, std::size_t distractors) {
    ParcellationAtlas a;
    a.dims = v.dims;
    a.labels.resize(v.count());
    for (std::size_t i = 0; i < v.count(); ++i) a.labels[i] = static_cast<int>(std::lround(v.voxels[i]));
    a.names = standard_names(distractors);
    a.informative = {1, 2, 3, 4};
    return a;
  }

  static std::vector<std::string> standard_names(std::size_t distractors) {
    std::vector<std::string> n{"background", "shell", "ventricle", "blob_a", "blob_b"};
    for (std::size_t i = 0; i < distractors; ++i) n.push_back("distractor_" + std::to_string(i));
    return n;
  }
};

struct Phantom {
  Volume volume;
  ParcellationAtlas atlas;
};

/// True when a ball of radius `margin` at offset (x,y,z) from the centre
/// misses the largest ventricle and both blobs.
inline bool clear_of_informative(const PhantomConfig& cfg, double x, double y, double z, double margin) {
  const double rv = cfg.ventricle_radius_max;
  const std::array<double, 3> va{rv * cfg.ventricle_axes[0] + margin, rv * cfg.ventricle_axes[1] + margin,
                                 rv * cfg.ventricle_axes[2] + margin};
  if (x * x / (va[0] * va[0]) + y * y / (va[1] * va[1]) + z * z / (va[2] * va[2]) <= 1.0) return false;
  for (double off : {-cfg.blob_offset, cfg.blob_offset}) {
    const double by = y - off;
    if (std::sqrt(x * x + by * by + z * z) <= cfg.blob_radius + margin) return false;
  }
  return true;
}

/// Sex-analog tag: selects the z-hemisphere in which distractors are placed.
inline Phantom generate_phantom(double age, std::uint64_t seed, const PhantomConfig& cfg, int sex = 0) {
  cfg.validate();
  if (!(age >= cfg.age_min && age <= cfg.age_max)) {
    throw ConfigError("generate_phantom: age " + std::to_string(age) + " outside [" + std::to_string(cfg.age_min) +
                      ", " + std::to_string(cfg.age_max) + "]");
  }
  const auto [nx, ny, nz] = cfg.dims;
  const double cx = 0.5 * static_cast<double>(nx - 1);
  const double cy = 0.5 * static_cast<double>(ny - 1);
  const double cz = 0.5 * static_cast<double>(nz - 1);

  Phantom p;
  p.volume = Volume(cfg.dims, 0.0f);
  p.volume.spacing = cfg.spacing;
  p.atlas.dims = cfg.dims;
  p.atlas.labels.assign(p.volume.count(), 0);
  p.atlas.names = ParcellationAtlas::standard_names(cfg.distractor_count);
  p.atlas.informative = {1, 2, 3, 4};

  const double r_out = cfg.shell_outer_radius;
  const double r_in = r_out - cfg.shell_thickness(age);
  const double rv = cfg.ventricle_radius(age);
  const std::array<double, 3> va{rv * cfg.ventricle_axes[0], rv * cfg.ventricle_axes[1], rv * cfg.ventricle_axes[2]};
  const double blob_i = cfg.blob_intensity(age);

  // Distractors: stream depends on (seed, sex) only, never on age.
  struct Sphere {
    double x, y, z, r, value;
  };
  std::vector<Sphere> distractors;
  {
    Rng rng = make_rng(seed, {0xd157ULL, static_cast<std::uint64_t>(sex)});
    std::size_t attempts = 0;
    while (distractors.size() < cfg.distractor_count) {
      if (++attempts > 100000) throw ConfigError("generate_phantom: cannot place the distractors");
      const double r = uniform(rng, cfg.distractor_radius_min, cfg.distractor_radius_max);
      const double x = uniform(rng, r, static_cast<double>(nx - 1) - r);
      const double y = uniform(rng, r, static_cast<double>(ny - 1) - r);
      const double z = sex == 0 ? uniform(rng, r, cz) : uniform(rng, cz, static_cast<double>(nz - 1) - r);
      const double value = uniform(rng, cfg.intensity_distractor, cfg.intensity_distractor_max);
      const double dc = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz));
      if (cfg.distractors_inside) {
        if (dc + r + 0.5 > r_out - cfg.shell_thickness_max) continue;
        if (!clear_of_informative(cfg, x - cx, y - cy, z - cz, r + 0.5)) continue;
      } else if (dc < r_out + r + 1.0) {
        continue;
      }
      bool clash = false;
      for (const auto& s : distractors) {
        const double d = std::sqrt((x - s.x) * (x - s.x) + (y - s.y) * (y - s.y) + (z - s.z) * (z - s.z));
        if (d < r + s.r + 1.0) clash = true;
      }
      if (!clash) distractors.push_back({x, y, z, r, value});
    }
  }

  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double dz = static_cast<double>(z) - cz;
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        int label = 0;
        double value = 0.0;
        if (d <= r_out) {
          value = cfg.intensity_tissue;
          if (d > r_in) {
            label = 1;
            value = cfg.intensity_shell;
          }
          const double e = (dx * dx) / (va[0] * va[0]) + (dy * dy) / (va[1] * va[1]) + (dz * dz) / (va[2] * va[2]);
          if (e <= 1.0) {
            label = 2;
            value = cfg.intensity_ventricle;
          }
          for (int b = 0; b < 2; ++b) {
            const double by = dy - (b == 0 ? -cfg.blob_offset : cfg.blob_offset);
            if (dx * dx + by * by + dz * dz <= cfg.blob_radius * cfg.blob_radius) {
              label = 3 + b;
              value = blob_i;
            }
          }
        }
        if (label == 0) {
          for (std::size_t k = 0; k < distractors.size(); ++k) {
            const auto& s = distractors[k];
            const double ex = static_cast<double>(x) - s.x, ey = static_cast<double>(y) - s.y,
                         ez = static_cast<double>(z) - s.z;
            if (ex * ex + ey * ey + ez * ez <= s.r * s.r) {
              label = 5 + static_cast<int>(k);
              value = s.value;
            }
          }
        }
        const std::size_t idx = p.volume.index(x, y, z);
        p.atlas.labels[idx] = label;
        p.volume.voxels[idx] = static_cast<float>(value);
      }

  if (cfg.noise_sigma > 0.0) {
    Rng rng = make_rng(seed, {0x401eULL});
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : p.volume.voxels) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct LabeledSample {
  std::string id;
  std::string path;  // volume path relative to the dataset directory
  double age = 0.0;
  std::string group = "NC";
  int sex = 0;
  std::string split = "train";
  std::uint64_t seed = 0;
  double generation_age = 0.0;  // age the phantom was rendered at (age + delta for accelerated samples)

  std::string label_path() const {
    auto p = std::filesystem::path(path);
    return (std::filesystem::path("labels") / p.filename()).generic_string();
  }
};

inline bool valid_split(const std::string& s) { return s == "train" || s == "val" || s == "test"; }

inline void to_json(nlohmann::json& j, const LabeledSample& s) {
  j = nlohmann::json{{"id", s.id},       {"path", s.path}, {"age", s.age},  {"group", s.group},
                     {"sex", s.sex},     {"split", s.split}, {"seed", s.seed}};
  if (s.generation_age != s.age) j["generation_age"] = s.generation_age;
}

inline void from_json(const nlohmann::json& j, LabeledSample& s) {
  j.at("id").get_to(s.id);
  j.at("path").get_to(s.path);
  j.at("age").get_to(s.age);
  j.at("group").get_to(s.group);
  j.at("sex").get_to(s.sex);
  j.at("split").get_to(s.split);
  j.at("seed").get_to(s.seed);
  s.generation_age = j.value("generation_age", s.age);
  if (!valid_split(s.split)) throw ConfigError("manifest: sample " + s.id + " has invalid split '" + s.split + "'");
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  void validate() const {
    if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw ConfigError("split ratios must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  }
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(std::size_t n, const SplitRatios& r) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.train));
  c.val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.val));
  if (c.train + c.val > n) c.val = n - c.train;
  c.test = n - c.train - c.val;
  return c;
}

/// Decade bins covering [age_min, age_max]; the last bin is closed.
inline std::vector<std::pair<double, double>> decade_bins(double age_min, double age_max) {
  std::vector<std::pair<double, double>> bins;
  for (double lo = age_min; lo < age_max - 1e-9; lo += 10.0) bins.emplace_back(lo, std::min(lo + 10.0, age_max));
  return bins;
}

inline std::string sample_id(std::size_t i, const std::string& prefix = "s") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), i);
  return buf;
}

/// Builds a manifest: ages stratified uniformly by decade, disjoint random
/// splits, per-sample seeds derived from (seed, index). Volumes are not rendered.
inline std::vector<LabeledSample> generate_manifest(std::size_t n, const PhantomConfig& cfg, const SplitRatios& ratios,
                                                    std::uint64_t seed, const std::string& prefix = "s") {
  cfg.validate();
  ratios.validate();
  if (n < 10) throw ConfigError("generate_dataset: n must be >= 10, got " + std::to_string(n));
  Rng rng = make_rng(seed, {0x5a3d1eULL});
  const auto bins = decade_bins(cfg.age_min, cfg.age_max);

  // Round-robin over a shuffled bin order keeps every bin within +-1 of n/bins.
  std::vector<std::size_t> order(bins.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<LabeledSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [lo, hi] = bins[order[i % bins.size()]];
    auto& s = out[i];
    s.id = sample_id(i, prefix);
    s.path = "volumes/" + s.id + ".rvol";
    s.age = uniform(rng, lo, hi);
    s.generation_age = s.age;
    s.sex = bernoulli(rng, 0.5) ? 1 : 0;
    s.seed = derive_seed(seed, {0x5eedULL, i});
  }

  const auto counts = split_counts(n, ratios);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t k = 0; k < n; ++k) {
    out[perm[k]].split = k < counts.train ? "train" : (k < counts.train + counts.val ? "val" : "test");
  }
  return out;
}

inline nlohmann::json manifest_to_json(const std::vector<LabeledSample>& samples) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : samples) j.push_back(s);
  return j;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<LabeledSample>& samples) {
  io::atomic_write(path, manifest_to_json(samples).dump(2) + "\n");
}

inline std::vector<LabeledSample> read_manifest(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  const auto j = nlohmann::json::parse(text);
  if (!j.is_array()) throw ConfigError("manifest " + path.string() + " is not a JSON array");
  return j.get<std::vector<LabeledSample>>();
}

/// In-memory dataset: manifest entries with rendered volumes and label maps.
struct Dataset {
  std::vector<LabeledSample> samples;
  std::vector<Volume> volumes;
  std::vector<ParcellationAtlas> atlases;

  std::vector<std::size_t> indices(const std::string& split, const std::string& group = "") const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == split && (group.empty() || samples[i].group == group)) idx.push_back(i);
    return idx;
  }
};

inline Dataset render_dataset(std::vector<LabeledSample> samples, const PhantomConfig& cfg) {
  Dataset d;
  d.volumes.reserve(samples.size());
  d.atlases.reserve(samples.size());
  for (const auto& s : samples) {
    auto p = generate_phantom(s.generation_age, s.seed, cfg, s.sex);
    d.volumes.push_back(std::move(p.volume));
    d.atlases.push_back(std::move(p.atlas));
  }
  d.samples = std::move(samples);
  return d;
}

inline Dataset generate_dataset(std::size_t n, const PhantomConfig& cfg, const SplitRatios& ratios, std::uint64_t seed) {
  return render_dataset(generate_manifest(n, cfg, ratios, seed), cfg);
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    write_volume(dir / d.samples[i].path, d.volumes[i]);
    write_volume(dir / d.samples[i].label_path(), d.atlases[i].as_volume());
  }
  write_manifest(dir / "manifest.json", d.samples);
}

inline Dataset load_dataset(const std::filesystem::path& dir, std::size_t distractors) {
  Dataset d;
  d.samples = read_manifest(dir / "manifest.json");
  for (const auto& s : d.samples) {
    d.volumes.push_back(read_volume(dir / s.path));
    const auto lp = dir / s.label_path();
    if (std::filesystem::exists(lp)) {
      d.atlases.push_back(ParcellationAtlas::from_volume(read_volume(lp), distractors));
    } else {
      d.atlases.push_back(ParcellationAtlas{});
    }
  }
  return d;
}

/// Age-matched cohort for gap studies: n control phantoms ("NC") rendered at
/// their labelled age and n "accelerated" phantoms labelled with the same ages
/// but rendered at age + delta, each with its own seed. All samples are "test".
inline Dataset generate_cohort(std::size_t n, double delta, const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (n < 2) throw ConfigError("generate_cohort: n must be >= 2, got " + std::to_string(n));
  if (!(delta >= 0.0) || delta >= cfg.age_max - cfg.age_min) {
    throw ConfigError("generate_cohort: delta must lie in [0, age range), got " + std::to_string(delta));
  }
  Rng rng = make_rng(seed, {0xc0407ULL});
  std::vector<LabeledSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    const double age = uniform(rng, cfg.age_min, cfg.age_max - delta);
    const int sex = bernoulli(rng, 0.5) ? 1 : 0;
    for (int acc = 0; acc < 2; ++acc) {
      LabeledSample s;
      s.id = sample_id(i, acc ? "acc" : "ctl");
      s.path = "volumes/" + s.id + ".rvol";
      s.age = age;
      s.generation_age = acc ? age + delta : age;
      s.group = acc ? "accelerated" : "NC";
      s.sex = sex;
      s.split = "test";
      s.seed = derive_seed(seed, {0xc0407ULL, static_cast<std::uint64_t>(acc), i});
      samples.push_back(std::move(s));
    }
  }
  return render_dataset(std::move(samples), cfg);
}

}  // namespace agerank
