#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/augment.hpp"
#include "agerank/encoder.hpp"
#include "agerank/eval.hpp"
#include "agerank/gradram.hpp"
#include "agerank/phantom.hpp"
#include "agerank/rnc.hpp"
#include "agerank/train.hpp"

namespace agerank {

inline void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = {{"dims", c.dims},
       {"spacing", c.spacing},
       {"age_min", c.age_min},
       {"age_max", c.age_max},
       {"shell_outer_radius", c.shell_outer_radius},
       {"shell_thickness_min", c.shell_thickness_min},
       {"shell_thickness_max", c.shell_thickness_max},
       {"ventricle_radius_min", c.ventricle_radius_min},
       {"ventricle_radius_max", c.ventricle_radius_max},
       {"ventricle_exponent", c.ventricle_exponent},
       {"ventricle_axes", c.ventricle_axes},
       {"blob_radius", c.blob_radius},
       {"blob_offset", c.blob_offset},
       {"blob_intensity_young", c.blob_intensity_young},
       {"blob_intensity_old", c.blob_intensity_old},
       {"distractor_count", c.distractor_count},
       {"distractor_radius_min", c.distractor_radius_min},
       {"distractor_radius_max", c.distractor_radius_max},
       {"distractors_inside", c.distractors_inside},
       {"intensity_tissue", c.intensity_tissue},
       {"intensity_shell", c.intensity_shell},
       {"intensity_ventricle", c.intensity_ventricle},
       {"intensity_distractor", c.intensity_distractor},
       {"intensity_distractor_max", c.intensity_distractor_max},
       {"noise_sigma", c.noise_sigma},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PhantomConfig& c) {
  const PhantomConfig d;
#define AGERANK_FIELD(name) c.name = j.value(#name, d.name)
  AGERANK_FIELD(dims);
  AGERANK_FIELD(spacing);
  AGERANK_FIELD(age_min);
  AGERANK_FIELD(age_max);
  AGERANK_FIELD(shell_outer_radius);
  AGERANK_FIELD(shell_thickness_min);
  AGERANK_FIELD(shell_thickness_max);
  AGERANK_FIELD(ventricle_radius_min);
  AGERANK_FIELD(ventricle_radius_max);
  AGERANK_FIELD(ventricle_exponent);
  AGERANK_FIELD(ventricle_axes);
  AGERANK_FIELD(blob_radius);
  AGERANK_FIELD(blob_offset);
  AGERANK_FIELD(blob_intensity_young);
  AGERANK_FIELD(blob_intensity_old);
  AGERANK_FIELD(distractor_count);
  AGERANK_FIELD(distractor_radius_min);
  AGERANK_FIELD(distractor_radius_max);
  AGERANK_FIELD(distractors_inside);
  AGERANK_FIELD(intensity_tissue);
  AGERANK_FIELD(intensity_shell);
  AGERANK_FIELD(intensity_ventricle);
  AGERANK_FIELD(intensity_distractor);
  AGERANK_FIELD(intensity_distractor_max);
  AGERANK_FIELD(noise_sigma);
  AGERANK_FIELD(seed);
#undef AGERANK_FIELD
}

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"p_translate", c.p_translate},
       {"p_rotate", c.p_rotate},
       {"p_noise", c.p_noise},
       {"p_crop", c.p_crop},
       {"max_translation", c.max_translation ? nlohmann::json(*c.max_translation) : nlohmann::json(nullptr)},
       {"rotation_min", c.rotation_min},
       {"rotation_max", c.rotation_max},
       {"noise_mean", c.noise_mean},
       {"noise_std", c.noise_std},
       {"crop_min_fraction", c.crop_min_fraction},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
  const AugmentConfig d;
  c.p_translate = j.value("p_translate", d.p_translate);
  c.p_rotate = j.value("p_rotate", d.p_rotate);
  c.p_noise = j.value("p_noise", d.p_noise);
  c.p_crop = j.value("p_crop", d.p_crop);
  c.max_translation.reset();
  if (j.contains("max_translation") && !j["max_translation"].is_null()) c.max_translation = j["max_translation"].get<int>();
  c.rotation_min = j.value("rotation_min", d.rotation_min);
  c.rotation_max = j.value("rotation_max", d.rotation_max);
  c.noise_mean = j.value("noise_mean", d.noise_mean);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.crop_min_fraction = j.value("crop_min_fraction", d.crop_min_fraction);
  c.seed = j.value("seed", d.seed);
}

/// Dataset size and split for `phantom gen`.
struct DataConfig {
  std::size_t n = 200;
  SplitRatios ratios;

  void validate() const {
    ratios.validate();
    if (n < 10) throw ConfigError("data config: n must be >= 10, got " + std::to_string(n));
  }
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"n", c.n}, {"train", c.ratios.train}, {"val", c.ratios.val}, {"test", c.ratios.test}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  const DataConfig d;
  c.n = j.value("n", d.n);
  c.ratios.train = j.value("train", d.ratios.train);
  c.ratios.val = j.value("val", d.ratios.val);
  c.ratios.test = j.value("test", d.ratios.test);
}

/// Accelerated-ageing cohort used for gap statistics.
struct EvalConfig {
  std::size_t cohort_size = 40;  // pairs of control and accelerated subjects
  double delta = 8.0;            // years added to the rendering age of accelerated subjects

  void validate() const {
    if (cohort_size < 3) throw ConfigError("eval config: cohort_size must be >= 3");
    if (!(delta >= 0.0)) throw ConfigError("eval config: delta must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const EvalConfig& c) { j = {{"cohort_size", c.cohort_size}, {"delta", c.delta}}; }

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  const EvalConfig d;
  c.cohort_size = j.value("cohort_size", d.cohort_size);
  c.delta = j.value("delta", d.delta);
}

struct BenchmarkSpec {
  std::size_t n_train = 600, n_val = 75, n_test = 75;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double delta = 8.0;
  std::size_t cohort_size = 40;
  std::size_t saliency_subjects = 75;  // test subjects used for localisation (0: all)

  std::size_t total() const { return n_train + n_val + n_test; }

  SplitRatios ratios() const {
    const double n = static_cast<double>(total());
    return {static_cast<double>(n_train) / n, static_cast<double>(n_val) / n, static_cast<double>(n_test) / n};
  }

  void validate() const {
    if (n_train < 2 || n_val < 2 || n_test < 3) throw ConfigError("benchmark: split sizes too small");
    if (seeds.size() < 2) throw ConfigError("benchmark: comparative claims need >= 2 seeds");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw ConfigError("benchmark: seeds must be distinct");
    if (!(delta >= 0.0)) throw ConfigError("benchmark: delta must be >= 0");
    if (cohort_size < 3) throw ConfigError("benchmark: cohort_size must be >= 3");
  }
};

inline void to_json(nlohmann::json& j, const BenchmarkSpec& c) {
  j = {{"n_train", c.n_train}, {"n_val", c.n_val},         {"n_test", c.n_test},
       {"seeds", c.seeds},     {"delta", c.delta},         {"cohort_size", c.cohort_size},
       {"saliency_subjects", c.saliency_subjects}};
}

inline void from_json(const nlohmann::json& j, BenchmarkSpec& c) {
  const BenchmarkSpec d;
  c.n_train = j.value("n_train", d.n_train);
  c.n_val = j.value("n_val", d.n_val);
  c.n_test = j.value("n_test", d.n_test);
  c.seeds = j.value("seeds", d.seeds);
  c.delta = j.value("delta", d.delta);
  c.cohort_size = j.value("cohort_size", d.cohort_size);
  c.saliency_subjects = j.value("saliency_subjects", d.saliency_subjects);
}

/// Every section of an experiment plus the global seed and output directory.
struct ExperimentConfig {
  DataConfig data;
  PhantomConfig phantom;
  AugmentConfig augment;
  EncoderConfig encoder;
  RncConfig rnc;
  TrainingConfig training;
  GradRamConfig gradram;
  EvalConfig eval;
  BenchmarkSpec benchmark;
  std::uint64_t seed = 1;
  std::string out = "out";

  void validate() const {
    data.validate();
    phantom.validate();
    augment.validate();
    encoder.validate();
    rnc.validate();
    training.validate();
    gradram.validate();
    eval.validate();
    benchmark.validate();
    if (encoder.input_dims != phantom.dims) throw ConfigError("config: encoder input_dims must equal phantom dims");
    if (!gradram.layer.empty() && !encoder.has_layer(gradram.layer))
      throw ConfigError("config: gradram layer '" + gradram.layer + "' is not an encoder layer");
    if (out.empty()) throw ConfigError("config: out must not be empty");
  }
};

namespace config_detail {

/// Rejects keys the section does not define, catching typos before any work.
inline void check_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& section) {
  if (!given.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& [k, v] : given.items()) {
    if (!reference.contains(k)) throw ConfigError("config: unknown key '" + k + "' in section '" + section + "'");
  }
}

template <typename T>
void read_section(const nlohmann::json& j, const char* name, T& out) {
  if (!j.contains(name)) return;
  check_keys(j[name], nlohmann::json(T{}), name);
  try {
    out = j[name].template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: section '") + name + "': " + e.what());
  }
}

}  // namespace config_detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"data", c.data},         {"phantom", c.phantom},   {"augment", c.augment}, {"encoder", c.encoder},
       {"rnc", c.rnc},           {"training", c.training}, {"gradram", c.gradram}, {"eval", c.eval},
       {"benchmark", c.benchmark}, {"seed", c.seed},       {"out", c.out}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  const nlohmann::json reference = ExperimentConfig{};
  config_detail::check_keys(j, reference, "<root>");
  config_detail::read_section(j, "data", c.data);
  config_detail::read_section(j, "phantom", c.phantom);
  config_detail::read_section(j, "augment", c.augment);
  config_detail::read_section(j, "encoder", c.encoder);
  config_detail::read_section(j, "rnc", c.rnc);
  config_detail::read_section(j, "training", c.training);
  config_detail::read_section(j, "gradram", c.gradram);
  config_detail::read_section(j, "eval", c.eval);
  config_detail::read_section(j, "benchmark", c.benchmark);
  try {
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return j.get<ExperimentConfig>();
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path)); }

/// Config as used for one run seed: training, encoder init and manifest all
/// derive from it; the augmentation stream keys on (seed, augment.seed).
inline ExperimentConfig seeded(ExperimentConfig c, std::uint64_t seed) {
  c.seed = seed;
  c.training.seed = seed;
  c.encoder.seed = derive_seed(c.encoder.seed, {seed});
  return c;
}

}  // namespace agerank
