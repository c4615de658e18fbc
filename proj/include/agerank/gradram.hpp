#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/encoder.hpp"
#include "agerank/ops.hpp"
#include "agerank/phantom.hpp"
#include "agerank/volume.hpp"

namespace agerank {

/// weighted: ReLU(sum_c mean(dy/dA_c) * A_c).
/// relu_gradients: max(0, sum_c mean(ReLU(dy/dA_c)) * A_c).
enum class GradRamMode { weighted, relu_gradients };

inline std::string to_string(GradRamMode m) { return m == GradRamMode::relu_gradients ? "relu-gradients" : "weighted"; }

inline GradRamMode parse_gradram_mode(const std::string& s) {
  if (s == "weighted") return GradRamMode::weighted;
  if (s == "relu-gradients") return GradRamMode::relu_gradients;
  throw ConfigError("gradram: unknown mode '" + s + "' (expected weighted or relu-gradients)");
}

struct GradRamConfig {
  std::string layer;  // empty: the encoder's configured target layer
  GradRamMode mode = GradRamMode::weighted;
  double threshold = 0.80;
  std::vector<double> age_bin_edges{20, 40, 60, 80};  // last bin is open-ended

  void validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("gradram config: threshold must lie in [0,1]");
    if (age_bin_edges.empty()) throw ConfigError("gradram config: at least one age bin edge is required");
    for (std::size_t i = 1; i < age_bin_edges.size(); ++i)
      if (!(age_bin_edges[i] > age_bin_edges[i - 1])) throw ConfigError("gradram config: age bin edges must increase");
  }
};

inline void to_json(nlohmann::json& j, const GradRamConfig& c) {
  j = {{"layer", c.layer}, {"mode", to_string(c.mode)}, {"threshold", c.threshold}, {"age_bin_edges", c.age_bin_edges}};
}

inline void from_json(const nlohmann::json& j, GradRamConfig& c) {
  GradRamConfig d;
  c.layer = j.value("layer", d.layer);
  c.mode = parse_gradram_mode(j.value("mode", to_string(d.mode)));
  c.threshold = j.value("threshold", d.threshold);
  c.age_bin_edges = j.value("age_bin_edges", d.age_bin_edges);
}

struct SaliencyMap {
  Volume volume;  // values in [0,1]
  std::string tag;  // subject id or group name
  std::string model_id;
  std::string layer;
  GradRamMode mode = GradRamMode::weighted;
  double raw_min = 0.0;  // before normalisation
  double raw_max = 0.0;
  std::size_t group_size = 1;

  nlohmann::json sidecar() const {
    return {{"tag", tag},         {"model", model_id},     {"layer", layer},          {"mode", to_string(mode)},
            {"raw_min", raw_min}, {"raw_max", raw_max},   {"group_size", group_size}, {"dims", volume.dims}};
  }
};

/// Min-max normalisation to [0,1]; constant maps become all zeros.
/// Returns the pre-normalisation (min, max).
inline std::pair<double, double> normalize_map(Volume& v) {
  if (v.voxels.empty()) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(v.voxels.begin(), v.voxels.end());
  const double mn = *lo, mx = *hi;
  if (mx == mn) {
    std::fill(v.voxels.begin(), v.voxels.end(), 0.0f);
  } else {
    for (auto& x : v.voxels) x = static_cast<float>((x - mn) / (mx - mn));
  }
  return {mn, mx};
}

/// Raw (nonnegative) map on the activation grid from A [C,d,h,w] and dy/dA.
template <typename T>
Tensor<double> gradram_raw(const Tensor<T>& act, const Tensor<T>& grad, GradRamMode mode) {
  if (act.rank() != 4 || act.shape() != grad.shape()) {
    throw ShapeError("gradram: activation " + to_string(act.shape()) + " and gradient " + to_string(grad.shape()) +
                     " must both be [C,d,h,w]");
  }
  const std::size_t C = act.dim(0), S = act.dim(1) * act.dim(2) * act.dim(3);
  Tensor<double> raw({act.dim(1), act.dim(2), act.dim(3)}, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double alpha = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      const double g = grad[c * S + s];
      alpha += mode == GradRamMode::relu_gradients ? std::max(g, 0.0) : g;
    }
    alpha /= static_cast<double>(S);
    for (std::size_t s = 0; s < S; ++s) raw[s] += alpha * static_cast<double>(act[c * S + s]);
  }
  for (auto& x : raw.data()) x = std::max(x, 0.0);
  return raw;
}

/// Trilinear (half-pixel) upsampling of a [d,h,w] map to volume dims (x,y,z).
inline Volume upsample_map(const Tensor<double>& raw, const std::array<std::size_t, 3>& dims) {
  if (raw.rank() != 3) throw ShapeError("upsample_map: expected [d,h,w], got " + to_string(raw.shape()));
  Volume out(dims, 0.0f);
  const auto tz = ops::detail::lerp_taps(raw.dim(0), dims[2]);
  const auto ty = ops::detail::lerp_taps(raw.dim(1), dims[1]);
  const auto tx = ops::detail::lerp_taps(raw.dim(2), dims[0]);
  std::vector<double> dst(out.count());
  ops::detail::trilinear_forward(raw.raw(), {raw.dim(0), raw.dim(1), raw.dim(2)}, dst.data(), {dims[2], dims[1], dims[0]},
                                 tz, ty, tx);
  for (std::size_t i = 0; i < dst.size(); ++i) out.voxels[i] = static_cast<float>(dst[i]);
  return out;
}

template <typename T>
SaliencyMap saliency_from_activations(const Tensor<T>& act, const Tensor<T>& grad, const std::array<std::size_t, 3>& dims,
                                      GradRamMode mode) {
  SaliencyMap m;
  m.mode = mode;
  m.volume = upsample_map(gradram_raw(act, grad, mode), dims);
  std::tie(m.raw_min, m.raw_max) = normalize_map(m.volume);
  return m;
}

/// Per-subject Grad-RAM saliency volume.
template <typename T>
SaliencyMap gradram(AgeModel<T>& model, const Volume& v, const std::string& layer = "",
                    GradRamMode mode = GradRamMode::weighted, const std::string& tag = "",
                    const std::string& model_id = "") {
  if (!model.has_head) throw std::logic_error("gradram: model has no trained regression head");
  const auto ag = forward_with_activations(model, v, layer);
  SaliencyMap m = saliency_from_activations(ag.activation, ag.gradient, v.dims, mode);
  m.layer = ag.layer;
  m.tag = tag;
  m.model_id = model_id;
  return m;
}

/// Label "20-40", "40-60", "60-80", "80+" style age bin; ages below the first
/// edge fall in the first bin.
inline std::string age_bin(double age, const std::vector<double>& edges) {
  auto fmt = [](double x) {
    char b[32];
    std::snprintf(b, sizeof b, "%g", x);
    return std::string(b);
  };
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (age < edges[i]) return fmt(edges[i - 1]) + "-" + fmt(edges[i]);
  return fmt(edges.back()) + "+";
}

inline std::vector<std::string> age_bin_names(const std::vector<double>& edges) {
  std::vector<std::string> n;
  for (std::size_t i = 0; i < edges.size(); ++i) n.push_back(age_bin(edges[i], edges));
  return n;
}

/// Voxelwise mean of the maps assigned to each group. Every name in `groups`
/// must receive at least one map.
inline std::vector<SaliencyMap> group_average(const std::vector<SaliencyMap>& maps,
                                              const std::vector<std::string>& assignment,
                                              const std::vector<std::string>& groups) {
  if (maps.size() != assignment.size()) {
    throw std::invalid_argument("group_average: " + std::to_string(maps.size()) + " maps but " +
                                std::to_string(assignment.size()) + " group assignments");
  }
  std::vector<SaliencyMap> out;
  for (const auto& g : groups) {
    SaliencyMap avg;
    std::vector<double> acc;
    std::size_t n = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      if (assignment[i] != g) continue;
      const auto& m = maps[i];
      if (n == 0) {
        avg = m;
        acc.assign(m.volume.count(), 0.0);
      } else if (m.volume.dims != avg.volume.dims) {
        throw ShapeError("group_average: map dims differ within group " + g);
      }
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += m.volume.voxels[k];
      ++n;
    }
    if (n == 0) throw std::invalid_argument("group_average: group '" + g + "' is empty");
    for (std::size_t k = 0; k < acc.size(); ++k) avg.volume.voxels[k] = static_cast<float>(acc[k] / n);
    avg.tag = g;
    avg.group_size = n;
    avg.raw_min = avg.raw_max = 0.0;
    out.push_back(std::move(avg));
  }
  return out;
}

struct ParcelScore {
  int label = 0;
  std::string name;
  double mean = 0.0;
  bool relevant = false;
  std::size_t voxels = 0;
};

struct ParcelScoreTable {
  std::vector<ParcelScore> rows;  // sorted by decreasing mean
  double threshold = 0.80;

  std::string csv() const {
    std::ostringstream os;
    os << "label,name,mean,relevant\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.17g", r.mean);
      os << r.label << ',' << r.name << ',' << buf << ',' << (r.relevant ? 1 : 0) << '\n';
    }
    return os.str();
  }
};

/// Mean saliency inside every nonzero label present in the atlas.
inline ParcelScoreTable parcel_scores(const Volume& map, const ParcellationAtlas& atlas, double threshold = 0.80) {
  if (map.dims != atlas.dims || map.count() != atlas.labels.size())
    throw ShapeError("parcel_scores: map and atlas dims differ");
  std::map<int, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < atlas.labels.size(); ++i) {
    const int l = atlas.labels[i];
    if (l == 0) continue;
    auto& a = acc[l];
    a.first += map.voxels[i];
    ++a.second;
  }
  if (acc.empty()) throw std::invalid_argument("parcel_scores: atlas has no nonzero labels");
  ParcelScoreTable t;
  t.threshold = threshold;
  for (const auto& [l, a] : acc) {
    ParcelScore s;
    s.label = l;
    s.name = static_cast<std::size_t>(l) < atlas.names.size() ? atlas.names[l] : "label_" + std::to_string(l);
    s.mean = a.first / static_cast<double>(a.second);
    s.relevant = s.mean > threshold;
    s.voxels = a.second;
    t.rows.push_back(s);
  }
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
  return t;
}

/// Voxelwise majority label over a group of atlases (ties go to the lower label).
inline ParcellationAtlas majority_atlas(const std::vector<const ParcellationAtlas*>& atlases) {
  if (atlases.empty()) throw std::invalid_argument("majority_atlas: no atlases");
  ParcellationAtlas out = *atlases.front();
  int max_label = 0;
  for (const auto* a : atlases) {
    if (a->dims != out.dims) throw ShapeError("majority_atlas: atlas dims differ");
    for (int l : a->labels) max_label = std::max(max_label, l);
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto* a : atlases) ++counts[static_cast<std::size_t>(a->labels[i])];
    out.labels[i] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return out;
}

/// Fraction of total saliency mass on the atlas's informative labels.
inline double informative_mass_fraction(const Volume& map, const ParcellationAtlas& atlas) {
  if (map.dims != atlas.dims || map.count() != atlas.labels.size())
    throw ShapeError("informative_mass_fraction: map and atlas dims differ");
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < map.count(); ++i) {
    total += map.voxels[i];
    if (atlas.informative.count(atlas.labels[i])) inside += map.voxels[i];
  }
  return total > 0.0 ? inside / total : 0.0;
}

inline void write_saliency(const std::filesystem::path& stem, const SaliencyMap& m) {
  write_volume(stem.string() + ".rvol", m.volume);
  io::atomic_write(stem.string() + ".json", m.sidecar().dump(2) + "\n");
}

enum class Grouping { age, sex };

inline Grouping parse_grouping(const std::string& s) {
  if (s == "age") return Grouping::age;
  if (s == "sex") return Grouping::sex;
  throw ConfigError("saliency: unknown grouping '" + s + "' (expected age or sex)");
}

struct GroupResult {
  SaliencyMap average;
  ParcellationAtlas atlas;  // voxelwise majority over the group's members
  ParcelScoreTable scores;
  double informative_fraction = 0.0;
};

struct GroupSaliency {
  std::vector<GroupResult> groups;
  std::vector<std::string> skipped;  // configured groups with no members
};

/// Per-subject maps for `subjects`, averaged per group and scored against the
/// group's majority atlas. Empty groups are skipped and reported.
template <typename T>
GroupSaliency group_saliency(AgeModel<T>& model, const Dataset& data, const std::vector<std::size_t>& subjects,
                             Grouping grouping, const GradRamConfig& cfg, const std::string& model_id) {
  cfg.validate();
  std::vector<std::string> names;
  if (grouping == Grouping::age) {
    names = age_bin_names(cfg.age_bin_edges);
  } else {
    names = {"sex0", "sex1"};
  }
  std::vector<SaliencyMap> maps;
  std::vector<std::string> assignment;
  for (std::size_t i : subjects) {
    const auto& s = data.samples.at(i);
    maps.push_back(gradram(model, data.volumes.at(i), cfg.layer, cfg.mode, s.id, model_id));
    assignment.push_back(grouping == Grouping::age ? age_bin(s.age, cfg.age_bin_edges) : "sex" + std::to_string(s.sex));
  }
  GroupSaliency out;
  std::vector<std::string> present;
  for (const auto& g : names) {
    if (std::find(assignment.begin(), assignment.end(), g) == assignment.end()) {
      out.skipped.push_back(g);
    } else {
      present.push_back(g);
    }
  }
  auto averages = group_average(maps, assignment, present);
  for (std::size_t k = 0; k < present.size(); ++k) {
    std::vector<const ParcellationAtlas*> members;
    for (std::size_t m = 0; m < subjects.size(); ++m)
      if (assignment[m] == present[k]) members.push_back(&data.atlases.at(subjects[m]));
    GroupResult r;
    r.atlas = majority_atlas(members);
    r.scores = parcel_scores(averages[k].volume, r.atlas, cfg.threshold);
    r.informative_fraction = informative_mass_fraction(averages[k].volume, r.atlas);
    r.average = std::move(averages[k]);
    out.groups.push_back(std::move(r));
  }
  return out;
}

/// Mean of the per-group informative fractions.
inline double mean_informative_fraction(const GroupSaliency& g) {
  if (g.groups.empty()) throw std::invalid_argument("mean_informative_fraction: no groups");
  double s = 0.0;
  for (const auto& r : g.groups) s += r.informative_fraction;
  return s / static_cast<double>(g.groups.size());
}

}  // namespace agerank
