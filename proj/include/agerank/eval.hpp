#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/io.hpp"
#include "agerank/stats.hpp"

namespace agerank {

inline constexpr const char* kBuildVersion = "0.1.0";

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Stamped into every output: which config, seed and build produced it.
struct Provenance {
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;

  std::string config_hash() const { return hex64(fnv1a(config.dump())); }

  nlohmann::json to_json() const {
    return {{"config", config}, {"config_hash", config_hash()}, {"seed", seed}, {"build_version", kBuildVersion}};
  }

  /// One-line comment header for CSV outputs.
  std::string csv_header() const {
    return "# config_hash=" + config_hash() + " seed=" + std::to_string(seed) + " build=" + kBuildVersion + "\n";
  }
};

struct SamplePrediction {
  std::string id;
  double age = 0.0;
  double prediction = 0.0;
  double bag = 0.0;  // prediction - age
};

struct CorrelationEntry {
  std::string covariate;
  stats::Correlation pearson;
  stats::Correlation spearman;
};

struct PairedComparison {
  std::string model_a, model_b;
  stats::TTest test;  // on |e_a| - |e_b|
};

struct EvalReport {
  std::string model_id;
  std::vector<SamplePrediction> samples;
  stats::MaeR2 metrics;
  double mean_bag = 0.0;
  double std_bag = 0.0;
  stats::TTest bag_test;
  std::optional<PairedComparison> paired;
  std::vector<CorrelationEntry> correlations;
};

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Aggregates per-sample predictions into a report.
inline EvalReport evaluate(const std::string& model_id, const std::vector<std::string>& ids,
                           const std::vector<double>& ages, const std::vector<double>& predictions) {
  if (ids.empty()) throw EvalError("evaluate: empty test split");
  if (ids.size() != ages.size() || ages.size() != predictions.size()) {
    throw EvalError("evaluate: ids, ages and predictions differ in length");
  }
  EvalReport r;
  r.model_id = model_id;
  for (std::size_t i = 0; i < ids.size(); ++i) r.samples.push_back({ids[i], ages[i], predictions[i], predictions[i] - ages[i]});
  r.metrics = stats::mae_r2(predictions, ages);
  const auto b = stats::bag_stats(predictions, ages);
  r.mean_bag = b.test.mean;
  r.std_bag = b.test.std;
  r.bag_test = b.test;
  return r;
}

inline std::vector<double> signed_errors(const EvalReport& r) {
  std::vector<double> e;
  for (const auto& s : r.samples) e.push_back(s.bag);
  return e;
}

/// Paired absolute-error test of `a` against `b`; both must cover the same ids in order.
inline PairedComparison compare(const EvalReport& a, const EvalReport& b) {
  if (a.samples.size() != b.samples.size()) throw EvalError("compare: reports cover different sample counts");
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (a.samples[i].id != b.samples[i].id) {
      throw EvalError("compare: sample " + std::to_string(i) + " differs (" + a.samples[i].id + " vs " + b.samples[i].id + ")");
    }
  }
  return {a.model_id, b.model_id, stats::paired_abs_error_ttest(signed_errors(a), signed_errors(b))};
}

/// Correlates each sample's BAG with a covariate.
inline CorrelationEntry correlate_bag(const EvalReport& r, const std::string& name, const std::vector<double>& covariate) {
  const auto bag = signed_errors(r);
  return {name, stats::pearson(bag, covariate), stats::spearman(bag, covariate)};
}

/// Spearman correlation between |y_i - y_j| and ||e_i - e_j|| over all pairs i < j.
inline stats::Correlation ordering_spearman(const std::vector<std::vector<double>>& embeddings,
                                            const std::vector<double>& ages) {
  if (embeddings.size() != ages.size()) throw EvalError("ordering_spearman: embeddings and ages differ in length");
  std::vector<double> label_gap, distance;
  for (std::size_t i = 0; i < ages.size(); ++i) {
    for (std::size_t j = i + 1; j < ages.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < embeddings[i].size(); ++c) {
        const double d = embeddings[i][c] - embeddings[j][c];
        s += d * d;
      }
      label_gap.push_back(std::abs(ages[i] - ages[j]));
      distance.push_back(std::sqrt(s));
    }
  }
  return stats::spearman(label_gap, distance);
}

// ---------------------------------------------------------------------------
// Serialization. Non-finite t statistics (degenerate tests) are written as null.

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json ttest_json(const stats::TTest& t) {
  return {{"mean", t.mean}, {"std", t.std}, {"t", finite_or_null(t.t)},
          {"df", t.df},     {"p", t.p},     {"degenerate", t.degenerate}};
}

inline stats::TTest ttest_from_json(const nlohmann::json& j) {
  stats::TTest t;
  t.mean = j.at("mean");
  t.std = j.at("std");
  t.df = j.at("df");
  t.p = j.at("p");
  t.degenerate = j.at("degenerate");
  if (j.at("t").is_null()) {
    t.t = t.mean >= 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  } else {
    t.t = j.at("t");
  }
  return t;
}

inline nlohmann::json correlation_json(const stats::Correlation& c) { return {{"r", c.r}, {"p", c.p}, {"n", c.n}}; }

inline stats::Correlation correlation_from_json(const nlohmann::json& j) { return {j.at("r"), j.at("p"), j.at("n")}; }

inline nlohmann::json report_json(const EvalReport& r, const Provenance& prov) {
  nlohmann::json j;
  j["provenance"] = prov.to_json();
  j["model_id"] = r.model_id;
  j["n"] = r.samples.size();
  j["mae"] = r.metrics.mae;
  j["mae_std"] = r.metrics.std_abs;
  j["r2"] = r.metrics.r2;
  j["mean_bag"] = r.mean_bag;
  j["std_bag"] = r.std_bag;
  j["bag_ttest"] = ttest_json(r.bag_test);
  if (r.paired) {
    j["paired_ttest"] = {{"model_a", r.paired->model_a}, {"model_b", r.paired->model_b}, {"test", ttest_json(r.paired->test)}};
  }
  j["correlations"] = nlohmann::json::array();
  for (const auto& c : r.correlations) {
    j["correlations"].push_back(
        {{"covariate", c.covariate}, {"pearson", correlation_json(c.pearson)}, {"spearman", correlation_json(c.spearman)}});
  }
  j["samples"] = nlohmann::json::array();
  for (const auto& s : r.samples) {
    j["samples"].push_back({{"id", s.id}, {"age", s.age}, {"prediction", s.prediction}, {"bag", s.bag}});
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model_id = j.at("model_id");
  r.metrics = {j.at("mae"), j.at("mae_std"), j.at("r2")};
  r.mean_bag = j.at("mean_bag");
  r.std_bag = j.at("std_bag");
  r.bag_test = ttest_from_json(j.at("bag_ttest"));
  if (j.contains("paired_ttest")) {
    const auto& p = j["paired_ttest"];
    r.paired = PairedComparison{p.at("model_a"), p.at("model_b"), ttest_from_json(p.at("test"))};
  }
  for (const auto& c : j.at("correlations")) {
    r.correlations.push_back({c.at("covariate"), correlation_from_json(c.at("pearson")), correlation_from_json(c.at("spearman"))});
  }
  for (const auto& s : j.at("samples")) r.samples.push_back({s.at("id"), s.at("age"), s.at("prediction"), s.at("bag")});
  return r;
}

inline std::string samples_csv(const EvalReport& r, const Provenance& prov) {
  std::ostringstream os;
  os << prov.csv_header() << "id,age,prediction,bag\n";
  char buf[128];
  for (const auto& s : r.samples) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", s.age, s.prediction, s.bag);
    os << s.id << buf;
  }
  return os.str();
}

/// Writes <dir>/<stem>.json and <dir>/<stem>.csv.
inline void emit_report(const EvalReport& r, const Provenance& prov, const std::filesystem::path& dir,
                        const std::string& stem = "report") {
  if (r.samples.empty()) throw EvalError("emit_report: report has no samples (empty test split)");
  io::atomic_write(dir / (stem + ".json"), report_json(r, prov).dump(2) + "\n");
  io::atomic_write(dir / (stem + ".csv"), samples_csv(r, prov));
}

}  // namespace agerank
