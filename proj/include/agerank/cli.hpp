#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/benchmark.hpp"
#include "agerank/config.hpp"
#include "agerank/eval.hpp"
#include "agerank/gradram.hpp"
#include "agerank/phantom.hpp"
#include "agerank/train.hpp"

namespace agerank::cli {

namespace fs = std::filesystem;

inline constexpr int kOk = 0;
inline constexpr int kValidationError = 2;
inline constexpr int kRuntimeError = 3;

/// Output streams of one invocation.
struct Io {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

inline bool nonempty_dir(const fs::path& p) { return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p); }

inline void require_fresh_output(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out)) throw ConfigError("output path " + out.string() + " is not a directory");
  if (nonempty_dir(out) && !force) {
    throw ConfigError("output directory " + out.string() + " is not empty (use --force to overwrite)");
  }
}

/// Writes the merged config and provenance next to a command's outputs.
inline Provenance echo_config(const fs::path& out, const ExperimentConfig& cfg) {
  Provenance prov{nlohmann::json(cfg), cfg.seed};
  io::atomic_write(out / "config.json", nlohmann::json(cfg).dump(2) + "\n");
  io::atomic_write(out / "provenance.json", prov.to_json().dump(2) + "\n");
  return prov;
}

/// Dataset plus the config it was generated with.
struct DataDir {
  Dataset data;
  ExperimentConfig config;
};

inline DataDir load_data_dir(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ConfigError("data directory " + dir.string() + " has no manifest.json");
  DataDir d;
  if (fs::exists(dir / "config.json")) d.config = load_config(dir / "config.json");
  d.data = load_dataset(dir, d.config.phantom.distractor_count);
  return d;
}

/// Trained model, or a stub: "stub:oracle" returns the true age, "stub:mean"
/// the mean training age.
struct Predictor {
  std::string id;
  std::function<std::vector<double>(const Dataset&, const std::vector<std::size_t>&)> predict;
};

inline Predictor make_predictor(const std::string& spec) {
  if (spec == "stub:oracle") {
    return {"oracle", [](const Dataset& d, const std::vector<std::size_t>& idx) { return train_detail::ages(d, idx); }};
  }
  if (spec == "stub:mean") {
    return {"mean", [](const Dataset& d, const std::vector<std::size_t>& idx) {
              const double m = stats::mean(train_detail::ages(d, d.indices("train")));
              return std::vector<double>(idx.size(), m);
            }};
  }
  if (spec.rfind("stub:", 0) == 0) throw ConfigError("unknown stub model '" + spec + "' (expected stub:oracle or stub:mean)");
  if (!fs::exists(spec)) throw ConfigError("model checkpoint " + spec + " does not exist");
  auto model = std::make_shared<AgeModel<float>>(load_model(Checkpoint::load(spec)));
  if (!model->has_head) throw ConfigError("model checkpoint " + spec + " has no regression head");
  return {fs::path(spec).stem().string(), [model](const Dataset& d, const std::vector<std::size_t>& idx) {
            return model->predict_ages(train_detail::pointers(d, idx));
          }};
}

// ---------------------------------------------------------------------------
// Commands

inline void phantom_gen(const ExperimentConfig& cfg, bool force, bool with_cohort, Io io) {
  cfg.validate();
  const fs::path out = cfg.out;
  require_fresh_output(out, force);
  const auto manifest = generate_manifest(cfg.data.n, cfg.phantom, cfg.data.ratios, cfg.seed);
  const auto d = render_dataset(manifest, cfg.phantom);
  write_dataset(out, d);
  echo_config(out, cfg);
  if (with_cohort) {
    const auto c = generate_cohort(cfg.eval.cohort_size, cfg.eval.delta, cfg.phantom, derive_seed(cfg.seed, {0xc0ULL}));
    write_dataset(out / "cohort", c);
    echo_config(out / "cohort", cfg);
  }
  const auto counts = split_counts(cfg.data.n, cfg.data.ratios);
  io.out << "train " << counts.train << " val " << counts.val << " test " << counts.test << "\n";
  io.out << "manifest checksum " << hex64(fnv1a(io::read_file(out / "manifest.json"))) << "\n";
}

struct TrainArgs {
  fs::path data;
  bool resume = false;
  bool force = false;
  std::optional<std::size_t> halt_after;
};

inline void train(ExperimentConfig cfg, const TrainArgs& a, Io io) {
  cfg.validate();
  const fs::path out = cfg.out;
  if (!a.resume) require_fresh_output(out, a.force);
  auto dd = load_data_dir(a.data);
  for (const auto& v : dd.data.volumes) {
    if (v.dims != cfg.encoder.input_dims) throw ConfigError("data volumes do not match the encoder input dims");
  }
  const auto prov = echo_config(out, cfg);
  TrainOptions opts;
  opts.checkpoint_path = out / "train_state.ckpt";
  opts.resume = a.resume;
  opts.halt_after_epochs = a.halt_after;
  opts.log = [&](const std::string& m) { io.err << m << "\n"; };
  if (a.resume && !fs::exists(opts.checkpoint_path)) io.err << "warning: no checkpoint to resume, starting fresh\n";
  auto r = train_pipeline(dd.data, cfg.encoder, cfg.rnc, cfg.augment, cfg.training, opts);
  io::atomic_write(out / "history.csv", prov.csv_header() + history_csv(r.history));
  nlohmann::json summary = {{"provenance", prov.to_json()},
                            {"pipeline", to_string(cfg.training.pipeline)},
                            {"completed", r.completed},
                            {"epochs_run", r.history.size()},
                            {"best_epoch", r.best_epoch},
                            {"stopped_epoch", r.stopped_epoch},
                            {"encoder_checksum", hex64(r.model.encoder.checksum())}};
  io::atomic_write(out / "train_summary.json", summary.dump(2) + "\n");
  if (!r.completed) {
    io.out << "halted after " << r.history.size() << " epochs; resume with --resume\n";
    return;
  }
  model_checkpoint(r.model, {{"pipeline", to_string(cfg.training.pipeline)}, {"provenance", prov.to_json()}})
      .save(out / "model.ckpt");
  fs::remove(opts.checkpoint_path);  // resume state is only kept for unfinished runs
  io.out << "model written to " << (out / "model.ckpt").string() << "\n";
}

struct EvalArgs {
  std::vector<std::string> models;
  fs::path data;
  std::string split = "test";
};

inline std::vector<EvalReport> eval(const ExperimentConfig& cfg, const EvalArgs& a, Io io) {
  cfg.validate();
  if (a.models.empty() || a.models.size() > 2) throw ConfigError("eval: pass one or two --model values");
  if (!valid_split(a.split)) throw ConfigError("eval: invalid split '" + a.split + "'");
  std::vector<Predictor> predictors;
  for (const auto& m : a.models) predictors.push_back(make_predictor(m));
  if (predictors.size() == 2 && predictors[0].id == predictors[1].id) predictors[1].id += "_b";
  const auto dd = load_data_dir(a.data);
  const auto idx = dd.data.indices(a.split);
  if (idx.empty()) throw EvalError("eval: split '" + a.split + "' is empty");
  std::vector<std::string> ids;
  for (auto i : idx) ids.push_back(dd.data.samples[i].id);
  const auto truth = train_detail::ages(dd.data, idx);
  std::vector<EvalReport> reports;
  for (auto& p : predictors) reports.push_back(evaluate(p.id, ids, truth, p.predict(dd.data, idx)));
  if (reports.size() == 2) reports[0].paired = compare(reports[0], reports[1]);
  const fs::path out = cfg.out;
  const auto prov = echo_config(out, cfg);
  for (const auto& r : reports) {
    emit_report(r, prov, out, r.model_id + "_report");
    io.out << r.model_id << ": MAE " << r.metrics.mae << " +- " << r.metrics.std_abs << " R2 " << r.metrics.r2
           << " mean BAG " << r.mean_bag << "\n";
  }
  if (reports.size() == 2) {
    io.out << "paired |e| t " << reports[0].paired->test.t << " p " << reports[0].paired->test.p << "\n";
  }
  return reports;
}

struct SaliencyArgs {
  std::string model;
  fs::path data;
  std::string grouping = "age";
  std::string split = "test";
};

inline GroupSaliency saliency(const ExperimentConfig& cfg, const SaliencyArgs& a, Io io) {
  cfg.validate();
  const auto grouping = parse_grouping(a.grouping);
  if (!fs::exists(a.model)) throw ConfigError("model checkpoint " + a.model + " does not exist");
  auto model = load_model(Checkpoint::load(a.model));
  if (!model.has_head) throw ConfigError("model checkpoint " + a.model + " has no regression head");
  const auto dd = load_data_dir(a.data);
  const auto idx = dd.data.indices(a.split);
  if (idx.empty()) throw EvalError("saliency: split '" + a.split + "' is empty");
  auto g = group_saliency(model, dd.data, idx, grouping, cfg.gradram, fs::path(a.model).stem().string());
  for (const auto& s : g.skipped) io.err << "warning: group " << s << " has no subjects, skipped\n";
  const fs::path out = cfg.out;
  const auto prov = echo_config(out, cfg);
  for (const auto& r : g.groups) {
    write_saliency(out / ("group_" + r.average.tag), r.average);
    io::atomic_write(out / ("group_" + r.average.tag + "_parcels.csv"), prov.csv_header() + r.scores.csv());
    io.out << r.average.tag << ": " << r.average.group_size << " subjects, informative mass "
           << r.informative_fraction << "\n";
  }
  return g;
}

enum class SweepAxis { batch_size, resolution, depth };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "batch-size") return SweepAxis::batch_size;
  if (s == "resolution") return SweepAxis::resolution;
  if (s == "depth") return SweepAxis::depth;
  throw ConfigError("sweep: unknown axis '" + s + "' (expected batch-size, resolution or depth)");
}

/// Phantom geometry rescaled to a cubic grid of side `dim`.
inline PhantomConfig rescaled_phantom(PhantomConfig p, std::size_t dim) {
  const double f = static_cast<double>(dim) / static_cast<double>(*std::min_element(p.dims.begin(), p.dims.end()));
  p.dims = {dim, dim, dim};
  for (double* x : {&p.shell_outer_radius, &p.shell_thickness_min, &p.shell_thickness_max, &p.ventricle_radius_min,
                    &p.ventricle_radius_max, &p.blob_radius, &p.blob_offset, &p.distractor_radius_min,
                    &p.distractor_radius_max})
    *x *= f;
  return p;
}

/// Config for one sweep point.
inline ExperimentConfig sweep_point(ExperimentConfig cfg, SweepAxis axis, std::size_t value) {
  switch (axis) {
    case SweepAxis::batch_size:
      cfg.training.batch_size = value;
      break;
    case SweepAxis::resolution:
      cfg.phantom = rescaled_phantom(cfg.phantom, value);
      cfg.encoder.input_dims = cfg.phantom.dims;
      break;
    case SweepAxis::depth:
      cfg.encoder.blocks_per_stage = value;
      break;
  }
  return cfg;
}

struct SweepRow {
  std::size_t index = 0;
  std::size_t value = 0;
  EvalReport report;
  std::size_t epochs_run = 0;
};

inline std::string sweep_csv(const std::string& axis, const std::string& pipeline, const std::vector<SweepRow>& rows,
                             const Provenance& prov) {
  std::ostringstream os;
  os << prov.csv_header() << "index,axis,value,pipeline,mae,mae_std,r2,mean_bag,epochs_run\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%zu\n", r.report.metrics.mae, r.report.metrics.std_abs,
                  r.report.metrics.r2, r.report.mean_bag, r.epochs_run);
    os << r.index << ',' << axis << ',' << r.value << ',' << pipeline << buf;
  }
  return os.str();
}

inline std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const std::string& axis_name,
                                   const std::vector<std::size_t>& values, bool force, Io io) {
  cfg.validate();
  const auto axis = parse_axis(axis_name);
  if (values.empty()) throw ConfigError("sweep: --values must list at least one value");
  std::vector<ExperimentConfig> points;
  for (auto v : values) {
    points.push_back(sweep_point(cfg, axis, v));
    try {
      points.back().validate();
    } catch (const ConfigError& e) {
      throw ConfigError("sweep value " + std::to_string(v) + ": " + e.what());
    }
  }
  const fs::path out = cfg.out;
  require_fresh_output(out, force);
  const auto prov = echo_config(out, cfg);
  std::vector<SweepRow> rows;
  std::optional<Dataset> shared;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& pc = points[k];
    io.err << "sweep " << axis_name << "=" << values[k] << "\n";
    Dataset local;
    if (axis == SweepAxis::resolution) {
      local = generate_dataset(pc.data.n, pc.phantom, pc.data.ratios, pc.seed);
    } else if (!shared) {
      shared = generate_dataset(pc.data.n, pc.phantom, pc.data.ratios, pc.seed);
    }
    const Dataset& d = axis == SweepAxis::resolution ? local : *shared;
    TrainingConfig tc = pc.training;
    tc.seed = pc.seed;
    auto tr = train_pipeline(d, pc.encoder, pc.rnc, pc.augment, tc);
    const auto test = d.indices("test");
    std::vector<std::string> ids;
    for (auto i : test) ids.push_back(d.samples[i].id);
    SweepRow row;
    row.index = k;
    row.value = values[k];
    row.epochs_run = tr.history.size();
    row.report = evaluate(to_string(tc.pipeline), ids, train_detail::ages(d, test),
                          tr.model.predict_ages(train_detail::pointers(d, test)));
    io.out << k << " " << axis_name << "=" << values[k] << " MAE " << row.report.metrics.mae << "\n";
    rows.push_back(std::move(row));
  }
  io::atomic_write(out / "summary.csv", sweep_csv(axis_name, to_string(cfg.training.pipeline), rows, prov));
  return rows;
}

inline BenchmarkResult report(const ExperimentConfig& cfg, bool force, Io io) {
  cfg.validate();
  const fs::path out = cfg.out;
  require_fresh_output(out, force);
  echo_config(out, cfg);
  auto b = run_benchmark(cfg, out, [&](const std::string& m) { io.err << m << "\n"; });
  io.out << benchmark_markdown(b);
  return b;
}

// ---------------------------------------------------------------------------
// Argument parsing

inline std::vector<std::size_t> parse_values(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (item.empty() || pos != item.size() || item[0] == '-') throw ConfigError("--values: '" + item + "' is not a positive integer");
    v.push_back(static_cast<std::size_t>(x));
  }
  return v;
}

/// Parses and runs one command; returns the process exit code.
int run(int argc, const char* const* argv, Io io = {});

}  // namespace agerank::cli
