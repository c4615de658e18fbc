#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/config.hpp"
#include "agerank/eval.hpp"
#include "agerank/gradram.hpp"
#include "agerank/stats.hpp"
#include "agerank/train.hpp"

namespace agerank {

/// BAG of a model on an age-matched control / accelerated cohort.
struct CohortResult {
  double delta = 0.0;
  double control_mean_bag = 0.0;
  double accelerated_mean_bag = 0.0;
  stats::TTest accelerated_bag_test;  // one-sample, against zero
  stats::TTest control_bag_test;
  stats::TTest difference_test;       // paired, accelerated BAG - control BAG

  double gap_difference() const { return accelerated_mean_bag - control_mean_bag; }
};

struct PipelineResult {
  std::string pipeline;
  EvalReport report;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  CohortResult cohort;       // BenchmarkSpec::delta
  CohortResult null_cohort;  // delta = 0
  double localization = 0.0;  // mean over age groups of the informative mass fraction
  std::vector<std::pair<std::string, double>> group_localization;
  double train_seconds = 0.0;  // excluded from the JSON report
};

struct SeedResult {
  std::uint64_t seed = 0;
  PipelineResult rnc, e2e;
  PairedComparison paired;         // |e_rnc| - |e_e2e| on the test split
  stats::Correlation ordering_trained;    // after stage 1, test pairs
  stats::Correlation ordering_untrained;  // initial encoder, same pairs
  double localization_untrained = 0.0;
  std::vector<std::pair<std::string, double>> group_localization_untrained;
};

struct BenchmarkResult {
  BenchmarkSpec spec;
  std::vector<SeedResult> seeds;

  double mean_mae(bool rnc) const {
    double s = 0.0;
    for (const auto& r : seeds) s += (rnc ? r.rnc : r.e2e).report.metrics.mae;
    return s / static_cast<double>(seeds.size());
  }
};

namespace bench_detail {

inline CohortResult cohort_bag(AgeModel<float>& model, const Dataset& cohort, double delta) {
  std::vector<double> ctl_bag, acc_bag;
  const auto preds = model.predict_ages(train_detail::pointers(cohort, [&] {
    std::vector<std::size_t> all(cohort.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }()));
  for (std::size_t i = 0; i < cohort.samples.size(); ++i) {
    const double bag = preds[i] - cohort.samples[i].age;
    (cohort.samples[i].group == "accelerated" ? acc_bag : ctl_bag).push_back(bag);
  }
  CohortResult r;
  r.delta = delta;
  r.control_bag_test = stats::one_sample_ttest(ctl_bag);
  r.accelerated_bag_test = stats::one_sample_ttest(acc_bag);
  r.control_mean_bag = r.control_bag_test.mean;
  r.accelerated_mean_bag = r.accelerated_bag_test.mean;
  r.difference_test = stats::paired_ttest(acc_bag, ctl_bag);
  return r;
}

inline std::vector<std::pair<std::string, double>> group_fractions(const GroupSaliency& g) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& r : g.groups) out.emplace_back(r.average.tag, r.informative_fraction);
  return out;
}

inline nlohmann::json cohort_json(const CohortResult& c) {
  return {{"delta", c.delta},
          {"control_mean_bag", c.control_mean_bag},
          {"accelerated_mean_bag", c.accelerated_mean_bag},
          {"gap_difference", c.gap_difference()},
          {"accelerated_bag_ttest", ttest_json(c.accelerated_bag_test)},
          {"control_bag_ttest", ttest_json(c.control_bag_test)},
          {"difference_ttest", ttest_json(c.difference_test)}};
}

inline nlohmann::json groups_json(const std::vector<std::pair<std::string, double>>& g) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [name, f] : g) j.push_back({{"group", name}, {"informative_fraction", f}});
  return j;
}

inline nlohmann::json pipeline_json(const PipelineResult& p) {
  return {{"pipeline", p.pipeline},
          {"mae", p.report.metrics.mae},
          {"mae_std", p.report.metrics.std_abs},
          {"r2", p.report.metrics.r2},
          {"mean_bag", p.report.mean_bag},
          {"best_epoch", p.best_epoch},
          {"stopped_epoch", p.stopped_epoch},
          {"cohort", cohort_json(p.cohort)},
          {"null_cohort", cohort_json(p.null_cohort)},
          {"localization", p.localization},
          {"group_localization", groups_json(p.group_localization)}};
}

inline std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

}  // namespace bench_detail

inline nlohmann::json seed_json(const SeedResult& r) {
  using namespace bench_detail;
  return {{"seed", r.seed},
          {"rnc", pipeline_json(r.rnc)},
          {"end_to_end", pipeline_json(r.e2e)},
          {"paired_abs_error_ttest", {{"model_a", r.paired.model_a}, {"model_b", r.paired.model_b}, {"test", ttest_json(r.paired.test)}}},
          {"ordering_trained", correlation_json(r.ordering_trained)},
          {"ordering_untrained", correlation_json(r.ordering_untrained)},
          {"localization_untrained", r.localization_untrained},
          {"group_localization_untrained", groups_json(r.group_localization_untrained)}};
}

inline nlohmann::json benchmark_json(const BenchmarkResult& b, const Provenance& prov) {
  nlohmann::json j;
  j["provenance"] = prov.to_json();
  j["spec"] = b.spec;
  j["seeds"] = nlohmann::json::array();
  for (const auto& s : b.seeds) j["seeds"].push_back(seed_json(s));
  j["mean"] = {{"rnc_mae", b.mean_mae(true)}, {"end_to_end_mae", b.mean_mae(false)}};
  return j;
}

inline std::string benchmark_markdown(const BenchmarkResult& b) {
  using bench_detail::fmt;
  std::ostringstream os;
  os << "# Phantom benchmark\n\n";
  os << "| seed | pipeline | MAE +- std | R2 | BAG (delta=" << fmt("%g", b.spec.delta)
     << ") acc - ctl | p (acc BAG) | null p | localization |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  double loc[2] = {0, 0}, r2[2] = {0, 0};
  for (const auto& s : b.seeds) {
    int k = 0;
    for (const auto* p : {&s.rnc, &s.e2e}) {
      os << "| " << s.seed << " | " << p->pipeline << " | " << fmt("%.3f", p->report.metrics.mae) << " +- "
         << fmt("%.3f", p->report.metrics.std_abs) << " | " << fmt("%.3f", p->report.metrics.r2) << " | "
         << fmt("%.3f", p->cohort.gap_difference()) << " | " << fmt("%.3g", p->cohort.accelerated_bag_test.p) << " | "
         << fmt("%.3g", p->null_cohort.difference_test.p) << " | " << fmt("%.3f", p->localization) << " |\n";
      loc[k] += p->localization;
      r2[k] += p->report.metrics.r2;
      ++k;
    }
  }
  const double n = static_cast<double>(b.seeds.size());
  os << "| mean | rnc-two-stage | " << fmt("%.3f", b.mean_mae(true)) << " | " << fmt("%.3f", r2[0] / n) << " | | | | "
     << fmt("%.3f", loc[0] / n) << " |\n";
  os << "| mean | end-to-end | " << fmt("%.3f", b.mean_mae(false)) << " | " << fmt("%.3f", r2[1] / n) << " | | | | "
     << fmt("%.3f", loc[1] / n) << " |\n\n";
  os << "| seed | paired t, abs error rnc - e2e | p | ordering trained | ordering untrained | untrained localization |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& s : b.seeds) {
    os << "| " << s.seed << " | " << fmt("%.3f", s.paired.test.t) << " | " << fmt("%.3g", s.paired.test.p) << " | "
       << fmt("%.3f", s.ordering_trained.r) << " | " << fmt("%.3f", s.ordering_untrained.r) << " | "
       << fmt("%.3f", s.localization_untrained) << " |\n";
  }
  return os.str();
}

/// Trains both pipelines for one seed on shared data and evaluates everything.
inline SeedResult run_seed(const ExperimentConfig& base, std::uint64_t seed, const std::filesystem::path& out,
                           const std::function<void(const std::string&)>& log = {}) {
  const ExperimentConfig cfg = seeded(base, seed);
  const BenchmarkSpec& spec = cfg.benchmark;
  auto say = [&](const std::string& m) {
    if (log) log("[seed " + std::to_string(seed) + "] " + m);
  };
  const Dataset data = generate_dataset(spec.total(), cfg.phantom, spec.ratios(), seed);
  const Dataset cohort = generate_cohort(spec.cohort_size, spec.delta, cfg.phantom, derive_seed(seed, {0xc0ULL}));
  const Dataset null_cohort = generate_cohort(spec.cohort_size, 0.0, cfg.phantom, derive_seed(seed, {0xc1ULL}));
  const auto test = data.indices("test");
  std::vector<std::size_t> sal = test;
  if (spec.saliency_subjects && sal.size() > spec.saliency_subjects) sal.resize(spec.saliency_subjects);
  std::vector<std::string> ids;
  for (auto i : test) ids.push_back(data.samples[i].id);
  const auto test_ages = train_detail::ages(data, test);
  const auto test_ptrs = train_detail::pointers(data, test);

  SeedResult r;
  r.seed = seed;
  {
    AgeModel<float> untrained(cfg.encoder);
    r.ordering_untrained = ordering_spearman(untrained.encoder.embed(test_ptrs), test_ages);
    const auto train_ages = train_detail::ages(data, data.indices("train"));
    untrained.head = RegressionHead<float>::initialized(cfg.encoder.embedding_dim,
                                                       static_cast<float>(train_detail::median(train_ages)), seed);
    untrained.has_head = true;
    const auto g = group_saliency(untrained, data, sal, Grouping::age, cfg.gradram, "untrained");
    r.localization_untrained = mean_informative_fraction(g);
    r.group_localization_untrained = bench_detail::group_fractions(g);
  }

  auto run = [&](Pipeline p, PipelineResult& pr) {
    TrainingConfig tc = cfg.training;
    tc.pipeline = p;
    TrainOptions opts;
    opts.log = say;
    say("training " + to_string(p));
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult tr = train_pipeline(data, cfg.encoder, cfg.rnc, cfg.augment, tc, opts);
    pr.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    pr.pipeline = to_string(p);
    pr.history = tr.history;
    pr.best_epoch = tr.best_epoch;
    pr.stopped_epoch = tr.stopped_epoch;
    pr.report = evaluate(pr.pipeline, ids, test_ages, tr.model.predict_ages(test_ptrs));
    pr.cohort = bench_detail::cohort_bag(tr.model, cohort, spec.delta);
    pr.null_cohort = bench_detail::cohort_bag(tr.model, null_cohort, 0.0);
    const auto g = group_saliency(tr.model, data, sal, Grouping::age, cfg.gradram, pr.pipeline);
    pr.localization = mean_informative_fraction(g);
    pr.group_localization = bench_detail::group_fractions(g);
    if (p == Pipeline::rnc_two_stage) r.ordering_trained = ordering_spearman(tr.model.encoder.embed(test_ptrs), test_ages);
    if (!out.empty()) {
      const auto dir = out / ("seed_" + std::to_string(seed));
      io::atomic_write(dir / (pr.pipeline + "_history.csv"), history_csv(pr.history));
      model_checkpoint(tr.model, {{"pipeline", pr.pipeline}, {"seed", seed}}).save(dir / (pr.pipeline + ".ckpt"));
    }
    say(to_string(p) + " MAE " + bench_detail::fmt("%.3f", pr.report.metrics.mae) + " in " +
        bench_detail::fmt("%.0f", pr.train_seconds) + " s");
  };
  run(Pipeline::rnc_two_stage, r.rnc);
  run(Pipeline::end_to_end, r.e2e);
  r.paired = compare(r.rnc.report, r.e2e.report);
  r.rnc.report.paired = r.paired;
  if (!out.empty()) {
    Provenance prov{nlohmann::json(cfg), seed};
    const auto dir = out / ("seed_" + std::to_string(seed));
    emit_report(r.rnc.report, prov, dir, "rnc-two-stage_report");
    emit_report(r.e2e.report, prov, dir, "end-to-end_report");
    io::atomic_write(dir / "seed_result.json", seed_json(r).dump(2) + "\n");
  }
  return r;
}

/// Runs every BenchmarkSpec seed and writes benchmark.json and benchmark.md.
inline BenchmarkResult run_benchmark(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                     const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  BenchmarkResult b;
  b.spec = cfg.benchmark;
  for (auto s : cfg.benchmark.seeds) b.seeds.push_back(run_seed(cfg, s, out, log));
  if (!out.empty()) {
    Provenance prov{nlohmann::json(cfg), cfg.seed};
    io::atomic_write(out / "benchmark.json", benchmark_json(b, prov).dump(2) + "\n");
    io::atomic_write(out / "benchmark.md", benchmark_markdown(b));
  }
  return b;
}

}  // namespace agerank
