#include "agerank/cli.hpp"

#include "CLI11.hpp"

namespace agerank::cli {

int run(int argc, const char* const* argv, Io io) {
  CLI::App app{"Rank-N-Contrast brain-age pipeline on synthetic ageing phantoms", "agerank"};
  app.require_subcommand(1);

  std::string config_path, out, pipeline, axis, values, data, split = "test", grouping = "age";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n, halt_after;
  std::vector<std::string> models;
  bool force = false, resume = false, cohort = false;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    c->add_option("--seed", seed, "global seed");
    c->add_option("--out", out, "output directory");
    c->add_flag("--force", force, "overwrite a non-empty output directory");
  };

  auto* phantom = app.add_subcommand("phantom", "synthetic data");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "generate a phantom dataset");
  common(gen);
  gen->add_option("--n", n, "number of subjects");
  gen->add_flag("--cohort", cohort, "also write the age-matched accelerated cohort");

  auto* tr = app.add_subcommand("train", "train a pipeline");
  common(tr);
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--pipeline", pipeline, "rnc-two-stage or end-to-end");
  tr->add_flag("--resume", resume, "continue from the checkpoint in --out");
  tr->add_option("--halt-after", halt_after, "stop after this many epochs (interruption testing)");

  auto* ev = app.add_subcommand("eval", "evaluate one or two models");
  common(ev);
  ev->add_option("--model", models, "checkpoint path, stub:oracle or stub:mean (repeat for a paired test)")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--split", split, "train, val or test");

  auto* sal = app.add_subcommand("saliency", "group-averaged Grad-RAM maps");
  common(sal);
  sal->add_option("--model", models, "checkpoint path")->required()->expected(1);
  sal->add_option("--data", data, "dataset directory")->required();
  sal->add_option("--group", grouping, "age or sex");
  sal->add_option("--split", split, "train, val or test");

  auto* sw = app.add_subcommand("sweep", "train and evaluate over one axis");
  common(sw);
  sw->add_option("--axis", axis, "batch-size, resolution or depth")->required();
  sw->add_option("--values", values, "comma separated values")->required();
  sw->add_option("--pipeline", pipeline, "rnc-two-stage or end-to-end");

  auto* rep = app.add_subcommand("report", "run the multi-seed phantom benchmark");
  common(rep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    return kValidationError;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    cfg.training.seed = cfg.seed;
    if (!out.empty()) cfg.out = out;
    if (!pipeline.empty()) cfg.training.pipeline = parse_pipeline(pipeline);
    if (n) cfg.data.n = *n;

    if (gen->parsed()) {
      phantom_gen(cfg, force, cohort, io);
    } else if (tr->parsed()) {
      train(cfg, {data, resume, force, halt_after}, io);
    } else if (ev->parsed()) {
      require_fresh_output(cfg.out, force);
      eval(cfg, {models, data, split}, io);
    } else if (sal->parsed()) {
      require_fresh_output(cfg.out, force);
      saliency(cfg, {models.front(), data, grouping, split}, io);
    } else if (sw->parsed()) {
      sweep(cfg, axis, parse_values(values), force, io);
    } else if (rep->parsed()) {
      report(cfg, force, io);
    }
  } catch (const ConfigError& e) {
    io.err << "validation error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace agerank::cli
