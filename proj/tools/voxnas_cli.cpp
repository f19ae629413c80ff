#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "voxnas/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"voxnas: voxel embedding + 3D architecture search for multilevel demand forecasting"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, out_dir, panel, problem, sample;
  std::optional<std::uint64_t> seed;
  std::optional<int> fold;
  std::optional<long> epochs;
  std::optional<double> budget, w1, w2;
  std::optional<long> max_groups;
  bool record_timing = false;

  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "top-level seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--fold", fold, "run a single fold (0-4)");
  app.add_option("--epochs", epochs, "search and retraining epochs");
  app.add_option("--budget-seconds", budget, "selection run-time budget T");
  app.add_option("--w1", w1, "selection accuracy weight");
  app.add_option("--w2", w2, "selection robustness weight");
  app.add_option("--max-groups", max_groups, "largest item group count");
  app.add_option("--panel", panel, "input panel CSV (default: synthetic)");
  app.add_option("--problem", problem, "select: solve this problem JSON");
  app.add_option("--sample", sample, "report: item for voxel heat maps");
  app.add_flag("--record-timing", record_timing, "record wall-clock run times in result tables");

  app.add_subcommand("synth", "write a synthetic panel and its ground truth");
  app.add_subcommand("ingest", "validate, clean and summarize a panel");
  app.add_subcommand("search", "architecture search per fold");
  app.add_subcommand("train", "retrain the derived models per fold");
  app.add_subcommand("evaluate", "baselines plus derived model; writes metric tables");
  app.add_subcommand("select", "item grouping and model-selection program");
  app.add_subcommand("report", "metric table, loss curves and voxel heat maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    voxnas::RunConfig cfg = config_path.empty() ? voxnas::RunConfig{} : voxnas::RunConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (fold) cfg.folds = {*fold};
    if (epochs) cfg.search.epochs = cfg.train.epochs = *epochs;
    if (budget) cfg.selector.budget = *budget;
    if (w1) cfg.selector.w1 = *w1;
    if (w2) cfg.selector.w2 = *w2;
    if (max_groups) cfg.selector.max_groups = *max_groups;
    if (!panel.empty()) cfg.panel_path = panel;
    if (!problem.empty()) cfg.problem_path = problem;
    if (!sample.empty()) cfg.report_sample = sample;
    if (record_timing) cfg.record_timing = true;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") voxnas::stage_synth(cfg);
    else if (cmd == "ingest") voxnas::stage_ingest(cfg);
    else if (cmd == "search") voxnas::stage_search(cfg);
    else if (cmd == "train") voxnas::stage_train(cfg);
    else if (cmd == "evaluate") voxnas::stage_evaluate(cfg);
    else if (cmd == "select") voxnas::stage_select(cfg);
    else voxnas::stage_report(cfg);
  } catch (const voxnas::Error& e) {
    std::cerr << "error: " << e.what() << '\n';  // what() leads with the error name
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
