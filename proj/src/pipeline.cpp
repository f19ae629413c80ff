#include "voxnas/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "voxnas/io.hpp"
#include "voxnas/plot.hpp"

namespace fs = std::filesystem;

namespace voxnas {

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  embedding.validate();
  supernet.validate();
  search.validate();
  train.validate();
  if (panel_path.empty()) synthetic.validate();
  std::set<int> seen;
  for (int f : folds) {
    if (f < 0 || f >= kFoldCount) throw ConfigError("fold index " + std::to_string(f) + " is outside [0, 5)");
    if (!seen.insert(f).second) throw ConfigError("fold " + std::to_string(f) + " listed twice");
  }
  if (folds.empty()) throw ConfigError("at least one fold is required");
  if (selector.max_groups < 1) throw ConfigError("max_groups must be >= 1");
  if (selector.budget && (std::isnan(*selector.budget) || *selector.budget < 0.0)) {
    throw ConfigError("budget must be >= 0 seconds");
  }
  if ((selector.w1 && !(*selector.w1 >= 0.0)) || (selector.w2 && !(*selector.w2 >= 0.0))) {
    throw ConfigError("W1 and W2 must be >= 0");
  }
  for (const auto& [model, t] : selector.runtimes) {
    if (!(t >= 0.0)) throw ConfigError("run time override for '" + model + "' must be >= 0");
  }
  if (out_dir.empty()) throw ConfigError("output directory must not be empty");
}

RunConfig RunConfig::resolved() const {
  RunConfig c = *this;
  c.synthetic.seed = seed;
  c.supernet.seed = seed;
  c.search.seed = seed;
  c.train.seed = seed;
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["panel"] = panel_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(panel_path);
  j["target"] = target_id;
  j["synthetic"] = synthetic.to_json();
  j["out"] = out_dir;
  j["seed"] = seed;
  j["embedding"] = embedding.to_json();
  j["supernet"] = supernet.to_json();
  j["search"] = search.to_json();
  j["train"] = train.to_json();
  j["baselines"] = nlohmann::json::array();
  for (auto b : baselines) j["baselines"].push_back(baseline_name(b));
  j["folds"] = folds;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["selector"] = {{"budget_seconds", opt(selector.budget)},
                   {"w1", opt(selector.w1)},
                   {"w2", opt(selector.w2)},
                   {"max_groups", selector.max_groups},
                   {"cost_feature", selector.cost_feature},
                   {"runtimes", selector.runtimes}};
  j["record_timing"] = record_timing;
  j["problem"] = problem_path;
  j["report_sample"] = report_sample;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  try {
    RunConfig c;
    if (j.contains("panel") && !j.at("panel").is_null()) c.panel_path = j.at("panel").get<std::string>();
    c.target_id = j.value("target", c.target_id);
    if (j.contains("synthetic")) c.synthetic = SyntheticSpec::from_json(j.at("synthetic"));
    c.out_dir = j.value("out", c.out_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("embedding")) c.embedding = EmbeddingConfig::from_json(j.at("embedding"));
    if (j.contains("supernet")) c.supernet = SupernetConfig::from_json(j.at("supernet"));
    if (j.contains("search")) c.search = BilevelConfig::from_json(j.at("search"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("baselines")) {
      c.baselines.clear();
      for (const auto& b : j.at("baselines")) c.baselines.push_back(baseline_from_name(b.get<std::string>()));
    }
    if (j.contains("folds")) c.folds = j.at("folds").get<std::vector<int>>();
    if (j.contains("selector")) {
      const auto& s = j.at("selector");
      auto opt = [&](const char* k) -> std::optional<double> {
        if (!s.contains(k) || s.at(k).is_null()) return std::nullopt;
        return s.at(k).get<double>();
      };
      c.selector.budget = opt("budget_seconds");
      c.selector.w1 = opt("w1");
      c.selector.w2 = opt("w2");
      c.selector.max_groups = s.value("max_groups", c.selector.max_groups);
      c.selector.cost_feature = s.value("cost_feature", c.selector.cost_feature);
      if (s.contains("runtimes")) c.selector.runtimes = s.at("runtimes").get<std::map<std::string, double>>();
    }
    c.record_timing = j.value("record_timing", c.record_timing);
    c.problem_path = j.value("problem", c.problem_path);
    c.report_sample = j.value("report_sample", c.report_sample);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run configuration: ") + e.what());
  }
}

RunConfig RunConfig::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::uint64_t RunConfig::hash() const {
  auto j = resolved().to_json();
  j.erase("out");
  return fnv1a64(j.dump());
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

// Hash of the settings a search checkpoint depends on (epoch count excluded
// so a finished search can be extended).
std::uint64_t checkpoint_hash(const RunConfig& cfg) {
  const auto r = cfg.resolved();
  auto search = r.search.to_json();
  search.erase("epochs");
  search.erase("checkpoint_every");
  nlohmann::json j{{"panel", r.panel_path},    {"target", r.target_id},        {"synthetic", r.synthetic.to_json()},
                   {"seed", r.seed},           {"embedding", r.embedding.to_json()},
                   {"supernet", r.supernet.to_json()}, {"search", search}};
  return fnv1a64(j.dump());
}

void write_csv(const RunConfig& cfg, const std::string& path, const std::string& body) {
  io::write_text_atomic(path, provenance_comment(cfg) + body);
}

void write_json(const RunConfig& cfg, const std::string& path, nlohmann::json j) {
  j["provenance"] = provenance_json(cfg);
  io::write_text_atomic(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::string out_path(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); }

FoldSplit fold_split(const DemandPanel& cleaned, const RunConfig& cfg, int fold) {
  return make_folds(cleaned, cfg.seed).at(static_cast<std::size_t>(fold));
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

std::string provenance_comment(const RunConfig& cfg) {
  return "# config_hash=" + hex(cfg.hash()) + " seed=" + std::to_string(cfg.seed) + "\n";
}

nlohmann::json provenance_json(const RunConfig& cfg) {
  return {{"config_hash", hex(cfg.hash())}, {"seed", cfg.seed}};
}

std::string fold_dir(const RunConfig& cfg, int fold) {
  return (fs::path(cfg.out_dir) / ("fold_" + std::to_string(fold))).string();
}

// ---------------------------------------------------------------- data

namespace {

DemandPanel load_raw_panel(const RunConfig& cfg) {
  if (!cfg.panel_path.empty()) return ingest_panel_file(cfg.panel_path, cfg.target_id);
  return generate_synthetic(cfg.resolved().synthetic).panel;
}

}  // namespace

DemandPanel load_clean_panel(const RunConfig& cfg) { return impute_missing(remove_outliers(load_raw_panel(cfg))); }

void stage_synth(const RunConfig& cfg) {
  cfg.validate();
  const auto r = cfg.resolved();
  const auto synth = generate_synthetic(r.synthetic);
  std::ostringstream panel;
  write_panel_csv(synth.panel, panel);
  write_csv(cfg, out_path(cfg, "panel.csv"), panel.str());
  write_json(cfg, out_path(cfg, "ground_truth.json"), synth.truth.to_json(r.synthetic));
  log_line("wrote " + std::to_string(synth.panel.row_count()) + " records to " + out_path(cfg, "panel.csv"));
}

void stage_ingest(const RunConfig& cfg) {
  cfg.validate();
  const auto raw = load_raw_panel(cfg);
  const auto screened = remove_outliers(raw);
  const auto cleaned = impute_missing(screened);
  const auto samples = cleaned.sample_items();
  if (samples.empty()) throw TooFewItems("no item has a complete grid and a forecast-year target");
  std::ostringstream body;
  write_panel_csv(cleaned, body);
  write_csv(cfg, out_path(cfg, "panel_clean.csv"), body.str());
  nlohmann::json j;
  j["records"] = cleaned.row_count();
  j["items"] = cleaned.item_count();
  j["bases"] = cleaned.base_count();
  j["equipment"] = cleaned.equipment_count();
  j["years"] = cleaned.years();
  j["features"] = cleaned.schema().feature_ids;
  j["schema_width"] = cleaned.schema().schema_width();
  j["missing_input"] = raw.missing_count();
  j["missing_after_outlier_screen"] = screened.missing_count();
  j["sample_items"] = samples.size();
  j["normalization"] = fit_normalization(cleaned, samples).to_json();
  write_json(cfg, out_path(cfg, "ingest.json"), j);
  log_line("ingested " + std::to_string(cleaned.row_count()) + " records, " + std::to_string(samples.size()) +
           " usable items");
}

// ---------------------------------------------------------------- search / train

namespace {

SearchOutcome search_fold(const RunConfig& cfg, const DemandPanel& cleaned, int fold) {
  const auto r = cfg.resolved();
  const auto split = fold_split(cleaned, cfg, fold);
  const auto dir = fold_dir(cfg, fold);
  SearchOptions opt;
  opt.supernet = r.supernet;
  opt.bilevel = r.search;
  opt.embedding = r.embedding;
  opt.checkpoint_dir = (fs::path(dir) / "checkpoints").string();
  opt.config_hash = checkpoint_hash(cfg);
  opt.on_epoch = [fold](const EpochRecord& e) {
    log_line("fold " + std::to_string(fold) + " epoch " + std::to_string(e.epoch) + " train " +
             io::format_double(e.train_loss) + " val " + io::format_double(e.val_loss));
  };
  auto out = run_search(cleaned, split, opt);

  auto g = out.genotype.to_json();
  g["fold"] = fold;
  write_json(cfg, (fs::path(dir) / "genotype.json").string(), g);
  std::ostringstream hist;
  write_history_csv(out.history, out.initial_val_loss, hist);
  write_csv(cfg, (fs::path(dir) / "history.csv").string(), hist.str());
  nlohmann::json arch{{"cells", out.arch.to_json()}, {"embedding", nlohmann::json::array()}};
  for (const auto& l : out.embedding.logits) arch["embedding"].push_back(std::vector<double>(l.begin(), l.end()));
  arch["embedding_mode"] = mode_name(out.embedding.mode);
  write_json(cfg, (fs::path(dir) / "arch.json").string(), arch);
  return out;
}

ForecastResult train_fold(const RunConfig& cfg, const DemandPanel& cleaned, int fold) {
  const auto r = cfg.resolved();
  const auto dir = fold_dir(cfg, fold);
  const auto gpath = (fs::path(dir) / "genotype.json").string();
  if (!fs::exists(gpath)) throw IoError("'" + gpath + "' not found; run the search stage first");
  const auto genotype = Genotype::from_json(read_json(gpath));
  auto out = train_derived(genotype, r.supernet, cleaned, fold_split(cleaned, cfg, fold), r.train);
  if (!cfg.record_timing) out.result.runtime_seconds = 0.0;
  std::ostringstream preds;
  write_results_csv({out.result}, preds);
  write_csv(cfg, (fs::path(dir) / "predictions.csv").string(), preds.str());
  std::ostringstream hist;
  hist << "epoch,train_loss\n";
  for (const auto& e : out.history) hist << e.epoch << ',' << io::format_double(e.train_loss) << '\n';
  write_csv(cfg, (fs::path(dir) / "train_history.csv").string(), hist.str());
  log_line("fold " + std::to_string(fold) + " derived model min-max accuracy " +
           io::format_double(minmax_accuracy(out.result.actual, out.result.forecast)));
  return out.result;
}

}  // namespace

void stage_search(const RunConfig& cfg) {
  cfg.validate();
  const auto cleaned = load_clean_panel(cfg);
  for (int f : cfg.folds) search_fold(cfg, cleaned, f);
}

void stage_train(const RunConfig& cfg) {
  cfg.validate();
  const auto cleaned = load_clean_panel(cfg);
  for (int f : cfg.folds) train_fold(cfg, cleaned, f);
}

MetricReport stage_evaluate(const RunConfig& cfg) {
  cfg.validate();
  const auto cleaned = load_clean_panel(cfg);
  std::vector<ForecastResult> results;
  for (int f : cfg.folds) {
    const auto split = fold_split(cleaned, cfg, f);
    for (auto kind : cfg.baselines) {
      auto r = run_baseline(kind, cleaned, split);
      if (!cfg.record_timing) r.runtime_seconds = 0.0;
      results.push_back(std::move(r));
    }
    const auto dir = fs::path(fold_dir(cfg, f));
    if (fs::exists(dir / "predictions.csv")) {
      std::istringstream in(io::read_text((dir / "predictions.csv").string()));
      for (auto& r : read_results_csv(in)) results.push_back(std::move(r));
    } else {
      if (!fs::exists(dir / "genotype.json")) search_fold(cfg, cleaned, f);
      results.push_back(train_fold(cfg, cleaned, f));
    }
  }
  std::ostringstream table;
  write_results_csv(results, table);
  write_csv(cfg, out_path(cfg, "results.csv"), table.str());
  const auto report = compare_models(results);
  std::ostringstream metrics;
  report.write_csv(metrics);
  write_csv(cfg, out_path(cfg, "metrics.csv"), metrics.str());
  write_json(cfg, out_path(cfg, "metrics.json"), report.to_json());
  log_line("best model: " + report.models[report.best].model);
  return report;
}

// ---------------------------------------------------------------- select

namespace {

void apply_overrides(const RunConfig& cfg, SelectionProblem& p) {
  if (cfg.selector.budget) p.budget = *cfg.selector.budget;
  if (cfg.selector.w1) p.w1 = *cfg.selector.w1;
  if (cfg.selector.w2) p.w2 = *cfg.selector.w2;
  for (const auto& [model, t] : cfg.selector.runtimes) {
    const auto it = std::find(p.model_ids.begin(), p.model_ids.end(), model);
    if (it == p.model_ids.end()) throw ConfigError("run time override for unknown model '" + model + "'");
    p.runtimes[it - p.model_ids.begin()] = t;
  }
  p.validate();
}

std::vector<ItemStat> item_stats(const DemandPanel& cleaned, const std::vector<std::string>& items,
                                 const std::string& cost_feature) {
  const auto& ids = cleaned.schema().feature_ids;
  Index cost = 0;
  if (!cost_feature.empty()) {
    const auto it = std::find(ids.begin(), ids.end(), cost_feature);
    if (it == ids.end()) throw ConfigError("cost feature '" + cost_feature + "' is not in the panel");
    cost = it - ids.begin();
  }
  std::vector<ItemStat> out;
  for (const auto& id : items) {
    const auto pos = std::lower_bound(cleaned.items().begin(), cleaned.items().end(), id);
    if (pos == cleaned.items().end() || *pos != id) throw ConfigError("result item '" + id + "' is not in the panel");
    const Index item = pos - cleaned.items().begin();
    double c = 0.0;
    const auto rows = cleaned.rows_of_item(item);
    for (Index r : rows) c += cleaned.features()(r, cost);
    const auto hist = cleaned.demand_history(item);
    out.push_back({id, rows.empty() ? 0.0 : c / static_cast<double>(rows.size()),
                   hist.empty() ? 0.0 : arithmetic_mean_forecast(hist)});
  }
  return out;
}

}  // namespace

SelectionResult stage_select(const RunConfig& cfg) {
  cfg.validate();
  if (!cfg.problem_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_text(cfg.problem_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("'" + cfg.problem_path + "' is not valid JSON: " + e.what());
    }
    auto problem = SelectionProblem::from_json(j);
    apply_overrides(cfg, problem);
    const auto result = solve_configured(problem);
    auto out = result.to_json(problem);
    out["problem"] = problem.to_json();
    write_json(cfg, out_path(cfg, "selection.json"), out);
    return result;
  }
  const auto rpath = out_path(cfg, "results.csv");
  if (!fs::exists(rpath)) throw IoError("'" + rpath + "' not found; run the evaluate stage first");
  std::istringstream in(io::read_text(rpath));
  const auto results = read_results_csv(in);
  std::set<std::string> seen;
  std::vector<std::string> items;
  for (const auto& r : results) {
    for (const auto& it : r.items) {
      if (seen.insert(it).second) items.push_back(it);
    }
  }
  std::sort(items.begin(), items.end());
  const auto cleaned = load_clean_panel(cfg);
  const auto groups = cluster_items(item_stats(cleaned, items, cfg.selector.cost_feature), cfg.selector.max_groups);
  auto problem = build_selection_problem(results, groups);
  apply_overrides(cfg, problem);
  const auto result = solve_configured(problem);

  nlohmann::json gj = nlohmann::json::array();
  for (const auto& g : groups) gj.push_back(g.to_json());
  write_json(cfg, out_path(cfg, "groups.json"), {{"groups", gj}});
  write_json(cfg, out_path(cfg, "selection_problem.json"), problem.to_json());
  auto out = result.to_json(problem);
  write_json(cfg, out_path(cfg, "selection.json"), out);
  std::string names;
  for (Index a : result.assignment) names += (names.empty() ? "" : ", ") + problem.model_ids[static_cast<std::size_t>(a)];
  log_line("selected (" + names + "), objective " + io::format_double(result.objective));
  return result;
}

// ---------------------------------------------------------------- report

void stage_report(const RunConfig& cfg) {
  cfg.validate();
  const auto rpath = out_path(cfg, "results.csv");
  if (!fs::exists(rpath)) throw IoError("'" + rpath + "' not found; run the evaluate stage first");
  std::istringstream in(io::read_text(rpath));
  const auto results = read_results_csv(in);
  const auto report = compare_models(results);
  const fs::path plots = fs::path(cfg.out_dir) / "plots";
  const std::string stamp = "config_hash=" + provenance_json(cfg)["config_hash"].get<std::string>() +
                            " seed=" + std::to_string(cfg.seed);

  std::ostringstream md;
  md << "<!-- " << stamp << " -->\n# Run report\n\n";
  md << "| model | folds | min-max mean | min-max std | RMSE mean | MAE mean |\n|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < report.models.size(); ++i) {
    const auto& m = report.models[i];
    md << "| " << m.model << (i == report.best ? " (best)" : "") << " | " << m.folds << " | "
       << io::format_double(m.minmax_mean) << " | " << io::format_double(m.minmax_std) << " | "
       << io::format_double(m.rmse_mean) << " | " << io::format_double(m.mae_mean) << " |\n";
  }

  std::map<std::string, std::vector<double>> per_fold;
  for (const auto& r : results) per_fold[r.model].push_back(minmax_accuracy(r.actual, r.forecast));
  std::vector<plot::BarGroup> bars;
  for (const auto& m : report.models) bars.push_back({m.model, m.minmax_mean, m.minmax_std, per_fold[m.model]});
  io::write_text_atomic((plots / "accuracy.svg").string(),
                        plot::bar_chart("Min-max accuracy per model (folds as points)", bars, "min-max accuracy", stamp));

  md << "\n## Plots\n\n- `plots/accuracy.svg`\n";
  for (int f : cfg.folds) {
    const auto h = fs::path(fold_dir(cfg, f)) / "history.csv";
    if (!fs::exists(h)) continue;
    std::istringstream hin(io::read_text(h.string()));
    double initial = 0.0;
    const auto hist = read_history_csv(hin, &initial);
    plot::Series train{"train", {}, {}}, val{"validation", {0.0}, {initial}};
    for (const auto& e : hist) {
      train.x.push_back(static_cast<double>(e.epoch));
      train.y.push_back(e.train_loss);
      val.x.push_back(static_cast<double>(e.epoch));
      val.y.push_back(e.val_loss);
    }
    const auto name = "loss_fold_" + std::to_string(f) + ".svg";
    io::write_text_atomic((plots / name).string(),
                          plot::line_chart("Search loss, fold " + std::to_string(f), {train, val}, "epoch", "MSE", stamp));
    md << "- `plots/" << name << "`\n";
  }

  // Voxel heat maps of one sample, one panel per year channel.
  const auto cleaned = load_clean_panel(cfg);
  const auto samples = cleaned.sample_items();
  if (!samples.empty()) {
    Index item = samples.front();
    if (!cfg.report_sample.empty()) {
      const auto pos = std::lower_bound(cleaned.items().begin(), cleaned.items().end(), cfg.report_sample);
      if (pos == cleaned.items().end() || *pos != cfg.report_sample) {
        throw ConfigError("report sample '" + cfg.report_sample + "' is not in the panel");
      }
      item = pos - cleaned.items().begin();
    }
    const auto folds = make_folds(cleaned, cfg.seed);
    const FoldSplit* home = &folds.front();
    for (const auto& f : folds) {
      if (std::find(f.test.begin(), f.test.end(), item) != f.test.end()) home = &f;
    }
    const auto normalized = normalize(cleaned, home->train).first;
    VoxelImage vox = raw_voxel(normalized, item);
    std::string layout = "member-id order";
    const auto gpath = fs::path(fold_dir(cfg, home->fold)) / "genotype.json";
    if (fs::exists(gpath)) {
      const auto g = Genotype::from_json(read_json(gpath.string()));
      const CandidateMappingSpace space(g.embedding.clusterings, MappingMode::factorized);
      vox = voxelize(vox, space, g.embedding.orders);
      layout = "searched cluster order, fold " + std::to_string(home->fold);
    }
    const Index ny = vox.dim(0), nf = vox.dim(1), nb = vox.dim(2), ne = vox.dim(3);
    std::vector<plot::HeatPanel> panels;
    for (Index y = 0; y < ny; ++y) {
      Eigen::MatrixXd m(nf, nb * ne);
      for (Index fi = 0; fi < nf; ++fi)
        for (Index b = 0; b < nb; ++b)
          for (Index e = 0; e < ne; ++e) m(fi, b * ne + e) = vox(y, fi, b, e);
      panels.push_back({std::to_string(cleaned.years()[static_cast<std::size_t>(y)]), m});
    }
    const auto& id = cleaned.items()[static_cast<std::size_t>(item)];
    const auto name = "voxel_" + id + ".svg";
    io::write_text_atomic((plots / name).string(),
                          plot::heatmap_grid("Voxel " + id + " (rows: features, columns: base x equipment; " + layout + ")",
                                             panels, stamp));
    md << "- `plots/" << name << "`\n";
  }
  io::write_text_atomic(out_path(cfg, "report.md"), md.str());
  log_line("report written to " + out_path(cfg, "report.md"));
}

}  // namespace voxnas
