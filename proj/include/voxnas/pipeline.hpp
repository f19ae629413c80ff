#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxnas/dataset.hpp"
#include "voxnas/evaluation.hpp"
#include "voxnas/search.hpp"
#include "voxnas/selector.hpp"
#include "voxnas/supernet.hpp"

namespace voxnas {

struct SelectorConfig {
  std::optional<double> budget;  // seconds; unset means unlimited
  std::optional<double> w1, w2;
  Index max_groups = 4;
  std::string cost_feature;  // empty: the first feature
  std::map<std::string, double> runtimes;  // per-model overrides of t_j
};

// Everything a pipeline run depends on. Sub-seeds are all derived from
// `seed` through named substreams.
struct RunConfig {
  std::string panel_path;  // empty: use the synthetic spec
  std::string target_id = "demand";
  SyntheticSpec synthetic;
  std::string out_dir = "voxnas_out";
  std::uint64_t seed = 7;
  EmbeddingConfig embedding;
  SupernetConfig supernet;
  BilevelConfig search;
  TrainConfig train;
  std::vector<BaselineKind> baselines = all_baselines();
  std::vector<int> folds{0, 1, 2, 3, 4};
  SelectorConfig selector;
  bool record_timing = false;
  std::string problem_path;    // select: solve this problem file instead
  std::string report_sample;   // report: item for the voxel heat maps

  void validate() const;
  // Copies the top-level seed into every sub-config.
  RunConfig resolved() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  // FNV-1a of the canonical JSON without output location fields.
  std::uint64_t hash() const;
};

// Provenance line/object stamped on every artifact.
std::string provenance_comment(const RunConfig& cfg);
nlohmann::json provenance_json(const RunConfig& cfg);

std::string fold_dir(const RunConfig& cfg, int fold);

// Ingested (or generated) panel after outlier screening and imputation.
DemandPanel load_clean_panel(const RunConfig& cfg);

void stage_synth(const RunConfig& cfg);
void stage_ingest(const RunConfig& cfg);
void stage_search(const RunConfig& cfg);
void stage_train(const RunConfig& cfg);
MetricReport stage_evaluate(const RunConfig& cfg);
SelectionResult stage_select(const RunConfig& cfg);
void stage_report(const RunConfig& cfg);

}  // namespace voxnas
