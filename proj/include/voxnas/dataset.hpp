#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxnas/tensor.hpp"

namespace voxnas {

// Level axes in grid order. Years are level 3 and become voxel channels.
enum class LevelAxis : int { base = 0, equipment = 1, year = 2 };

struct FeatureSchema {
  std::array<std::string, 3> level_axes{"base", "equipment", "year"};
  std::vector<std::string> feature_ids;
  // Per feature: does it vary along (base, equipment, year)?
  std::vector<std::array<bool, 3>> level_flags;
  std::string target_id = "demand";

  Index feature_count() const { return static_cast<Index>(feature_ids.size()); }
  // Key columns plus explanatory features (the target is not counted).
  Index schema_width() const { return 4 + feature_count(); }
  void validate() const;
};

struct RecordKey {
  Index item = 0;
  Index base = 0;
  Index equipment = 0;
  Index year = 0;  // index into DemandPanel::years()
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Multilevel demand table. Rows are keyed by (item, base, equipment, year);
// ids along every axis are kept sorted ascending so that index order is the
// canonical member order. Immutable once built: transformations return copies.
class DemandPanel {
 public:
  struct Row {
    std::string item, base, equipment;
    int year = 0;
    std::vector<std::optional<double>> features;
    std::optional<double> target;
  };

  static DemandPanel build(FeatureSchema schema, const std::vector<Row>& rows);

  const FeatureSchema& schema() const { return schema_; }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<std::string>& bases() const { return bases_; }
  const std::vector<std::string>& equipment() const { return equipment_; }
  const std::vector<int>& years() const { return years_; }
  Index item_count() const { return static_cast<Index>(items_.size()); }
  Index base_count() const { return static_cast<Index>(bases_.size()); }
  Index equipment_count() const { return static_cast<Index>(equipment_.size()); }
  Index year_count() const { return static_cast<Index>(years_.size()); }
  Index row_count() const { return static_cast<Index>(keys_.size()); }

  const std::vector<RecordKey>& keys() const { return keys_; }
  const Eigen::MatrixXd& features() const { return features_; }
  const BoolMatrix& missing() const { return missing_; }
  const std::vector<std::optional<double>>& targets() const { return targets_; }

  // Row index for a key, or -1 when the record is absent.
  Index row_of(Index item, Index base, Index equipment, Index year) const;
  std::vector<Index> rows_of_item(Index item) const;
  bool grid_complete(Index item) const;
  Index missing_count() const { return missing_.count(); }

  // Annual demand of an item: sum of present targets in that year, or empty
  // when no target is recorded for the year.
  std::optional<double> annual_demand(Index item, Index year) const;
  // Annual demands for every year before the last one that has a target.
  std::vector<double> demand_history(Index item) const;
  // Demand of the forecast year (the last panel year).
  std::optional<double> forecast_target(Index item) const;
  // Items usable as samples: complete grid and a forecast-year target.
  std::vector<Index> sample_items() const;

  DemandPanel with_features(Eigen::MatrixXd features, BoolMatrix missing) const;

 private:
  FeatureSchema schema_;
  std::vector<std::string> items_, bases_, equipment_;
  std::vector<int> years_;
  std::vector<RecordKey> keys_;
  Eigen::MatrixXd features_;
  BoolMatrix missing_;
  std::vector<std::optional<double>> targets_;
  std::vector<Index> grid_;  // item-major (item, base, equipment, year) -> row or -1
};

// Reads a comma-separated table with columns item, base, equipment, year
// (any position), features, and optionally a trailing target column named
// `target_id`. Lines starting with '#' are skipped.
DemandPanel ingest_panel(std::istream& in, const std::string& target_id = "demand");
DemandPanel ingest_panel_file(const std::string& path, const std::string& target_id = "demand");
void write_panel_csv(const DemandPanel& panel, std::ostream& out);

// Linear-interpolation quantile between order statistics; `sorted` ascending.
double quantile_linear(const std::vector<double>& sorted, double q);
double median(std::vector<double> values);

// Replaces values outside the outer fence [Q1 - 3 IQR, Q3 + 3 IQR] by missing
// marks, per feature. A zero IQR removes nothing.
DemandPanel remove_outliers(const DemandPanel& panel);

// Fills missing cells with the item's median for that feature, falling back
// to the global feature median.
DemandPanel impute_missing(const DemandPanel& panel);

struct NormalizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // population
  nlohmann::json to_json() const;
};

NormalizationStats fit_normalization(const DemandPanel& panel, const std::vector<Index>& items);
DemandPanel apply_normalization(const DemandPanel& panel, const NormalizationStats& stats);
// Fits on `train_items` and applies to every row; targets stay unscaled.
std::pair<DemandPanel, NormalizationStats> normalize(const DemandPanel& panel,
                                                     const std::vector<Index>& train_items);

struct FoldSplit {
  int fold = 0;
  std::vector<Index> train, validation, test;  // item indices, ascending
};

inline constexpr int kFoldCount = 5;

// Five item-level folds: a seeded shuffle cut into five chunks; fold k tests
// on chunk k, validates on chunk k+1 and trains on the rest.
std::vector<FoldSplit> make_folds(const std::vector<Index>& items, std::uint64_t seed);
std::vector<FoldSplit> make_folds(const DemandPanel& panel, std::uint64_t seed);

struct SyntheticSpec {
  Index items = 10, bases = 4, equipment = 3, years = 6, features = 8;
  Index feature_clusters = 3, base_clusters = 2, equipment_clusters = 2;
  double zero_inflation = 0.3;
  double noise = 0.2;
  double base_rate = 1.5;
  int first_year = 2010;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticGroundTruth {
  std::vector<Index> feature_cluster, base_cluster, equipment_cluster;
  std::vector<double> cluster_coefficients;  // log-rate effect per feature cluster
  Index cost_feature = 0;
  nlohmann::json to_json(const SyntheticSpec& spec) const;
};

struct SyntheticPanel {
  DemandPanel panel;
  SyntheticGroundTruth truth;
};

// Zero-inflated Poisson demand driven by cluster-shared feature effects.
// Feature cluster 0 is item-level (constant across base, equipment, year);
// feature 0 is a log-normal item cost.
SyntheticPanel generate_synthetic(const SyntheticSpec& spec);

}  // namespace voxnas
