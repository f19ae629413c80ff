#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxnas/evaluation.hpp"
#include "voxnas/tensor.hpp"

namespace voxnas {

struct ItemStat {
  std::string item;
  double cost = 0.0;
  double demand = 0.0;  // mean annual demand
};

struct ItemGroup {
  std::string id;
  std::vector<std::string> items;
  // Bounds of the members' cost and demand, kept as the clustering trace.
  double cost_min = 0, cost_max = 0, demand_min = 0, demand_max = 0;

  Index size() const { return static_cast<Index>(items.size()); }
  nlohmann::json to_json() const;
};

// Ward-linkage agglomerative clustering on standardized (cost, demand); the
// group count in [2, max_groups] maximizes the silhouette (smallest on ties).
// Groups are numbered by their first member in input order.
std::vector<ItemGroup> cluster_items(const std::vector<ItemStat>& stats, Index max_groups);

struct SelectionProblem {
  std::vector<std::string> group_ids;
  Eigen::VectorXd group_sizes;  // c_i
  std::vector<std::string> model_ids;
  Eigen::VectorXd runtimes;  // t_j, seconds
  Eigen::MatrixXd acc;       // groups x models
  Eigen::MatrixXd std;       // groups x models
  double budget = std::numeric_limits<double>::infinity();
  double w1 = 1.0, w2 = 0.0;

  Index group_count() const { return static_cast<Index>(group_ids.size()); }
  Index model_count() const { return static_cast<Index>(model_ids.size()); }
  void validate() const;
  nlohmann::json to_json() const;
  // Missing std matrix means zeros; a null or absent budget means unlimited.
  static SelectionProblem from_json(const nlohmann::json& j);
};

struct SelectionResult {
  std::vector<Index> assignment;  // group -> model
  double objective = 0.0;
  double runtime = 0.0;  // sum_i (c_i / c) t_{x(i)}
  bool optimal = false;
  nlohmann::json to_json(const SelectionProblem& problem) const;
};

// Objective and weighted run time of an assignment, summed in group order.
double selection_objective(const SelectionProblem& p, const std::vector<Index>& assignment, double w1, double w2);
double selection_runtime(const SelectionProblem& p, const std::vector<Index>& assignment);

// Exact branch-and-bound. Among optimal assignments the lexicographically
// smallest model-index vector wins.
SelectionResult solve_selection(const SelectionProblem& problem);
SelectionResult solve_selection_robust(const SelectionProblem& problem, double w1, double w2);
// Uses the problem's own W1, W2.
SelectionResult solve_configured(const SelectionProblem& problem);

inline constexpr double kOracleLimit = 1e6;
SelectionResult brute_force_oracle(const SelectionProblem& problem, double w1 = 1.0, double w2 = 0.0);

// Selection problem from per-item forecast results: acc_ij pools every test
// forecast of model j on group i; std_ij is the population std of the
// per-fold group accuracies; t_j is the mean recorded run time.
SelectionProblem build_selection_problem(const std::vector<ForecastResult>& results,
                                         const std::vector<ItemGroup>& groups);

}  // namespace voxnas
