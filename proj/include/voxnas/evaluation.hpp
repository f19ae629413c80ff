#pragma once

#include <algorithm>
#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxnas/dataset.hpp"
#include "voxnas/error.hpp"

namespace voxnas {

namespace detail {

template <typename A, typename F>
void check_pair(const Eigen::DenseBase<A>& actual, const Eigen::DenseBase<F>& forecast) {
  if (actual.size() != forecast.size()) {
    throw LengthMismatch(std::to_string(actual.size()) + " actuals vs " + std::to_string(forecast.size()) +
                         " forecasts");
  }
  if (actual.size() == 0) throw EmptyInput("metric of an empty sample");
}

}  // namespace detail

template <typename A, typename F>
double rmse(const Eigen::DenseBase<A>& actual, const Eigen::DenseBase<F>& forecast) {
  detail::check_pair(actual, forecast);
  return std::sqrt((forecast.derived().array() - actual.derived().array()).square().mean());
}

template <typename A, typename F>
double mae(const Eigen::DenseBase<A>& actual, const Eigen::DenseBase<F>& forecast) {
  detail::check_pair(actual, forecast);
  return (forecast.derived().array() - actual.derived().array()).abs().mean();
}

// Mean of min(A, F) / max(A, F). A pair of zeros counts as an exact match.
template <typename A, typename F>
double minmax_accuracy(const Eigen::DenseBase<A>& actual, const Eigen::DenseBase<F>& forecast) {
  detail::check_pair(actual, forecast);
  const auto a = actual.derived().array().template cast<double>().eval();
  const auto f = forecast.derived().array().template cast<double>().eval();
  if ((a < 0.0).any() || (f < 0.0).any()) throw NegativeValue("min-max accuracy needs nonnegative values");
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double hi = std::max(a[i], f[i]);
    total += hi == 0.0 ? 1.0 : std::min(a[i], f[i]) / hi;
  }
  return total / static_cast<double>(a.size());
}

inline Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

struct ForecastResult {
  std::string model;
  int fold = 0;
  std::vector<std::string> items;
  Eigen::VectorXd actual;
  Eigen::VectorXd forecast;
  double runtime_seconds = 0.0;

  void validate() const;
};

struct ModelMetrics {
  std::string model;
  int folds = 0;
  double minmax_mean = 0, minmax_std = 0;
  double rmse_mean = 0, rmse_std = 0;
  double mae_mean = 0, mae_std = 0;
  double runtime_mean = 0;
};

struct MetricReport {
  std::vector<ModelMetrics> models;  // sorted by model id
  std::size_t best = 0;              // highest mean min-max accuracy

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

// Per-model mean and population std across folds.
MetricReport compare_models(const std::vector<ForecastResult>& results);

enum class BaselineKind {
  arithmetic_mean,
  simple_exponential_smoothing,
  weighted_moving_average,
  linear_regression,
  decision_tree,
};
const std::vector<BaselineKind>& all_baselines();
std::string baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);

struct BaselineOptions {
  std::vector<double> wma_weights{0.5, 0.3, 0.2};  // most recent first
  Index tree_max_depth = 6;
  Index tree_min_leaf = 2;
};

double arithmetic_mean_forecast(const std::vector<double>& history);
double ses_forecast(const std::vector<double>& history, double smoothing);
double wma_forecast(const std::vector<double>& history, const std::vector<double>& weights);

// CART regression tree (squared error, midpoint thresholds).
class RegressionTree {
 public:
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Index max_depth, Index min_leaf);
  double predict(const Eigen::RowVectorXd& row) const;
  Index node_count() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Index feature = -1;
    double threshold = 0.0, value = 0.0;
    Index left = -1, right = -1;
  };
  Index grow(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<Index> rows, Index depth,
             Index max_depth, Index min_leaf);
  std::vector<Node> nodes_;
};

// Forecasts the last-year annual demand of the fold's test items. `panel` is
// cleaned (imputed) but not normalized.
ForecastResult run_baseline(BaselineKind kind, const DemandPanel& panel, const FoldSplit& fold,
                            const BaselineOptions& options = {});

// External results table: model, fold, item, actual, forecast, runtime_seconds.
void write_results_csv(const std::vector<ForecastResult>& results, std::ostream& out);
std::vector<ForecastResult> read_results_csv(std::istream& in);

}  // namespace voxnas
