#include "voxnas/evaluation.hpp"

#include <chrono>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "voxnas/embedding.hpp"
#include "voxnas/io.hpp"

namespace voxnas {

void ForecastResult::validate() const {
  if (actual.size() != forecast.size() || static_cast<Index>(items.size()) != actual.size()) {
    throw LengthMismatch("result '" + model + "' has misaligned items/actuals/forecasts");
  }
  if (actual.size() == 0) throw EmptyInput("result '" + model + "' has no items");
  if ((actual.array() < 0.0).any()) throw NegativeValue("result '" + model + "' has negative actuals");
}

// ---------------------------------------------------------------- reports

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace

MetricReport compare_models(const std::vector<ForecastResult>& results) {
  if (results.empty()) throw EmptyInput("no forecast results to compare");
  std::map<std::string, std::map<int, const ForecastResult*>> grouped;
  for (const auto& r : results) {
    r.validate();
    auto [it, fresh] = grouped[r.model].emplace(r.fold, &r);
    if (!fresh) throw LengthMismatch("model '" + r.model + "' has two results for fold " + std::to_string(r.fold));
  }
  MetricReport report;
  for (const auto& [model, folds] : grouped) {
    std::vector<double> mm, rm, ma, rt;
    for (const auto& [fold, r] : folds) {
      mm.push_back(minmax_accuracy(r->actual, r->forecast));
      rm.push_back(rmse(r->actual, r->forecast));
      ma.push_back(mae(r->actual, r->forecast));
      rt.push_back(r->runtime_seconds);
    }
    ModelMetrics m;
    m.model = model;
    m.folds = static_cast<int>(folds.size());
    std::tie(m.minmax_mean, m.minmax_std) = mean_std(mm);
    std::tie(m.rmse_mean, m.rmse_std) = mean_std(rm);
    std::tie(m.mae_mean, m.mae_std) = mean_std(ma);
    m.runtime_mean = mean_std(rt).first;
    report.models.push_back(m);
  }
  for (std::size_t i = 1; i < report.models.size(); ++i) {
    if (report.models[i].minmax_mean > report.models[report.best].minmax_mean) report.best = i;
  }
  return report;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["best_model"] = models.empty() ? "" : models[best].model;
  j["models"] = nlohmann::json::array();
  for (const auto& m : models) {
    j["models"].push_back({{"model", m.model},
                           {"folds", m.folds},
                           {"minmax_mean", m.minmax_mean},
                           {"minmax_std", m.minmax_std},
                           {"rmse_mean", m.rmse_mean},
                           {"rmse_std", m.rmse_std},
                           {"mae_mean", m.mae_mean},
                           {"mae_std", m.mae_std},
                           {"runtime_mean_seconds", m.runtime_mean}});
  }
  return j;
}

void MetricReport::write_csv(std::ostream& out) const {
  out << "model,folds,minmax_mean,minmax_std,rmse_mean,rmse_std,mae_mean,mae_std,runtime_mean_seconds,best\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    out << m.model << ',' << m.folds << ',' << io::format_double(m.minmax_mean) << ','
        << io::format_double(m.minmax_std) << ',' << io::format_double(m.rmse_mean) << ','
        << io::format_double(m.rmse_std) << ',' << io::format_double(m.mae_mean) << ','
        << io::format_double(m.mae_std) << ',' << io::format_double(m.runtime_mean) << ','
        << (i == best ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------- baselines

const std::vector<BaselineKind>& all_baselines() {
  static const std::vector<BaselineKind> kinds{
      BaselineKind::arithmetic_mean, BaselineKind::simple_exponential_smoothing,
      BaselineKind::weighted_moving_average, BaselineKind::linear_regression, BaselineKind::decision_tree};
  return kinds;
}

std::string baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::arithmetic_mean: return "arithmetic_mean";
    case BaselineKind::simple_exponential_smoothing: return "ses";
    case BaselineKind::weighted_moving_average: return "wma";
    case BaselineKind::linear_regression: return "lr";
    case BaselineKind::decision_tree: return "dt";
  }
  return "?";
}

BaselineKind baseline_from_name(const std::string& name) {
  for (BaselineKind k : all_baselines()) {
    if (baseline_name(k) == name) return k;
  }
  throw ConfigError("unknown baseline '" + name + "'");
}

double arithmetic_mean_forecast(const std::vector<double>& history) {
  if (history.empty()) throw InsufficientHistory("no past annual demand");
  return std::accumulate(history.begin(), history.end(), 0.0) / static_cast<double>(history.size());
}

double ses_forecast(const std::vector<double>& history, double smoothing) {
  if (history.empty()) throw InsufficientHistory("no past annual demand");
  double level = history.front();
  for (std::size_t t = 1; t < history.size(); ++t) level = smoothing * history[t] + (1.0 - smoothing) * level;
  return level;
}

double wma_forecast(const std::vector<double>& history, const std::vector<double>& weights) {
  if (history.empty()) throw InsufficientHistory("no past annual demand");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < weights.size() && k < history.size(); ++k) {
    num += weights[k] * history[history.size() - 1 - k];
    den += weights[k];
  }
  if (den <= 0.0) throw ConfigError("moving-average weights must have a positive sum");
  return num / den;
}

void RegressionTree::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Index max_depth, Index min_leaf) {
  if (x.rows() != y.size() || y.size() == 0) throw LengthMismatch("tree training data is misaligned or empty");
  nodes_.clear();
  std::vector<Index> rows(static_cast<std::size_t>(y.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  grow(x, y, std::move(rows), 0, max_depth, std::max<Index>(min_leaf, 1));
}

Index RegressionTree::grow(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<Index> rows, Index depth,
                           Index max_depth, Index min_leaf) {
  const Index id = static_cast<Index>(nodes_.size());
  nodes_.push_back({});
  double sum = 0.0;
  for (Index r : rows) sum += y[r];
  const auto n = static_cast<Index>(rows.size());
  nodes_[static_cast<std::size_t>(id)].value = sum / static_cast<double>(n);
  if (depth >= max_depth || n < 2 * min_leaf) return id;

  double parent_sse = 0.0;
  for (Index r : rows) parent_sse += (y[r] - sum / static_cast<double>(n)) * (y[r] - sum / static_cast<double>(n));
  double best_gain = 1e-12 * std::max(parent_sse, 1.0);
  Index best_feature = -1;
  double best_threshold = 0.0;
  std::vector<Index> order = rows;
  for (Index f = 0; f < x.cols(); ++f) {
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
    double left_sum = 0.0, left_sq = 0.0, total_sq = 0.0;
    for (Index r : order) total_sq += y[r] * y[r];
    for (Index i = 0; i + 1 < n; ++i) {
      const double v = y[order[static_cast<std::size_t>(i)]];
      left_sum += v;
      left_sq += v * v;
      const Index nl = i + 1, nr = n - nl;
      const double xl = x(order[static_cast<std::size_t>(i)], f), xr = x(order[static_cast<std::size_t>(i + 1)], f);
      if (nl < min_leaf || nr < min_leaf || xl == xr) continue;
      const double right_sum = sum - left_sum;
      const double sse = (left_sq - left_sum * left_sum / static_cast<double>(nl)) +
                         (total_sq - left_sq - right_sum * right_sum / static_cast<double>(nr));
      const double gain = parent_sse - sse;
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = f;
        best_threshold = 0.5 * (xl + xr);
      }
    }
  }
  if (best_feature < 0) return id;
  std::vector<Index> left, right;
  for (Index r : rows) (x(r, best_feature) <= best_threshold ? left : right).push_back(r);
  const Index l = grow(x, y, std::move(left), depth + 1, max_depth, min_leaf);
  const Index rr = grow(x, y, std::move(right), depth + 1, max_depth, min_leaf);
  auto& node = nodes_[static_cast<std::size_t>(id)];
  node.feature = best_feature;
  node.threshold = best_threshold;
  node.left = l;
  node.right = rr;
  return id;
}

double RegressionTree::predict(const Eigen::RowVectorXd& row) const {
  if (nodes_.empty()) throw EmptyInput("tree is not fitted");
  Index at = 0;
  while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
    const auto& n = nodes_[static_cast<std::size_t>(at)];
    at = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes_[static_cast<std::size_t>(at)].value;
}

namespace {

std::vector<double> checked_history(const DemandPanel& panel, Index item) {
  auto h = panel.demand_history(item);
  if (h.empty()) {
    throw InsufficientHistory("item '" + panel.items()[static_cast<std::size_t>(item)] +
                              "' has no past annual demand");
  }
  return h;
}

// Flattened normalized voxel followed by the past annual demands (missing
// years filled with the item's mean history).
Eigen::MatrixXd design_matrix(const DemandPanel& normalized, const std::vector<Index>& items) {
  const Index past = normalized.year_count() - 1;
  Eigen::MatrixXd x;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto v = raw_voxel(normalized, items[i]);
    if (x.size() == 0) x.resize(static_cast<Index>(items.size()), v.size() + past);
    x.row(static_cast<Index>(i)).head(v.size()) = v.array().matrix().transpose();
    const auto h = checked_history(normalized, items[i]);
    const double fill = arithmetic_mean_forecast(h);
    for (Index y = 0; y < past; ++y) {
      x(static_cast<Index>(i), v.size() + y) = normalized.annual_demand(items[i], y).value_or(fill);
    }
  }
  return x;
}

Eigen::VectorXd targets_of(const DemandPanel& panel, const std::vector<Index>& items) {
  Eigen::VectorXd y(static_cast<Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto t = panel.forecast_target(items[i]);
    if (!t) throw InsufficientHistory("item '" + panel.items()[static_cast<std::size_t>(items[i])] + "' has no target");
    y[static_cast<Index>(i)] = *t;
  }
  return y;
}

}  // namespace

ForecastResult run_baseline(BaselineKind kind, const DemandPanel& panel, const FoldSplit& fold,
                            const BaselineOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (panel.year_count() < 2) throw InsufficientHistory("panel needs at least one year before the forecast year");
  ForecastResult res;
  res.model = baseline_name(kind);
  res.fold = fold.fold;
  for (Index i : fold.test) res.items.push_back(panel.items()[static_cast<std::size_t>(i)]);
  res.actual = targets_of(panel, fold.test);
  res.forecast.resize(res.actual.size());

  auto per_item = [&](auto&& fn) {
    for (std::size_t i = 0; i < fold.test.size(); ++i) {
      res.forecast[static_cast<Index>(i)] = fn(checked_history(panel, fold.test[i]));
    }
  };
  std::vector<Index> fit_items = fold.train;
  fit_items.insert(fit_items.end(), fold.validation.begin(), fold.validation.end());
  std::sort(fit_items.begin(), fit_items.end());

  switch (kind) {
    case BaselineKind::arithmetic_mean:
      per_item([](const std::vector<double>& h) { return arithmetic_mean_forecast(h); });
      break;
    case BaselineKind::simple_exponential_smoothing: {
      // Smoothing parameter chosen on the validation items.
      const Eigen::VectorXd val_actual = targets_of(panel, fold.validation);
      double best_alpha = 1.0, best_acc = -1.0;
      for (int step = 1; step <= 10; ++step) {
        const double alpha = 0.1 * step;
        Eigen::VectorXd f(val_actual.size());
        for (std::size_t i = 0; i < fold.validation.size(); ++i) {
          f[static_cast<Index>(i)] = ses_forecast(checked_history(panel, fold.validation[i]), alpha);
        }
        const double acc = minmax_accuracy(val_actual, f);
        if (acc > best_acc) {
          best_acc = acc;
          best_alpha = alpha;
        }
      }
      per_item([best_alpha](const std::vector<double>& h) { return ses_forecast(h, best_alpha); });
      break;
    }
    case BaselineKind::weighted_moving_average:
      per_item([&](const std::vector<double>& h) { return wma_forecast(h, options.wma_weights); });
      break;
    case BaselineKind::linear_regression:
    case BaselineKind::decision_tree: {
      const auto normalized = normalize(panel, fold.train).first;
      const Eigen::MatrixXd x_fit = design_matrix(normalized, fit_items);
      const Eigen::VectorXd y_fit = targets_of(panel, fit_items);
      const Eigen::MatrixXd x_test = design_matrix(normalized, fold.test);
      if (kind == BaselineKind::linear_regression) {
        Eigen::MatrixXd a(x_fit.rows(), x_fit.cols() + 1);
        a << x_fit, Eigen::VectorXd::Ones(x_fit.rows());
        const Eigen::VectorXd coef = a.completeOrthogonalDecomposition().solve(y_fit);
        res.forecast = x_test * coef.head(x_fit.cols());
        res.forecast.array() += coef[x_fit.cols()];
      } else {
        RegressionTree tree;
        tree.fit(x_fit, y_fit, options.tree_max_depth, options.tree_min_leaf);
        for (Index i = 0; i < x_test.rows(); ++i) res.forecast[i] = tree.predict(x_test.row(i));
      }
      break;
    }
  }
  res.forecast = res.forecast.cwiseMax(0.0);
  res.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---------------------------------------------------------------- results table

void write_results_csv(const std::vector<ForecastResult>& results, std::ostream& out) {
  out << "model,fold,item,actual,forecast,runtime_seconds\n";
  for (const auto& r : results) {
    r.validate();
    for (Index i = 0; i < r.actual.size(); ++i) {
      out << r.model << ',' << r.fold << ',' << r.items[static_cast<std::size_t>(i)] << ','
          << io::format_double(r.actual[i]) << ',' << io::format_double(r.forecast[i]) << ','
          << io::format_double(r.runtime_seconds) << '\n';
    }
  }
}

std::vector<ForecastResult> read_results_csv(std::istream& in) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    header = io::split_csv_line(t);
    break;
  }
  const std::vector<std::string> expected{"model", "fold", "item", "actual", "forecast", "runtime_seconds"};
  if (header != expected) throw ConfigError("results table header must be: model,fold,item,actual,forecast,runtime_seconds");
  std::vector<ForecastResult> out;
  std::map<std::pair<std::string, int>, std::size_t> index;
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = io::split_csv_line(t);
    if (cells.size() != expected.size()) throw NonNumericCell("results line " + std::to_string(line_no) + " has the wrong width");
    bool ok_fold = false, ok_a = false, ok_f = false, ok_t = false;
    const double fold = io::parse_double(cells[1], ok_fold);
    const double a = io::parse_double(cells[3], ok_a);
    const double f = io::parse_double(cells[4], ok_f);
    const double rt = io::parse_double(cells[5], ok_t);
    if (!(ok_fold && ok_a && ok_f && ok_t)) throw NonNumericCell("results line " + std::to_string(line_no));
    const auto key = std::make_pair(cells[0], static_cast<int>(fold));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      ForecastResult r;
      r.model = cells[0];
      r.fold = static_cast<int>(fold);
      r.runtime_seconds = rt;
      out.push_back(std::move(r));
    }
    out[it->second].items.push_back(cells[2]);
    values[it->second].first.push_back(a);
    values[it->second].second.push_back(f);
  }
  for (auto& [i, av] : values) {
    out[i].actual = as_vector(av.first);
    out[i].forecast = as_vector(av.second);
    out[i].validate();
  }
  return out;
}

}  // namespace voxnas
