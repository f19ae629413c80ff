#include "voxnas/selector.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "voxnas/embedding.hpp"

namespace voxnas {

nlohmann::json ItemGroup::to_json() const {
  return {{"id", id},
          {"size", size()},
          {"items", items},
          {"cost_range", {cost_min, cost_max}},
          {"demand_range", {demand_min, demand_max}}};
}

// ---------------------------------------------------------------- grouping

namespace {

// Ward merge history via Lance-Williams updates on squared distances.
// Returns, for every k, the labels after merging down to k clusters.
std::vector<std::vector<Index>> ward_cuts(const Eigen::MatrixXd& pts, Index k_max) {
  const Index n = pts.rows();
  Eigen::MatrixXd d(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) d(i, j) = (pts.row(i) - pts.row(j)).squaredNorm();
  std::vector<Index> size(static_cast<std::size_t>(n), 1);
  std::vector<bool> alive(static_cast<std::size_t>(n), true);
  std::vector<Index> label(static_cast<std::size_t>(n));
  std::iota(label.begin(), label.end(), Index{0});
  std::vector<std::vector<Index>> cuts(static_cast<std::size_t>(k_max + 1));
  auto snapshot = [&](Index k) {
    if (k <= k_max) cuts[static_cast<std::size_t>(k)] = label;
  };
  snapshot(n);
  for (Index clusters = n; clusters > 1; --clusters) {
    Index a = -1, b = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      for (Index j = i + 1; j < n; ++j) {
        if (alive[static_cast<std::size_t>(j)] && d(i, j) < best) {
          best = d(i, j);
          a = i;
          b = j;
        }
      }
    }
    const double na = static_cast<double>(size[static_cast<std::size_t>(a)]);
    const double nb = static_cast<double>(size[static_cast<std::size_t>(b)]);
    for (Index m = 0; m < n; ++m) {
      if (!alive[static_cast<std::size_t>(m)] || m == a || m == b) continue;
      const double nm = static_cast<double>(size[static_cast<std::size_t>(m)]);
      const double v = ((na + nm) * d(a, m) + (nb + nm) * d(b, m) - nm * d(a, b)) / (na + nb + nm);
      d(a, m) = d(m, a) = v;
    }
    size[static_cast<std::size_t>(a)] += size[static_cast<std::size_t>(b)];
    alive[static_cast<std::size_t>(b)] = false;
    for (auto& l : label) {
      if (l == b) l = a;
    }
    snapshot(clusters - 1);
  }
  return cuts;
}

std::vector<Index> canonical(const std::vector<Index>& labels) {
  std::map<Index, Index> remap;
  std::vector<Index> out;
  out.reserve(labels.size());
  for (Index l : labels) out.push_back(remap.emplace(l, static_cast<Index>(remap.size())).first->second);
  return out;
}

}  // namespace

std::vector<ItemGroup> cluster_items(const std::vector<ItemStat>& stats, Index max_groups) {
  const auto n = static_cast<Index>(stats.size());
  if (n < 2) throw TooFewItems("item grouping needs at least 2 items, got " + std::to_string(n));
  if (max_groups < 1) throw ConfigError("max_groups must be at least 1");
  Eigen::MatrixXd pts(n, 2);
  for (Index i = 0; i < n; ++i) {
    pts(i, 0) = stats[static_cast<std::size_t>(i)].cost;
    pts(i, 1) = stats[static_cast<std::size_t>(i)].demand;
  }
  if (!pts.allFinite()) throw NonNumericCell("item cost or demand is not finite");
  for (Index c = 0; c < 2; ++c) {
    const double mean = pts.col(c).mean();
    const double sd = std::sqrt((pts.col(c).array() - mean).square().mean());
    if (sd > 0.0) {
      pts.col(c) = ((pts.col(c).array() - mean) / sd).matrix();
    } else {
      pts.col(c).setZero();
    }
  }

  std::vector<Index> labels(static_cast<std::size_t>(n), 0);
  const Index k_max = std::min(max_groups, n);
  if (k_max >= 2) {
    const auto cuts = ward_cuts(pts, k_max);
    double best = -std::numeric_limits<double>::infinity();
    for (Index k = 2; k <= k_max; ++k) {
      const auto l = canonical(cuts[static_cast<std::size_t>(k)]);
      const double s = silhouette_score(pts, l);
      if (s > best) {
        best = s;
        labels = l;
      }
    }
  }

  const Index groups = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<ItemGroup> out(static_cast<std::size_t>(groups));
  for (Index g = 0; g < groups; ++g) {
    auto& grp = out[static_cast<std::size_t>(g)];
    grp.id = "G" + std::to_string(g + 1);
    grp.cost_min = grp.demand_min = std::numeric_limits<double>::infinity();
    grp.cost_max = grp.demand_max = -std::numeric_limits<double>::infinity();
  }
  for (Index i = 0; i < n; ++i) {
    const auto& s = stats[static_cast<std::size_t>(i)];
    auto& grp = out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    grp.items.push_back(s.item);
    grp.cost_min = std::min(grp.cost_min, s.cost);
    grp.cost_max = std::max(grp.cost_max, s.cost);
    grp.demand_min = std::min(grp.demand_min, s.demand);
    grp.demand_max = std::max(grp.demand_max, s.demand);
  }
  return out;
}

// ---------------------------------------------------------------- problem

void SelectionProblem::validate() const {
  const Index g = group_count(), m = model_count();
  if (g < 1 || m < 1) throw ConfigError("selection needs at least one group and one model");
  if (group_sizes.size() != g || runtimes.size() != m) throw ShapeMismatch("group sizes or run times misaligned");
  if (acc.rows() != g || acc.cols() != m || std.rows() != g || std.cols() != m) {
    throw ShapeMismatch("accuracy/std matrices must be " + std::to_string(g) + " x " + std::to_string(m));
  }
  if (!acc.allFinite() || (acc.array() < 0.0).any() || (acc.array() > 1.0).any()) {
    throw ConfigError("accuracies must lie in [0, 1]");
  }
  if (!std.allFinite() || (std.array() < 0.0).any()) throw ConfigError("std entries must be finite and >= 0");
  if (!runtimes.allFinite() || (runtimes.array() < 0.0).any()) throw ConfigError("run times must be finite and >= 0");
  if (!group_sizes.allFinite() || (group_sizes.array() < 0.0).any() || group_sizes.sum() <= 0.0) {
    throw ConfigError("group sizes must be >= 0 with a positive total");
  }
  if (std::isnan(budget) || budget < 0.0) throw ConfigError("budget must be >= 0");
  if (!(w1 >= 0.0) || !(w2 >= 0.0)) throw ConfigError("W1 and W2 must be >= 0");
}

nlohmann::json SelectionProblem::to_json() const {
  nlohmann::json j;
  j["groups"] = nlohmann::json::array();
  for (Index i = 0; i < group_count(); ++i) j["groups"].push_back({{"id", group_ids[static_cast<std::size_t>(i)]}, {"size", group_sizes[i]}});
  j["models"] = nlohmann::json::array();
  for (Index k = 0; k < model_count(); ++k) {
    j["models"].push_back({{"id", model_ids[static_cast<std::size_t>(k)]}, {"runtime_seconds", runtimes[k]}});
  }
  auto matrix = [](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(m.cols());
      for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  j["acc"] = matrix(acc);
  j["std"] = matrix(std);
  j["budget_seconds"] = std::isinf(budget) ? nlohmann::json(nullptr) : nlohmann::json(budget);
  j["w1"] = w1;
  j["w2"] = w2;
  return j;
}

SelectionProblem SelectionProblem::from_json(const nlohmann::json& j) {
  try {
    SelectionProblem p;
    const auto& groups = j.at("groups");
    const auto& models = j.at("models");
    p.group_sizes.resize(static_cast<Index>(groups.size()));
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const auto& id = groups[i].at("id");
      p.group_ids.push_back(id.is_string() ? id.get<std::string>() : id.dump());
      p.group_sizes[static_cast<Index>(i)] = groups[i].at("size").get<double>();
    }
    p.runtimes.resize(static_cast<Index>(models.size()));
    for (std::size_t k = 0; k < models.size(); ++k) {
      p.model_ids.push_back(models[k].at("id").get<std::string>());
      p.runtimes[static_cast<Index>(k)] = models[k].value("runtime_seconds", 0.0);
    }
    auto matrix = [&](const nlohmann::json& rows) {
      Eigen::MatrixXd m(p.group_count(), p.model_count());
      if (static_cast<Index>(rows.size()) != p.group_count()) throw ShapeMismatch("matrix row count differs from group count");
      for (Index r = 0; r < m.rows(); ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        if (static_cast<Index>(row.size()) != p.model_count()) throw ShapeMismatch("matrix row width differs from model count");
        for (Index c = 0; c < m.cols(); ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
      return m;
    };
    p.acc = matrix(j.at("acc"));
    p.std = j.contains("std") ? matrix(j.at("std")) : Eigen::MatrixXd::Zero(p.group_count(), p.model_count());
    if (j.contains("budget_seconds") && !j.at("budget_seconds").is_null()) p.budget = j.at("budget_seconds").get<double>();
    p.w1 = j.value("w1", 1.0);
    p.w2 = j.value("w2", 0.0);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("selection problem: ") + e.what());
  }
}

nlohmann::json SelectionResult::to_json(const SelectionProblem& problem) const {
  nlohmann::json j;
  j["assignment"] = nlohmann::json::array();
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    j["assignment"].push_back({{"group", problem.group_ids[i]},
                               {"size", problem.group_sizes[static_cast<Index>(i)]},
                               {"model", problem.model_ids[static_cast<std::size_t>(assignment[i])]},
                               {"model_index", assignment[i]}});
  }
  std::vector<std::string> models;
  for (Index a : assignment) models.push_back(problem.model_ids[static_cast<std::size_t>(a)]);
  j["models"] = models;
  j["objective"] = objective;
  j["weighted_runtime_seconds"] = runtime;
  j["optimal"] = optimal;
  return j;
}

// ---------------------------------------------------------------- solvers

double selection_objective(const SelectionProblem& p, const std::vector<Index>& assignment, double w1, double w2) {
  const double c = p.group_sizes.sum();
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const auto g = static_cast<Index>(i);
    const double share = p.group_sizes[g] / c;
    total += w1 * share * p.acc(g, assignment[i]) - w2 * share * p.std(g, assignment[i]);
  }
  return total;
}

double selection_runtime(const SelectionProblem& p, const std::vector<Index>& assignment) {
  const double c = p.group_sizes.sum();
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    total += p.group_sizes[static_cast<Index>(i)] / c * p.runtimes[assignment[i]];
  }
  return total;
}

namespace {

struct Incumbent {
  std::vector<Index> assignment;
  double objective = -std::numeric_limits<double>::infinity();
  bool found = false;

  // Exact comparison on order-fixed sums; ties go to the smaller vector.
  void offer(const SelectionProblem& p, const std::vector<Index>& a, double w1, double w2) {
    if (!(selection_runtime(p, a) <= p.budget)) return;
    const double obj = selection_objective(p, a, w1, w2);
    if (!found || obj > objective || (obj == objective && a < assignment)) {
      assignment = a;
      objective = obj;
      found = true;
    }
  }
};

SelectionResult finish(const SelectionProblem& p, const Incumbent& inc) {
  if (!inc.found) {
    throw Infeasible("no assignment meets the run-time budget " + std::to_string(p.budget) + " s");
  }
  SelectionResult r;
  r.assignment = inc.assignment;
  r.objective = inc.objective;
  r.runtime = selection_runtime(p, inc.assignment);
  r.optimal = true;
  return r;
}

void check_weights(double w1, double w2) {
  if (!(w1 >= 0.0) || !(w2 >= 0.0) || std::isinf(w1) || std::isinf(w2)) {
    throw ConfigError("W1 and W2 must be finite and >= 0");
  }
}

}  // namespace

SelectionResult solve_selection_robust(const SelectionProblem& p, double w1, double w2) {
  p.validate();
  check_weights(w1, w2);
  const Index g = p.group_count(), m = p.model_count();
  const double c = p.group_sizes.sum();

  // Larger groups first for tighter bounds.
  std::vector<Index> order(static_cast<std::size_t>(g));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return p.group_sizes[a] > p.group_sizes[b]; });

  Eigen::MatrixXd value(g, m), time(g, m);
  for (Index i = 0; i < g; ++i) {
    const double share = p.group_sizes[i] / c;
    for (Index j = 0; j < m; ++j) {
      value(i, j) = w1 * share * p.acc(i, j) - w2 * share * p.std(i, j);
      time(i, j) = share * p.runtimes[j];
    }
  }
  // Suffix sums over the search order of each group's best value and least time.
  Eigen::VectorXd best_rest = Eigen::VectorXd::Zero(g + 1), time_rest = Eigen::VectorXd::Zero(g + 1);
  for (Index d = g - 1; d >= 0; --d) {
    const Index i = order[static_cast<std::size_t>(d)];
    best_rest[d] = best_rest[d + 1] + value.row(i).maxCoeff();
    time_rest[d] = time_rest[d + 1] + time.row(i).minCoeff();
  }
  const double scale = value.cwiseAbs().sum() + time.cwiseAbs().sum() + 1.0;
  const double slack = 1e-9 * scale;

  Incumbent inc;
  std::vector<Index> a(static_cast<std::size_t>(g), 0);
  auto recurse = [&](auto&& self, Index depth, double acc_value, double acc_time) -> void {
    if (acc_time + time_rest[depth] > p.budget + slack) return;
    if (inc.found && acc_value + best_rest[depth] < inc.objective - slack) return;
    if (depth == g) {
      inc.offer(p, a, w1, w2);
      return;
    }
    const Index i = order[static_cast<std::size_t>(depth)];
    for (Index j = 0; j < m; ++j) {
      a[static_cast<std::size_t>(i)] = j;
      self(self, depth + 1, acc_value + value(i, j), acc_time + time(i, j));
    }
  };
  recurse(recurse, 0, 0.0, 0.0);
  return finish(p, inc);
}

SelectionResult solve_selection(const SelectionProblem& problem) { return solve_selection_robust(problem, 1.0, 0.0); }

SelectionResult solve_configured(const SelectionProblem& problem) {
  return solve_selection_robust(problem, problem.w1, problem.w2);
}

SelectionResult brute_force_oracle(const SelectionProblem& p, double w1, double w2) {
  p.validate();
  check_weights(w1, w2);
  const Index g = p.group_count(), m = p.model_count();
  if (std::pow(static_cast<double>(m), static_cast<double>(g)) > kOracleLimit) {
    throw InstanceTooLarge(std::to_string(m) + "^" + std::to_string(g) + " assignments exceed the oracle limit");
  }
  Incumbent inc;
  std::vector<Index> a(static_cast<std::size_t>(g), 0);
  while (true) {
    inc.offer(p, a, w1, w2);
    Index pos = g - 1;
    while (pos >= 0 && a[static_cast<std::size_t>(pos)] == m - 1) a[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
    ++a[static_cast<std::size_t>(pos)];
  }
  return finish(p, inc);
}

// ---------------------------------------------------------------- from results

SelectionProblem build_selection_problem(const std::vector<ForecastResult>& results,
                                         const std::vector<ItemGroup>& groups) {
  if (results.empty() || groups.empty()) throw EmptyInput("selection needs results and groups");
  std::map<std::string, Index> group_of;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& item : groups[g].items) group_of[item] = static_cast<Index>(g);
  }
  std::map<std::string, std::vector<const ForecastResult*>> by_model;
  for (const auto& r : results) {
    r.validate();
    by_model[r.model].push_back(&r);
  }
  SelectionProblem p;
  const auto gn = static_cast<Index>(groups.size()), mn = static_cast<Index>(by_model.size());
  p.group_sizes.resize(gn);
  for (Index g = 0; g < gn; ++g) {
    p.group_ids.push_back(groups[static_cast<std::size_t>(g)].id);
    p.group_sizes[g] = static_cast<double>(groups[static_cast<std::size_t>(g)].size());
  }
  p.runtimes.resize(mn);
  p.acc = Eigen::MatrixXd::Zero(gn, mn);
  p.std = Eigen::MatrixXd::Zero(gn, mn);
  Index j = 0;
  for (const auto& [model, rs] : by_model) {
    p.model_ids.push_back(model);
    double rt = 0.0;
    std::vector<std::vector<double>> pooled_a(static_cast<std::size_t>(gn)), pooled_f(static_cast<std::size_t>(gn));
    std::vector<std::vector<double>> fold_acc(static_cast<std::size_t>(gn));
    for (const auto* r : rs) {
      rt += r->runtime_seconds;
      std::vector<std::vector<double>> fa(static_cast<std::size_t>(gn)), ff(static_cast<std::size_t>(gn));
      for (std::size_t k = 0; k < r->items.size(); ++k) {
        const auto it = group_of.find(r->items[k]);
        if (it == group_of.end()) continue;
        const auto g = static_cast<std::size_t>(it->second);
        fa[g].push_back(r->actual[static_cast<Index>(k)]);
        ff[g].push_back(r->forecast[static_cast<Index>(k)]);
      }
      for (std::size_t g = 0; g < fa.size(); ++g) {
        if (fa[g].empty()) continue;
        fold_acc[g].push_back(minmax_accuracy(as_vector(fa[g]), as_vector(ff[g])));
        pooled_a[g].insert(pooled_a[g].end(), fa[g].begin(), fa[g].end());
        pooled_f[g].insert(pooled_f[g].end(), ff[g].begin(), ff[g].end());
      }
    }
    p.runtimes[j] = rt / static_cast<double>(rs.size());
    for (Index g = 0; g < gn; ++g) {
      const auto& fa = fold_acc[static_cast<std::size_t>(g)];
      if (fa.empty()) continue;
      p.acc(g, j) = minmax_accuracy(as_vector(pooled_a[static_cast<std::size_t>(g)]),
                                    as_vector(pooled_f[static_cast<std::size_t>(g)]));
      const double mean = std::accumulate(fa.begin(), fa.end(), 0.0) / static_cast<double>(fa.size());
      double var = 0.0;
      for (double v : fa) var += (v - mean) * (v - mean);
      p.std(g, j) = std::sqrt(var / static_cast<double>(fa.size()));
    }
    ++j;
  }
  return p;
}

}  // namespace voxnas
