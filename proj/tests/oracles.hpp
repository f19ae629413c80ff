#pragma once

// Reference computations written independently of the library: plain loops,
// no shared helpers. Tests compare library results against these.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double rmse(const std::vector<double>& a, const std::vector<double>& f) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - f[i]) * (a[i] - f[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

inline double mae(const std::vector<double>& a, const std::vector<double>& f) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - f[i]);
  return s / static_cast<double>(a.size());
}

inline double minmax(const std::vector<double>& a, const std::vector<double>& f) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0 && f[i] == 0) {
      s += 1;
    } else {
      s += std::min(a[i], f[i]) / std::max(a[i], f[i]);
    }
  }
  return s / static_cast<double>(a.size());
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline long factorial(long n) { return n <= 1 ? 1 : n * factorial(n - 1); }

// Exhaustive multiple-choice selection. Assignments are visited in
// lexicographic order and a later one only wins when strictly better, so the
// smallest optimal vector is kept.
struct Choice {
  bool feasible = false;
  std::vector<long> assignment;
  double objective = -std::numeric_limits<double>::infinity();
};

inline Choice enumerate(const std::vector<double>& sizes, const Eigen::MatrixXd& acc, const Eigen::MatrixXd& sd,
                        const std::vector<double>& runtimes, double budget, double w1, double w2) {
  const long groups = static_cast<long>(sizes.size());
  const long models = static_cast<long>(runtimes.size());
  double c = 0;
  for (double s : sizes) c += s;
  Choice best;
  std::vector<long> x(static_cast<std::size_t>(groups), 0);
  while (true) {
    double obj = 0, rt = 0;
    for (long i = 0; i < groups; ++i) {
      const double share = sizes[static_cast<std::size_t>(i)] / c;
      obj += w1 * share * acc(i, x[static_cast<std::size_t>(i)]) - w2 * share * sd(i, x[static_cast<std::size_t>(i)]);
      rt += sizes[static_cast<std::size_t>(i)] / c * runtimes[static_cast<std::size_t>(x[static_cast<std::size_t>(i)])];
    }
    if (rt <= budget && (!best.feasible || obj > best.objective)) {
      best.feasible = true;
      best.objective = obj;
      best.assignment = x;
    }
    long k = groups - 1;
    while (k >= 0 && ++x[static_cast<std::size_t>(k)] == models) {
      x[static_cast<std::size_t>(k)] = 0;
      --k;
    }
    if (k < 0) break;
  }
  return best;
}

// Central differences, one coordinate at a time.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double eps) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi[i] += eps;
    lo[i] -= eps;
    g[i] = (f(hi) - f(lo)) / (2 * eps);
  }
  return g;
}

inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double den = std::max({std::fabs(a[i]), std::fabs(n[i]), 1e-8});
    worst = std::max(worst, std::fabs(a[i] - n[i]) / den);
  }
  return worst;
}

// Type-7 quantile by hand: h = (n - 1) q.
inline double quantile7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace oracle
