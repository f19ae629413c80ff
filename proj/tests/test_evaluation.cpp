#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "voxnas/error.hpp"
#include "voxnas/evaluation.hpp"

using namespace voxnas;

namespace {

double rmse_v(const std::vector<double>& a, const std::vector<double>& f) { return rmse(as_vector(a), as_vector(f)); }
double mae_v(const std::vector<double>& a, const std::vector<double>& f) { return mae(as_vector(a), as_vector(f)); }
double mm_v(const std::vector<double>& a, const std::vector<double>& f) {
  return minmax_accuracy(as_vector(a), as_vector(f));
}

ForecastResult result(const std::string& model, int fold, std::vector<double> a, std::vector<double> f) {
  ForecastResult r;
  r.model = model;
  r.fold = fold;
  for (std::size_t i = 0; i < a.size(); ++i) r.items.push_back("i" + std::to_string(i));
  r.actual = as_vector(a);
  r.forecast = as_vector(f);
  return r;
}

}  // namespace

TEST_CASE("rmse examples") {
  CHECK(rmse_v({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(std::abs(rmse_v({0, 0}, {3, 4}) - std::sqrt(12.5)) < 1e-9);
  CHECK(std::abs(rmse_v({5}, {8}) - 3.0) < 1e-9);
  CHECK_THROWS_AS(rmse_v({1}, {1, 2}), LengthMismatch);
  CHECK_THROWS_AS(rmse_v({}, {}), EmptyInput);
}

TEST_CASE("mae examples") {
  CHECK(mae_v({4, 4}, {4, 4}) == 0.0);
  CHECK(std::abs(mae_v({0, 0}, {1, -1}) - 1.0) < 1e-9);
  CHECK(std::abs(mae_v({0, 0}, {3, 4}) - 3.5) < 1e-9);
}

TEST_CASE("min-max examples") {
  CHECK(mm_v({5, 5}, {5, 5}) == 1.0);
  CHECK(std::abs(mm_v({2, 8}, {4, 4}) - 0.5) < 1e-9);
  CHECK(mm_v({0}, {0}) == 1.0);
  CHECK(mm_v({0}, {3}) == 0.0);
  CHECK_THROWS_AS(mm_v({-1}, {1}), NegativeValue);
}

TEST_CASE("metrics agree with the loop oracle") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t % 17);
    auto a = oracle::random_vector(rng, n, 0, 20);
    auto f = oracle::random_vector(rng, n, 0, 20);
    if (t % 3 == 0) a[0] = f[0] = 0;
    CHECK(std::abs(rmse_v(a, f) - oracle::rmse(a, f)) < 1e-9);
    CHECK(std::abs(mae_v(a, f) - oracle::mae(a, f)) < 1e-9);
    CHECK(std::abs(mm_v(a, f) - oracle::minmax(a, f)) < 1e-9);
    CHECK(mm_v(a, f) == mm_v(f, a));
    CHECK(rmse_v(a, f) >= mae_v(a, f));
  }
}

TEST_CASE("baseline forecasts") {
  CHECK(arithmetic_mean_forecast({2, 4, 6}) == doctest::Approx(4.0));
  CHECK(ses_forecast({3, 9, 1, 7}, 1.0) == 7.0);
  CHECK(ses_forecast({3, 9}, 0.5) == doctest::Approx(6.0));
  // history is oldest first; most recent is 6
  CHECK(wma_forecast({2, 4, 6}, {0.5, 0.3, 0.2}) == doctest::Approx(4.6));
  CHECK(wma_forecast({6}, {0.5, 0.3, 0.2}) == doctest::Approx(6.0));
  CHECK_THROWS_AS(arithmetic_mean_forecast({}), InsufficientHistory);
}

TEST_CASE("regression tree fits a step") {
  Eigen::MatrixXd x(8, 1);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = i;
    y[i] = i < 4 ? 1.0 : 5.0;
  }
  RegressionTree t;
  t.fit(x, y, 3, 1);
  CHECK(t.predict(Eigen::RowVectorXd::Constant(1, 1.0)) == 1.0);
  CHECK(t.predict(Eigen::RowVectorXd::Constant(1, 6.0)) == 5.0);
  CHECK(t.node_count() == 3);
}

TEST_CASE("compare models") {
  const std::vector<double> accs{0.6, 0.62, 0.64, 0.66, 0.63};
  std::vector<ForecastResult> rs;
  for (int k = 0; k < 5; ++k) rs.push_back(result("m", k, {1.0}, {accs[static_cast<std::size_t>(k)]}));
  const auto rep = compare_models(rs);
  REQUIRE(rep.models.size() == 1);
  CHECK(rep.best == 0);
  CHECK(rep.models[0].minmax_mean == doctest::Approx(0.63));
  CHECK(rep.models[0].minmax_std == doctest::Approx(oracle::population_std(accs)));
  CHECK(rep.models[0].minmax_std == doctest::Approx(std::sqrt(0.0004)));

  std::vector<ForecastResult> same;
  for (int k = 0; k < 5; ++k) same.push_back(result("z", k, {1, 2}, {2, 2}));
  const auto r2 = compare_models(same);
  CHECK(r2.models[0].minmax_std == 0.0);
  CHECK(r2.models[0].rmse_std == 0.0);
  CHECK(r2.models[0].mae_std == 0.0);
}

TEST_CASE("compare models ignores input order and flags the best") {
  std::vector<ForecastResult> rs{result("b", 0, {1}, {0.5}), result("a", 0, {1}, {0.9}), result("c", 0, {1}, {0.9}),
                                 result("b", 1, {1}, {0.7})};
  const auto rep = compare_models(rs);
  CHECK(rep.models[rep.best].model == "a");
  std::reverse(rs.begin(), rs.end());
  const auto again = compare_models(rs);
  CHECK(again.to_json() == rep.to_json());
}

TEST_CASE("results csv round trip") {
  std::vector<ForecastResult> rs{result("a", 0, {1, 2}, {1.5, 0.25}), result("b", 3, {0}, {4})};
  rs[1].runtime_seconds = 0.125;
  std::stringstream buf;
  buf << "# comment\n";
  write_results_csv(rs, buf);
  const auto back = read_results_csv(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].forecast == rs[0].forecast);
  CHECK(back[1].fold == 3);
  CHECK(back[1].runtime_seconds == 0.125);
}

TEST_CASE("baselines on a synthetic fold") {
  SyntheticSpec spec;
  spec.items = 20;
  const auto panel = impute_missing(generate_synthetic(spec).panel);
  const auto folds = make_folds(panel, 1);
  for (auto kind : all_baselines()) {
    CAPTURE(baseline_name(kind));
    const auto r = run_baseline(kind, panel, folds[2]);
    CHECK(r.items.size() == folds[2].test.size());
    CHECK((r.forecast.array() >= 0).all());
    CHECK(r.forecast.allFinite());
    CHECK(baseline_from_name(baseline_name(kind)) == kind);
  }
}
