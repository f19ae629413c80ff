#include "voxnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_set>

#include "voxnas/error.hpp"
#include "voxnas/io.hpp"
#include "voxnas/rng.hpp"

namespace voxnas {

void FeatureSchema::validate() const {
  if (feature_ids.empty()) throw InvalidSpec("schema needs at least one feature");
  std::unordered_set<std::string> seen;
  for (const auto& f : feature_ids) {
    if (!seen.insert(f).second) throw InvalidSpec("duplicate feature id '" + f + "'");
  }
  if (seen.count(target_id)) throw InvalidSpec("target '" + target_id + "' is also a feature");
  if (!level_flags.empty() && level_flags.size() != feature_ids.size()) {
    throw InvalidSpec("level flags must cover every feature");
  }
}

namespace {

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

template <typename T>
Index index_in(const std::vector<T>& sorted, const T& v) {
  return static_cast<Index>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

std::string key_string(const DemandPanel::Row& r) {
  return "(" + r.item + ", " + r.base + ", " + r.equipment + ", " + std::to_string(r.year) + ")";
}

}  // namespace

DemandPanel DemandPanel::build(FeatureSchema schema, const std::vector<Row>& rows) {
  if (schema.level_flags.empty()) {
    schema.level_flags.assign(schema.feature_ids.size(), {true, true, true});
  }
  schema.validate();
  DemandPanel p;
  const Index k = schema.feature_count();
  std::vector<std::string> items, bases, equip;
  std::vector<int> years;
  for (const auto& r : rows) {
    items.push_back(r.item);
    bases.push_back(r.base);
    equip.push_back(r.equipment);
    years.push_back(r.year);
  }
  p.items_ = sorted_unique(std::move(items));
  p.bases_ = sorted_unique(std::move(bases));
  p.equipment_ = sorted_unique(std::move(equip));
  p.years_ = sorted_unique(std::move(years));
  p.schema_ = std::move(schema);

  const Index n = static_cast<Index>(rows.size());
  p.features_ = Eigen::MatrixXd::Zero(n, k);
  p.missing_ = BoolMatrix::Constant(n, k, false);
  p.targets_.resize(rows.size());
  p.keys_.resize(rows.size());
  p.grid_.assign(static_cast<std::size_t>(p.item_count() * p.base_count() * p.equipment_count() *
                                          p.year_count()),
                 -1);
  for (Index r = 0; r < n; ++r) {
    const Row& row = rows[static_cast<std::size_t>(r)];
    if (static_cast<Index>(row.features.size()) != k) {
      throw InvalidSpec("row " + key_string(row) + " has " + std::to_string(row.features.size()) +
                        " features, expected " + std::to_string(k));
    }
    RecordKey key{index_in(p.items_, row.item), index_in(p.bases_, row.base),
                  index_in(p.equipment_, row.equipment), index_in(p.years_, row.year)};
    auto& slot = p.grid_[static_cast<std::size_t>(
        ((key.item * p.base_count() + key.base) * p.equipment_count() + key.equipment) *
            p.year_count() +
        key.year)];
    if (slot >= 0) throw DuplicateKey("repeated key " + key_string(row));
    slot = r;
    p.keys_[static_cast<std::size_t>(r)] = key;
    for (Index f = 0; f < k; ++f) {
      const auto& v = row.features[static_cast<std::size_t>(f)];
      if (v && std::isfinite(*v)) {
        p.features_(r, f) = *v;
      } else {
        p.missing_(r, f) = true;
      }
    }
    if (row.target && *row.target < 0.0) {
      throw InvalidSpec("negative demand at " + key_string(row));
    }
    p.targets_[static_cast<std::size_t>(r)] = row.target;
  }
  return p;
}

Index DemandPanel::row_of(Index item, Index base, Index equipment, Index year) const {
  if (item < 0 || item >= item_count() || base < 0 || base >= base_count() || equipment < 0 ||
      equipment >= equipment_count() || year < 0 || year >= year_count()) {
    return -1;
  }
  return grid_[static_cast<std::size_t>(
      ((item * base_count() + base) * equipment_count() + equipment) * year_count() + year)];
}

std::vector<Index> DemandPanel::rows_of_item(Index item) const {
  std::vector<Index> out;
  const Index cells = base_count() * equipment_count() * year_count();
  for (Index c = 0; c < cells; ++c) {
    const Index r = grid_[static_cast<std::size_t>(item * cells + c)];
    if (r >= 0) out.push_back(r);
  }
  return out;
}

bool DemandPanel::grid_complete(Index item) const {
  const Index cells = base_count() * equipment_count() * year_count();
  return static_cast<Index>(rows_of_item(item).size()) == cells;
}

std::optional<double> DemandPanel::annual_demand(Index item, Index year) const {
  std::optional<double> total;
  for (Index b = 0; b < base_count(); ++b) {
    for (Index e = 0; e < equipment_count(); ++e) {
      const Index r = row_of(item, b, e, year);
      if (r < 0) continue;
      const auto& t = targets_[static_cast<std::size_t>(r)];
      if (t) total = total.value_or(0.0) + *t;
    }
  }
  return total;
}

std::vector<double> DemandPanel::demand_history(Index item) const {
  std::vector<double> out;
  for (Index y = 0; y + 1 < year_count(); ++y) {
    if (auto d = annual_demand(item, y)) out.push_back(*d);
  }
  return out;
}

std::optional<double> DemandPanel::forecast_target(Index item) const {
  if (year_count() == 0) return std::nullopt;
  return annual_demand(item, year_count() - 1);
}

std::vector<Index> DemandPanel::sample_items() const {
  std::vector<Index> out;
  for (Index i = 0; i < item_count(); ++i) {
    if (grid_complete(i) && forecast_target(i)) out.push_back(i);
  }
  return out;
}

DemandPanel DemandPanel::with_features(Eigen::MatrixXd features, BoolMatrix missing) const {
  if (features.rows() != features_.rows() || features.cols() != features_.cols() ||
      missing.rows() != features.rows() || missing.cols() != features.cols()) {
    throw ShapeMismatch("replacement feature matrix has the wrong shape");
  }
  DemandPanel p = *this;
  p.features_ = std::move(features);
  p.missing_ = std::move(missing);
  return p;
}

// ---------------------------------------------------------------- csv

DemandPanel ingest_panel(std::istream& in, const std::string& target_id) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    const std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    header = io::split_csv_line(t);
    break;
  }
  if (header.empty()) throw MissingLevelColumn("empty input: no header row");

  const std::array<std::string, 4> key_names{"item", "base", "equipment", "year"};
  std::array<std::size_t, 4> key_col{};
  std::vector<bool> is_key(header.size(), false);
  for (std::size_t k = 0; k < key_names.size(); ++k) {
    auto it = std::find(header.begin(), header.end(), key_names[k]);
    if (it == header.end()) throw MissingLevelColumn("header lacks the '" + key_names[k] + "' column");
    key_col[k] = static_cast<std::size_t>(it - header.begin());
    is_key[key_col[k]] = true;
  }
  std::optional<std::size_t> target_col;
  if (!is_key.back() && header.back() == target_id) target_col = header.size() - 1;

  FeatureSchema schema;
  schema.target_id = target_id;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (is_key[c] || (target_col && c == *target_col)) continue;
    feature_cols.push_back(c);
    schema.feature_ids.push_back(header[c]);
  }

  std::vector<DemandPanel::Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto cells = io::split_csv_line(t);
    if (cells.size() != header.size()) {
      throw NonNumericCell("line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(header.size()));
    }
    auto numeric = [&](std::size_t c) -> std::optional<double> {
      if (cells[c].empty()) return std::nullopt;
      bool ok = false;
      const double v = io::parse_double(cells[c], ok);
      if (!ok) {
        throw NonNumericCell("line " + std::to_string(line_no) + ", column '" + header[c] +
                             "': '" + cells[c] + "'");
      }
      return v;
    };
    DemandPanel::Row row;
    row.item = cells[key_col[0]];
    row.base = cells[key_col[1]];
    row.equipment = cells[key_col[2]];
    const auto year = numeric(key_col[3]);
    if (!year || *year != std::floor(*year)) {
      throw NonNumericCell("line " + std::to_string(line_no) + ": year must be an integer");
    }
    row.year = static_cast<int>(*year);
    for (std::size_t c : feature_cols) row.features.push_back(numeric(c));
    if (target_col) row.target = numeric(*target_col);
    rows.push_back(std::move(row));
  }
  return DemandPanel::build(std::move(schema), rows);
}

DemandPanel ingest_panel_file(const std::string& path, const std::string& target_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open panel file " + path);
  return ingest_panel(in, target_id);
}

void write_panel_csv(const DemandPanel& panel, std::ostream& out) {
  const auto& s = panel.schema();
  out << "item,base,equipment,year";
  for (const auto& f : s.feature_ids) out << ',' << f;
  out << ',' << s.target_id << '\n';
  for (Index r = 0; r < panel.row_count(); ++r) {
    const auto& key = panel.keys()[static_cast<std::size_t>(r)];
    out << panel.items()[static_cast<std::size_t>(key.item)] << ','
        << panel.bases()[static_cast<std::size_t>(key.base)] << ','
        << panel.equipment()[static_cast<std::size_t>(key.equipment)] << ','
        << panel.years()[static_cast<std::size_t>(key.year)];
    for (Index f = 0; f < s.feature_count(); ++f) {
      out << ',';
      if (!panel.missing()(r, f)) out << io::format_double(panel.features()(r, f));
    }
    out << ',';
    if (const auto& t = panel.targets()[static_cast<std::size_t>(r)]) out << io::format_double(*t);
    out << '\n';
  }
}

// ---------------------------------------------------------------- cleaning

double quantile_linear(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw EmptyInput("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return quantile_linear(values, 0.5);
}

namespace {

std::vector<double> present_values(const DemandPanel& panel, Index f) {
  std::vector<double> v;
  for (Index r = 0; r < panel.row_count(); ++r) {
    if (!panel.missing()(r, f)) v.push_back(panel.features()(r, f));
  }
  return v;
}

}  // namespace

DemandPanel remove_outliers(const DemandPanel& panel) {
  Eigen::MatrixXd features = panel.features();
  BoolMatrix missing = panel.missing();
  for (Index f = 0; f < panel.schema().feature_count(); ++f) {
    auto values = present_values(panel, f);
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    const double q1 = quantile_linear(values, 0.25);
    const double q3 = quantile_linear(values, 0.75);
    const double iqr = q3 - q1;
    if (iqr <= 0.0) continue;
    const double lo = q1 - 3.0 * iqr, hi = q3 + 3.0 * iqr;
    for (Index r = 0; r < panel.row_count(); ++r) {
      if (missing(r, f)) continue;
      if (features(r, f) < lo || features(r, f) > hi) {
        missing(r, f) = true;
        features(r, f) = 0.0;
      }
    }
  }
  return panel.with_features(std::move(features), std::move(missing));
}

DemandPanel impute_missing(const DemandPanel& panel) {
  Eigen::MatrixXd features = panel.features();
  BoolMatrix missing = panel.missing();
  if (!missing.any()) return panel;
  for (Index f = 0; f < panel.schema().feature_count(); ++f) {
    if (!missing.col(f).any()) continue;
    auto global = present_values(panel, f);
    if (global.empty()) {
      throw UnimputableFeature("feature '" + panel.schema().feature_ids[static_cast<std::size_t>(f)] +
                               "' is missing everywhere");
    }
    const double global_median = median(std::move(global));
    for (Index i = 0; i < panel.item_count(); ++i) {
      const auto rows = panel.rows_of_item(i);
      std::vector<double> own;
      bool any_missing = false;
      for (Index r : rows) {
        if (panel.missing()(r, f)) {
          any_missing = true;
        } else {
          own.push_back(panel.features()(r, f));
        }
      }
      if (!any_missing) continue;
      const double fill = own.empty() ? global_median : median(std::move(own));
      for (Index r : rows) {
        if (panel.missing()(r, f)) {
          features(r, f) = fill;
          missing(r, f) = false;
        }
      }
    }
  }
  return panel.with_features(std::move(features), std::move(missing));
}

// ---------------------------------------------------------------- normalization

nlohmann::json NormalizationStats::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"std", std::vector<double>(std.data(), std.data() + std.size())}};
}

NormalizationStats fit_normalization(const DemandPanel& panel, const std::vector<Index>& items) {
  const Index k = panel.schema().feature_count();
  if (panel.missing_count() > 0) throw InvalidSpec("normalize requires an imputed panel");
  NormalizationStats s{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)};
  std::vector<Index> rows;
  for (Index i : items) {
    auto r = panel.rows_of_item(i);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  std::sort(rows.begin(), rows.end());
  if (rows.empty()) throw EmptyInput("no training rows to fit normalization");
  const double m = static_cast<double>(rows.size());
  for (Index r : rows) s.mean += panel.features().row(r).transpose();
  s.mean /= m;
  for (Index r : rows) s.std.array() += (panel.features().row(r).transpose() - s.mean).array().square();
  s.std = (s.std / m).cwiseSqrt();
  return s;
}

DemandPanel apply_normalization(const DemandPanel& panel, const NormalizationStats& stats) {
  const Index k = panel.schema().feature_count();
  if (stats.mean.size() != k || stats.std.size() != k) {
    throw ShapeMismatch("normalization stats do not match the feature count");
  }
  Eigen::MatrixXd features = panel.features();
  for (Index f = 0; f < k; ++f) {
    if (stats.std[f] > 0.0) {
      features.col(f) = (features.col(f).array() - stats.mean[f]) / stats.std[f];
    } else {
      features.col(f).setZero();
    }
  }
  return panel.with_features(std::move(features), panel.missing());
}

std::pair<DemandPanel, NormalizationStats> normalize(const DemandPanel& panel,
                                                     const std::vector<Index>& train_items) {
  auto stats = fit_normalization(panel, train_items);
  return {apply_normalization(panel, stats), std::move(stats)};
}

// ---------------------------------------------------------------- folds

std::vector<FoldSplit> make_folds(const std::vector<Index>& items, std::uint64_t seed) {
  if (items.size() < static_cast<std::size_t>(kFoldCount)) {
    throw TooFewItems("need at least 5 items for 5-fold splits, have " + std::to_string(items.size()));
  }
  std::vector<Index> order = items;
  std::sort(order.begin(), order.end());
  Rng rng = substream(seed, "folds");
  shuffle(order, rng);
  std::array<std::vector<Index>, kFoldCount> chunks;
  const std::size_t n = order.size();
  for (int c = 0; c < kFoldCount; ++c) {
    const std::size_t lo = n * static_cast<std::size_t>(c) / kFoldCount;
    const std::size_t hi = n * static_cast<std::size_t>(c + 1) / kFoldCount;
    chunks[static_cast<std::size_t>(c)].assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(chunks[static_cast<std::size_t>(c)].begin(), chunks[static_cast<std::size_t>(c)].end());
  }
  std::vector<FoldSplit> folds;
  for (int k = 0; k < kFoldCount; ++k) {
    FoldSplit s;
    s.fold = k;
    s.test = chunks[static_cast<std::size_t>(k)];
    s.validation = chunks[static_cast<std::size_t>((k + 1) % kFoldCount)];
    for (int c = 0; c < kFoldCount; ++c) {
      if (c == k || c == (k + 1) % kFoldCount) continue;
      const auto& ch = chunks[static_cast<std::size_t>(c)];
      s.train.insert(s.train.end(), ch.begin(), ch.end());
    }
    std::sort(s.train.begin(), s.train.end());
    folds.push_back(std::move(s));
  }
  return folds;
}

std::vector<FoldSplit> make_folds(const DemandPanel& panel, std::uint64_t seed) {
  return make_folds(panel.sample_items(), seed);
}

// ---------------------------------------------------------------- synthetic

void SyntheticSpec::validate() const {
  if (items < 1 || bases < 1 || equipment < 1 || years < 1 || features < 1) {
    throw InvalidSpec("synthetic counts must be >= 1");
  }
  if (feature_clusters < 1 || base_clusters < 1 || equipment_clusters < 1 ||
      feature_clusters > features || base_clusters > bases || equipment_clusters > equipment) {
    throw InvalidSpec("planted cluster counts must lie in [1, axis size]");
  }
  if (!(zero_inflation >= 0.0 && zero_inflation <= 1.0)) {
    throw InvalidSpec("zero-inflation probability must lie in [0, 1]");
  }
  if (!(noise >= 0.0) || !(base_rate > 0.0)) throw InvalidSpec("noise must be >= 0 and base rate > 0");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"items", items},
          {"bases", bases},
          {"equipment", equipment},
          {"years", years},
          {"features", features},
          {"feature_clusters", feature_clusters},
          {"base_clusters", base_clusters},
          {"equipment_clusters", equipment_clusters},
          {"zero_inflation", zero_inflation},
          {"noise", noise},
          {"base_rate", base_rate},
          {"first_year", first_year},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.items = j.value("items", s.items);
  s.bases = j.value("bases", s.bases);
  s.equipment = j.value("equipment", s.equipment);
  s.years = j.value("years", s.years);
  s.features = j.value("features", s.features);
  s.feature_clusters = j.value("feature_clusters", std::min<Index>(3, s.features));
  s.base_clusters = j.value("base_clusters", std::min<Index>(2, s.bases));
  s.equipment_clusters = j.value("equipment_clusters", std::min<Index>(2, s.equipment));
  s.zero_inflation = j.value("zero_inflation", s.zero_inflation);
  s.noise = j.value("noise", s.noise);
  s.base_rate = j.value("base_rate", s.base_rate);
  s.first_year = j.value("first_year", s.first_year);
  s.seed = j.value("seed", s.seed);
  return s;
}

nlohmann::json SyntheticGroundTruth::to_json(const SyntheticSpec& spec) const {
  return {{"spec", spec.to_json()},
          {"feature_cluster", feature_cluster},
          {"base_cluster", base_cluster},
          {"equipment_cluster", equipment_cluster},
          {"cluster_coefficients", cluster_coefficients},
          {"cost_feature", cost_feature}};
}

namespace {

std::string padded(const char* prefix, Index v, int width) {
  std::string digits = std::to_string(v);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

int digits_for(Index n) { return static_cast<int>(std::to_string(std::max<Index>(n - 1, 0)).size()); }

}  // namespace

SyntheticPanel generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = substream(spec.seed, "synthetic");
  SyntheticGroundTruth truth;
  for (Index f = 0; f < spec.features; ++f) truth.feature_cluster.push_back(f % spec.feature_clusters);
  for (Index b = 0; b < spec.bases; ++b) truth.base_cluster.push_back(b % spec.base_clusters);
  for (Index e = 0; e < spec.equipment; ++e) truth.equipment_cluster.push_back(e % spec.equipment_clusters);

  const Index cf = spec.feature_clusters;
  // Cluster 0 is item-level and includes the cost feature, whose effect on
  // demand is negative; the other clusters get random effects.
  truth.cluster_coefficients.push_back(-0.4);
  for (Index c = 1; c < cf; ++c) truth.cluster_coefficients.push_back(0.6 * standard_normal(rng));

  Eigen::MatrixXd base_effect(spec.base_clusters, cf), equip_effect(spec.equipment_clusters, cf),
      year_effect(spec.years, cf), item_effect(spec.items, cf);
  for (Index i = 0; i < base_effect.size(); ++i) base_effect.data()[i] = standard_normal(rng);
  for (Index i = 0; i < equip_effect.size(); ++i) equip_effect.data()[i] = standard_normal(rng);
  for (Index i = 0; i < year_effect.size(); ++i) year_effect.data()[i] = 0.25 * standard_normal(rng);
  for (Index i = 0; i < item_effect.size(); ++i) item_effect.data()[i] = standard_normal(rng);
  Eigen::VectorXd feature_offset(spec.features);
  for (Index f = 0; f < spec.features; ++f) feature_offset[f] = 0.2 * standard_normal(rng);

  FeatureSchema schema;
  const int fw = std::max(2, digits_for(spec.features + 1));
  for (Index f = 0; f < spec.features; ++f) {
    schema.feature_ids.push_back(padded("X", f + 1, fw));
    const bool item_level = truth.feature_cluster[static_cast<std::size_t>(f)] == 0 && cf > 1;
    schema.level_flags.push_back({!item_level, !item_level, !item_level});
  }

  std::vector<DemandPanel::Row> rows;
  rows.reserve(static_cast<std::size_t>(spec.items * spec.bases * spec.equipment * spec.years));
  const int iw = digits_for(spec.items), bw = digits_for(spec.bases), ew = digits_for(spec.equipment);
  std::vector<double> latent(static_cast<std::size_t>(spec.features));
  std::vector<double> cluster_mean(static_cast<std::size_t>(cf));
  std::vector<int> cluster_size(static_cast<std::size_t>(cf), 0);
  for (Index f = 0; f < spec.features; ++f) ++cluster_size[static_cast<std::size_t>(truth.feature_cluster[static_cast<std::size_t>(f)])];

  for (Index i = 0; i < spec.items; ++i) {
    for (Index b = 0; b < spec.bases; ++b) {
      const Index bc = truth.base_cluster[static_cast<std::size_t>(b)];
      for (Index e = 0; e < spec.equipment; ++e) {
        const Index ec = truth.equipment_cluster[static_cast<std::size_t>(e)];
        for (Index y = 0; y < spec.years; ++y) {
          DemandPanel::Row row;
          row.item = padded("I", i, iw);
          row.base = padded("B", b, bw);
          row.equipment = padded("E", e, ew);
          row.year = spec.first_year + static_cast<int>(y);
          std::fill(cluster_mean.begin(), cluster_mean.end(), 0.0);
          for (Index f = 0; f < spec.features; ++f) {
            const Index c = truth.feature_cluster[static_cast<std::size_t>(f)];
            double z = item_effect(i, c) + feature_offset[f];
            const bool item_level = c == 0 && cf > 1;
            if (!item_level) {
              z += base_effect(bc, c) + equip_effect(ec, c) + year_effect(y, c) +
                   spec.noise * standard_normal(rng);
            }
            latent[static_cast<std::size_t>(f)] = z;
            cluster_mean[static_cast<std::size_t>(c)] += z / cluster_size[static_cast<std::size_t>(c)];
          }
          for (Index f = 0; f < spec.features; ++f) {
            const double z = latent[static_cast<std::size_t>(f)];
            row.features.emplace_back(f == truth.cost_feature ? 1000.0 * std::exp(z) : z);
          }
          double log_rate = std::log(spec.base_rate) + spec.noise * standard_normal(rng);
          for (Index c = 0; c < cf; ++c) {
            log_rate += truth.cluster_coefficients[static_cast<std::size_t>(c)] *
                        cluster_mean[static_cast<std::size_t>(c)];
          }
          const bool zero = uniform01(rng) < spec.zero_inflation;
          const long count = poisson(rng, std::exp(log_rate));
          row.target = zero ? 0.0 : static_cast<double>(count);
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return {DemandPanel::build(std::move(schema), rows), std::move(truth)};
}

}  // namespace voxnas
