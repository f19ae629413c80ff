#include "voxnas/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "voxnas/error.hpp"
#include "voxnas/ops.hpp"
#include "voxnas/rng.hpp"

namespace voxnas {

std::string axis_name(VoxelAxis axis) {
  switch (axis) {
    case VoxelAxis::feature: return "feature";
    case VoxelAxis::base: return "base";
    case VoxelAxis::equipment: return "equipment";
  }
  return "?";
}

VoxelAxis axis_from_name(const std::string& name) {
  for (VoxelAxis a : kVoxelAxes) {
    if (axis_name(a) == name) return a;
  }
  throw ConfigError("unknown axis '" + name + "'");
}

std::string mode_name(MappingMode mode) { return mode == MappingMode::joint ? "joint" : "factorized"; }

MappingMode mode_from_name(const std::string& name) {
  if (name == "joint") return MappingMode::joint;
  if (name == "factorized") return MappingMode::factorized;
  throw ConfigError("unknown mapping mode '" + name + "'");
}

// ---------------------------------------------------------------- clustering

std::vector<std::vector<Index>> LevelClustering::members() const {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(cluster_count));
  for (Index m = 0; m < member_count(); ++m) out[static_cast<std::size_t>(assignment[static_cast<std::size_t>(m)])].push_back(m);
  return out;
}

nlohmann::json LevelClustering::to_json() const {
  return {{"axis", axis_name(axis)}, {"cluster_count", cluster_count}, {"assignment", assignment}};
}

LevelClustering LevelClustering::from_json(const nlohmann::json& j) {
  LevelClustering c;
  c.axis = axis_from_name(j.at("axis").get<std::string>());
  c.assignment = j.at("assignment").get<std::vector<Index>>();
  c.cluster_count = j.at("cluster_count").get<Index>();
  for (Index a : c.assignment) {
    if (a < 0 || a >= c.cluster_count) throw ConfigError("cluster assignment out of range");
  }
  return c;
}

namespace {

// Relabels clusters by order of first appearance (cluster of member 0 is 0).
Index canonical_labels(std::vector<Index>& labels) {
  std::vector<Index> seen(labels.size() + 1, -1);
  Index next = 0;
  for (auto& l : labels) {
    auto& slot = seen[static_cast<std::size_t>(l)];
    if (slot < 0) slot = next++;
    l = slot;
  }
  return next;
}

double sq_dist(const Eigen::MatrixXd& pts, Index i, const Eigen::RowVectorXd& c) {
  return (pts.row(i) - c).squaredNorm();
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, Index k, std::uint64_t seed, int restarts,
                    int max_iterations) {
  const Index n = points.rows();
  if (n == 0) throw EmptyAxis("k-means on zero points");
  k = std::clamp<Index>(k, 1, n);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int run = 0; run < std::max(restarts, 1); ++run) {
    Rng rng = substream(seed, "kmeans", static_cast<std::uint64_t>(run));
    // k-means++ seeding
    Eigen::MatrixXd centers(k, points.cols());
    centers.row(0) = points.row(static_cast<Index>(uniform01(rng) * static_cast<double>(n)));
    Eigen::VectorXd d2(n);
    for (Index i = 0; i < n; ++i) d2[i] = sq_dist(points, i, centers.row(0));
    for (Index c = 1; c < k; ++c) {
      const double total = d2.sum();
      Index pick = 0;
      if (total > 0.0) {
        double r = uniform01(rng) * total;
        for (pick = 0; pick < n - 1; ++pick) {
          r -= d2[pick];
          if (r < 0.0) break;
        }
      } else {
        pick = static_cast<Index>(uniform01(rng) * static_cast<double>(n));
      }
      centers.row(c) = points.row(pick);
      for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points, i, centers.row(c)));
    }

    std::vector<Index> labels(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iterations; ++it) {
      bool changed = false;
      for (Index i = 0; i < n; ++i) {
        Index arg = 0;
        double bd = sq_dist(points, i, centers.row(0));
        for (Index c = 1; c < k; ++c) {
          const double d = sq_dist(points, i, centers.row(c));
          if (d < bd) {
            bd = d;
            arg = c;
          }
        }
        if (labels[static_cast<std::size_t>(i)] != arg) {
          labels[static_cast<std::size_t>(i)] = arg;
          changed = true;
        }
      }
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
      for (Index i = 0; i < n; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
        counts[labels[static_cast<std::size_t>(i)]] += 1.0;
      }
      for (Index c = 0; c < k; ++c) {
        if (counts[c] > 0) {
          centers.row(c) = sums.row(c) / counts[c];
          continue;
        }
        // Empty cluster: move its center to the point farthest from its own.
        Index far = 0;
        double fd = -1.0;
        for (Index i = 0; i < n; ++i) {
          const double d = sq_dist(points, i, centers.row(labels[static_cast<std::size_t>(i)]));
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        centers.row(c) = points.row(far);
        labels[static_cast<std::size_t>(far)] = c;
        changed = true;
      }
      if (!changed) break;
    }
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i) inertia += sq_dist(points, i, centers.row(labels[static_cast<std::size_t>(i)]));
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = labels;
    }
  }
  canonical_labels(best.labels);
  return best;
}

double silhouette_score(const Eigen::MatrixXd& points, const std::vector<Index>& labels) {
  const Index n = points.rows();
  if (n == 0) return 0.0;
  const Index k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<Index> size(static_cast<std::size_t>(k), 0);
  for (Index l : labels) ++size[static_cast<std::size_t>(l)];
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index own = labels[static_cast<std::size_t>(i)];
    if (size[static_cast<std::size_t>(own)] <= 1) continue;
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    for (Index j = 0; j < n; ++j) {
      if (j != i) sum[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += (points.row(i) - points.row(j)).norm();
    }
    const double a = sum[static_cast<std::size_t>(own)] / static_cast<double>(size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < k; ++c) {
      if (c != own && size[static_cast<std::size_t>(c)] > 0) b = std::min(b, sum[static_cast<std::size_t>(c)] / static_cast<double>(size[static_cast<std::size_t>(c)]));
    }
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

LevelClustering cluster_profiles(VoxelAxis axis, const Eigen::MatrixXd& profiles,
                                 Index max_clusters, std::uint64_t seed) {
  const Index n = profiles.rows();
  if (n == 0) throw EmptyAxis("axis '" + axis_name(axis) + "' has no members");
  if (max_clusters < 1) throw ConfigError("max_clusters must be >= 1");
  LevelClustering out;
  out.axis = axis;
  const Index hi = std::min(max_clusters, n);
  if (hi <= 1) {
    out.assignment.assign(static_cast<std::size_t>(n), 0);
    out.cluster_count = 1;
    return out;
  }
  double best_score = -std::numeric_limits<double>::infinity();
  for (Index k = 2; k <= hi; ++k) {
    auto km = kmeans(profiles, k, seed);
    const double s = silhouette_score(profiles, km.labels);
    if (s > best_score) {
      best_score = s;
      out.assignment = km.labels;
    }
  }
  out.cluster_count = *std::max_element(out.assignment.begin(), out.assignment.end()) + 1;
  return out;
}

Eigen::MatrixXd level_profiles(const DemandPanel& panel, VoxelAxis axis,
                               const std::vector<Index>& items) {
  std::vector<Index> use = items;
  if (use.empty()) {
    use.resize(static_cast<std::size_t>(panel.item_count()));
    std::iota(use.begin(), use.end(), Index{0});
  }
  const Index k = panel.schema().feature_count(), nb = panel.base_count(), ne = panel.equipment_count();
  Eigen::MatrixXd sums, counts;
  switch (axis) {
    case VoxelAxis::feature:
      sums = counts = Eigen::MatrixXd::Zero(k, nb * ne);
      break;
    case VoxelAxis::base:
      sums = counts = Eigen::MatrixXd::Zero(nb, k);
      break;
    case VoxelAxis::equipment:
      sums = counts = Eigen::MatrixXd::Zero(ne, k);
      break;
  }
  if (sums.rows() == 0) throw EmptyAxis("axis '" + axis_name(axis) + "' has no members");
  for (Index item : use) {
    for (Index r : panel.rows_of_item(item)) {
      const auto& key = panel.keys()[static_cast<std::size_t>(r)];
      for (Index f = 0; f < k; ++f) {
        if (panel.missing()(r, f)) continue;
        const double v = panel.features()(r, f);
        Index row = 0, col = 0;
        switch (axis) {
          case VoxelAxis::feature: row = f; col = key.base * ne + key.equipment; break;
          case VoxelAxis::base: row = key.base; col = f; break;
          case VoxelAxis::equipment: row = key.equipment; col = f; break;
        }
        sums(row, col) += v;
        counts(row, col) += 1.0;
      }
    }
  }
  return (counts.array() > 0.0).select(sums.array() / counts.array().max(1.0), 0.0).matrix();
}

LevelClustering cluster_levels(const DemandPanel& panel, VoxelAxis axis, Index max_clusters,
                               std::uint64_t seed, const std::vector<Index>& items) {
  return cluster_profiles(axis, level_profiles(panel, axis, items), max_clusters, seed);
}

// ---------------------------------------------------------------- candidates

namespace {

Index factorial(Index n) {
  Index f = 1;
  for (Index i = 2; i <= n; ++i) f *= i;
  return f;
}

std::vector<std::vector<Index>> all_orders(Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::vector<std::vector<Index>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

}  // namespace

CandidateMappingSpace::CandidateMappingSpace(std::array<LevelClustering, 3> clusterings, MappingMode mode)
    : clusterings_(std::move(clusterings)), mode_(mode) {
  for (VoxelAxis a : kVoxelAxes) {
    const auto& c = clusterings_[static_cast<std::size_t>(a)];
    if (c.member_count() < 1) throw EmptyAxis("axis '" + axis_name(a) + "' has no members");
    if (c.axis != a) throw ConfigError("clustering for axis '" + axis_name(c.axis) + "' given as '" + axis_name(a) + "'");
    if (c.cluster_count < 1 || c.cluster_count > kMaxClustersPerAxis) {
      throw SpaceTooLarge("axis '" + axis_name(a) + "' has " + std::to_string(c.cluster_count) +
                          " clusters; at most " + std::to_string(kMaxClustersPerAxis) + " are searchable");
    }
    orders_[static_cast<std::size_t>(a)] = all_orders(c.cluster_count);
  }
}

Index CandidateMappingSpace::joint_size() const {
  Index s = 1;
  for (const auto& o : orders_) s *= static_cast<Index>(o.size());
  return s;
}

Index CandidateMappingSpace::parameter_count() const {
  if (mode_ == MappingMode::joint) return joint_size();
  Index s = 0;
  for (const auto& o : orders_) s += static_cast<Index>(o.size());
  return s;
}

std::array<Index, 3> CandidateMappingSpace::decode_joint(Index candidate) const {
  const Index nb = static_cast<Index>(orders_[1].size()), ne = static_cast<Index>(orders_[2].size());
  if (candidate < 0 || candidate >= joint_size()) throw ShapeMismatch("joint candidate out of range");
  return {candidate / (nb * ne), (candidate / ne) % nb, candidate % ne};
}

std::vector<Index> CandidateMappingSpace::member_permutation(VoxelAxis a, const std::vector<Index>& order) const {
  const auto& c = clustering(a);
  if (static_cast<Index>(order.size()) != c.cluster_count) {
    throw ShapeMismatch("cluster order for axis '" + axis_name(a) + "' has the wrong length");
  }
  const auto members = c.members();
  std::vector<Index> perm;
  perm.reserve(static_cast<std::size_t>(c.member_count()));
  for (Index cluster : order) {
    const auto& m = members.at(static_cast<std::size_t>(cluster));
    perm.insert(perm.end(), m.begin(), m.end());
  }
  if (static_cast<Index>(perm.size()) != c.member_count()) {
    throw ShapeMismatch("cluster order for axis '" + axis_name(a) + "' is not a permutation");
  }
  return perm;
}

std::vector<Index> CandidateMappingSpace::member_permutation(VoxelAxis a, Index order_index) const {
  return member_permutation(a, orders(a).at(static_cast<std::size_t>(order_index)));
}

CandidateMappingSpace enumerate_candidates(std::array<LevelClustering, 3> clusterings, MappingMode mode,
                                           Index joint_cap) {
  if (mode == MappingMode::joint) {
    Index size = 1;
    for (const auto& c : clusterings) size *= factorial(std::min(c.cluster_count, kMaxClustersPerAxis + 1));
    if (size > joint_cap) {
      throw SpaceTooLarge("joint candidate space has " + std::to_string(size) + " mappings, cap is " +
                          std::to_string(joint_cap));
    }
  }
  return CandidateMappingSpace(std::move(clusterings), mode);
}

// ---------------------------------------------------------------- voxels

VoxelImage raw_voxel(const DemandPanel& panel, Index item) {
  const Index ny = panel.year_count(), nf = panel.schema().feature_count(), nb = panel.base_count(),
              ne = panel.equipment_count();
  VoxelImage v({ny, nf, nb, ne});
  for (Index b = 0; b < nb; ++b) {
    for (Index e = 0; e < ne; ++e) {
      for (Index y = 0; y < ny; ++y) {
        const Index r = panel.row_of(item, b, e, y);
        if (r < 0) {
          throw IncompleteGrid("item '" + panel.items()[static_cast<std::size_t>(item)] + "' lacks (" +
                               panel.bases()[static_cast<std::size_t>(b)] + ", " +
                               panel.equipment()[static_cast<std::size_t>(e)] + ", " +
                               std::to_string(panel.years()[static_cast<std::size_t>(y)]) + ")");
        }
        for (Index f = 0; f < nf; ++f) v(y, f, b, e) = panel.features()(r, f);
      }
    }
  }
  if (!v.all_finite()) throw IncompleteGrid("non-finite feature value in voxel");
  return v;
}

VoxelImage permute_voxel(const VoxelImage& raw, const std::array<std::vector<Index>, 3>& perms) {
  if (raw.rank() != 4) throw ShapeMismatch("voxel must be rank 4, got " + shape_string(raw.shape()));
  for (std::size_t a = 0; a < 3; ++a) {
    if (static_cast<Index>(perms[a].size()) != raw.dim(a + 1)) throw ShapeMismatch("permutation length mismatch");
  }
  VoxelImage out(raw.shape());
  const Index ny = raw.dim(0), nf = raw.dim(1), nb = raw.dim(2), ne = raw.dim(3);
  for (Index y = 0; y < ny; ++y)
    for (Index f = 0; f < nf; ++f)
      for (Index b = 0; b < nb; ++b)
        for (Index e = 0; e < ne; ++e)
          out(y, f, b, e) = raw(y, perms[0][static_cast<std::size_t>(f)], perms[1][static_cast<std::size_t>(b)],
                                perms[2][static_cast<std::size_t>(e)]);
  return out;
}

VoxelImage voxelize(const VoxelImage& raw, const CandidateMappingSpace& space, const ClusterOrders& orders) {
  std::array<std::vector<Index>, 3> perms;
  for (VoxelAxis a : kVoxelAxes) {
    perms[static_cast<std::size_t>(a)] = space.member_permutation(a, orders[static_cast<std::size_t>(a)]);
  }
  return permute_voxel(raw, perms);
}

VoxelImage voxelize(const DemandPanel& panel, Index item, const CandidateMappingSpace& space,
                    const ClusterOrders& orders) {
  return voxelize(raw_voxel(panel, item), space, orders);
}

// ---------------------------------------------------------------- mixture

EmbeddingParams EmbeddingParams::zeros(const CandidateMappingSpace& space) {
  EmbeddingParams p;
  p.mode = space.mode();
  if (space.mode() == MappingMode::joint) {
    p.logits.push_back(Eigen::VectorXd::Zero(space.joint_size()));
  } else {
    for (VoxelAxis a : kVoxelAxes) p.logits.push_back(Eigen::VectorXd::Zero(space.axis_size(a)));
  }
  return p;
}

void EmbeddingParams::validate(const CandidateMappingSpace& space) const {
  const auto expected = zeros(space);
  bool ok = mode == space.mode() && logits.size() == expected.logits.size();
  for (std::size_t i = 0; ok && i < logits.size(); ++i) {
    ok = logits[i].size() == expected.logits[i].size() && logits[i].allFinite();
  }
  if (!ok) throw ShapeMismatch("embedding parameters do not match the candidate space");
}

namespace {

// Joint mixture: sum over all order triples, gathered lazily per candidate.
ag::Var joint_mixture(const ag::Var& raw, const CandidateMappingSpace& space, const ag::Var& weights) {
  const Tensor& x = raw->value;
  const Index n = x.dim(0), ny = x.dim(1), nf = x.dim(2), nb = x.dim(3), ne = x.dim(4);
  std::array<std::vector<std::vector<Index>>, 3> perms;
  for (VoxelAxis a : kVoxelAxes) {
    for (Index o = 0; o < space.axis_size(a); ++o) perms[static_cast<std::size_t>(a)].push_back(space.member_permutation(a, o));
  }
  const Index size = space.joint_size();
  // Visits out-index / in-index pairs for candidate c.
  auto gather = [=](Index c, auto&& f) {
    const auto t = space.decode_joint(c);
    const auto& pf = perms[0][static_cast<std::size_t>(t[0])];
    const auto& pb = perms[1][static_cast<std::size_t>(t[1])];
    const auto& pe = perms[2][static_cast<std::size_t>(t[2])];
    for (Index s = 0; s < n * ny; ++s)
      for (Index i = 0; i < nf; ++i)
        for (Index j = 0; j < nb; ++j)
          for (Index k = 0; k < ne; ++k)
            f(((s * nf + i) * nb + j) * ne + k,
              ((s * nf + pf[static_cast<std::size_t>(i)]) * nb + pb[static_cast<std::size_t>(j)]) * ne +
                  pe[static_cast<std::size_t>(k)]);
  };
  Tensor out(x.shape());
  for (Index c = 0; c < size; ++c) {
    const double w = weights->value[c];
    gather(c, [&](Index o, Index i) { out[o] += w * x[i]; });
  }
  return ag::make_node(std::move(out), {raw, weights}, [raw, weights, size, gather](ag::Node& self) {
    if (!weights->requires_grad) return;
    auto& gw = weights->grad_buffer();
    for (Index c = 0; c < size; ++c) {
      double s = 0.0;
      gather(c, [&](Index o, Index i) { s += self.grad[o] * raw->value[i]; });
      gw[c] += s;
    }
  });
}

}  // namespace

ag::Var mixed_embed(const ag::Var& raw, const CandidateMappingSpace& space, const std::vector<ag::Var>& logits) {
  const Tensor& x = raw->value;
  if (x.rank() != 5) throw ShapeMismatch("mixed_embed expects (N, years, features, bases, equipment)");
  for (VoxelAxis a : kVoxelAxes) {
    if (x.dim(static_cast<std::size_t>(a) + 2) != space.clustering(a).member_count()) {
      throw ShapeMismatch("voxel extent along '" + axis_name(a) + "' does not match its clustering");
    }
  }
  if (space.mode() == MappingMode::joint) {
    if (logits.size() != 1 || logits[0]->value.size() != space.joint_size()) {
      throw ShapeMismatch("joint mixture needs one logit vector of size " + std::to_string(space.joint_size()));
    }
    return joint_mixture(raw, space, ag::softmax(logits[0]));
  }
  if (logits.size() != 3) throw ShapeMismatch("factorized mixture needs three logit vectors");
  ag::Var out = raw;
  for (VoxelAxis a : kVoxelAxes) {
    const auto ai = static_cast<std::size_t>(a);
    if (logits[ai]->value.size() != space.axis_size(a)) {
      throw ShapeMismatch("logit vector for '" + axis_name(a) + "' has the wrong length");
    }
    std::vector<std::vector<Index>> perms;
    for (Index o = 0; o < space.axis_size(a); ++o) perms.push_back(space.member_permutation(a, o));
    out = ag::axis_mix(out, ag::permutation_mixture(ag::softmax(logits[ai]), perms), ai + 2);
  }
  return out;
}

VoxelImage mixed_embed(const VoxelImage& raw, const CandidateMappingSpace& space, const EmbeddingParams& params) {
  params.validate(space);
  ag::NoGradGuard guard;
  Shape batched{1};
  batched.insert(batched.end(), raw.shape().begin(), raw.shape().end());
  std::vector<ag::Var> logits;
  for (const auto& l : params.logits) logits.push_back(ag::constant(Tensor({l.size()}, l.array())));
  auto out = mixed_embed(ag::constant(raw.reshaped(batched)), space, logits);
  return out->value.reshaped(raw.shape());
}

Index argmax_lowest(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw EmptyInput("argmax of an empty vector");
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

ClusterOrders derive_embedding(const CandidateMappingSpace& space, const EmbeddingParams& params) {
  params.validate(space);
  ClusterOrders out;
  if (params.mode == MappingMode::joint) {
    const auto t = space.decode_joint(argmax_lowest(params.logits[0]));
    for (VoxelAxis a : kVoxelAxes) {
      const auto ai = static_cast<std::size_t>(a);
      out[ai] = space.orders(a)[static_cast<std::size_t>(t[ai])];
    }
  } else {
    for (VoxelAxis a : kVoxelAxes) {
      const auto ai = static_cast<std::size_t>(a);
      out[ai] = space.orders(a)[static_cast<std::size_t>(argmax_lowest(params.logits[ai]))];
    }
  }
  return out;
}

nlohmann::json EmbeddingGenotype::to_json() const {
  nlohmann::json j;
  for (VoxelAxis a : kVoxelAxes) {
    const auto ai = static_cast<std::size_t>(a);
    j["clusterings"].push_back(clusterings[ai].to_json());
    j["orders"][axis_name(a)] = orders[ai];
  }
  return j;
}

EmbeddingGenotype EmbeddingGenotype::from_json(const nlohmann::json& j) {
  EmbeddingGenotype g;
  const auto& cs = j.at("clusterings");
  if (cs.size() != 3) throw ConfigError("embedding genotype needs three clusterings");
  for (const auto& c : cs) {
    auto lc = LevelClustering::from_json(c);
    g.clusterings[static_cast<std::size_t>(lc.axis)] = std::move(lc);
  }
  for (VoxelAxis a : kVoxelAxes) {
    g.orders[static_cast<std::size_t>(a)] = j.at("orders").at(axis_name(a)).get<std::vector<Index>>();
  }
  return g;
}

}  // namespace voxnas
