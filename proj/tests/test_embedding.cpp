#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "voxnas/embedding.hpp"
#include "voxnas/error.hpp"
#include "voxnas/ops.hpp"

using namespace voxnas;

namespace {

LevelClustering clustering(VoxelAxis axis, std::vector<Index> assignment) {
  LevelClustering c;
  c.axis = axis;
  c.cluster_count = *std::max_element(assignment.begin(), assignment.end()) + 1;
  c.assignment = std::move(assignment);
  return c;
}

std::vector<Index> singletons(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

CandidateMappingSpace space_of(std::vector<Index> f, std::vector<Index> b, std::vector<Index> e, MappingMode mode) {
  return enumerate_candidates({clustering(VoxelAxis::feature, std::move(f)), clustering(VoxelAxis::base, std::move(b)),
                               clustering(VoxelAxis::equipment, std::move(e))},
                              mode);
}

VoxelImage random_voxel(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  VoxelImage v(shape);
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return v;
}

double max_abs(const Tensor& a, const Tensor& b) { return (a.array() - b.array()).abs().maxCoeff(); }

}  // namespace

TEST_CASE("two-means on four points") {
  Eigen::MatrixXd p(4, 1);
  p << 0, 0.1, 5, 5.1;
  const auto c = cluster_profiles(VoxelAxis::feature, p, 2, 1);
  CHECK(c.cluster_count == 2);
  CHECK(c.assignment == std::vector<Index>{0, 0, 1, 1});
  const auto one = cluster_profiles(VoxelAxis::feature, p, 1, 1);
  CHECK(one.cluster_count == 1);
  CHECK(one.assignment == std::vector<Index>{0, 0, 0, 0});
}

TEST_CASE("silhouette picks the planted blob count") {
  Eigen::MatrixXd p(6, 2);
  p << 0, 0, 0.2, 0.1, 0.1, 0.2, 9, 9, 9.1, 9.2, 9.2, 9.0;
  const auto c = cluster_profiles(VoxelAxis::base, p, 4, 5);
  CHECK(c.cluster_count == 2);
  CHECK(c.assignment == std::vector<Index>{0, 0, 0, 1, 1, 1});
  // hand silhouette for the planted split is close to 1
  CHECK(silhouette_score(p, c.assignment) > 0.95);
  CHECK_THROWS_AS(cluster_profiles(VoxelAxis::base, Eigen::MatrixXd(0, 2), 2, 1), EmptyAxis);
}

TEST_CASE("candidate space sizes") {
  const auto joint = space_of(singletons(5), singletons(3), singletons(2), MappingMode::joint);
  CHECK(joint.joint_size() == 1440);
  CHECK(joint.joint_size() == oracle::factorial(5) * oracle::factorial(3) * oracle::factorial(2));
  const auto fact = space_of(singletons(5), singletons(3), singletons(2), MappingMode::factorized);
  CHECK(fact.axis_size(VoxelAxis::feature) == 120);
  CHECK(fact.axis_size(VoxelAxis::base) == 6);
  CHECK(fact.axis_size(VoxelAxis::equipment) == 2);
  CHECK(fact.parameter_count() == 128);
  const auto unit = space_of({0, 0}, {0}, {0, 0, 0}, MappingMode::joint);
  CHECK(unit.joint_size() == 1);
  CHECK(unit.member_permutation(VoxelAxis::equipment, 0) == std::vector<Index>{0, 1, 2});
  CHECK_THROWS_AS(space_of(singletons(7), singletons(1), singletons(1), MappingMode::joint), SpaceTooLarge);
}

TEST_CASE("voxelize a single cell") {
  FeatureSchema schema;
  schema.feature_ids = {"x", "y"};
  const auto panel = DemandPanel::build(schema, {{"a", "b", "e", 2010, {1.5, -2.0}, 1.0}});
  const auto space = space_of({0, 0}, {0}, {0}, MappingMode::factorized);
  const auto v = voxelize(panel, 0, space, {std::vector<Index>{0}, {0}, {0}});
  CHECK(v.shape() == Shape{1, 2, 1, 1});
  CHECK(v(0, 0, 0, 0) == 1.5);
  CHECK(v(0, 1, 0, 0) == -2.0);
}

TEST_CASE("incomplete grid") {
  FeatureSchema schema;
  schema.feature_ids = {"x"};
  const auto panel = DemandPanel::build(
      schema, {{"a", "b1", "e", 2010, {1.0}, 1.0}, {"a", "b2", "e", 2010, {1.0}, 1.0}, {"c", "b1", "e", 2010, {1.0}, 1.0}});
  CHECK_THROWS_AS(raw_voxel(panel, 1), IncompleteGrid);
}

TEST_CASE("swapping feature blocks swaps index blocks") {
  // features {0,1} | {2} | {3,4}, bases {0} | {1,2}
  const auto space = space_of({0, 0, 1, 2, 2}, {0, 1, 1}, {0, 0}, MappingMode::factorized);
  const auto raw = random_voxel({2, 5, 3, 2}, 4);
  const auto base = voxelize(raw, space, {std::vector<Index>{0, 1, 2}, {0, 1}, {0}});
  CHECK(base == raw);
  const auto swapped = voxelize(raw, space, {std::vector<Index>{2, 1, 0}, {1, 0}, {0}});
  // explicit position maps: feature positions 0..4 now hold members 3,4,2,0,1
  const Index fmap[5] = {3, 4, 2, 0, 1};
  const Index bmap[3] = {1, 2, 0};
  for (Index y = 0; y < 2; ++y)
    for (Index f = 0; f < 5; ++f)
      for (Index b = 0; b < 3; ++b)
        for (Index e = 0; e < 2; ++e) CHECK(swapped(y, f, b, e) == base(y, fmap[f], bmap[b], e));
}

TEST_CASE("voxelize is a bijection on cells") {
  const auto space = space_of({0, 1, 1, 2}, {0, 1, 0}, {1, 0}, MappingMode::factorized);
  const auto raw = random_voxel({3, 4, 3, 2}, 9);
  const auto v = voxelize(raw, space, {std::vector<Index>{1, 2, 0}, {1, 0}, {1, 0}});
  std::vector<double> a(raw.data(), raw.data() + raw.size()), b(v.data(), v.data() + v.size());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("joint mixture of two candidates") {
  const auto space = space_of({0, 1}, {0}, {0}, MappingMode::joint);
  const auto raw = random_voxel({1, 2, 1, 1}, 2);
  EmbeddingParams p;
  p.mode = MappingMode::joint;
  p.logits = {Eigen::Vector2d(std::log(3.0), 0.0)};
  const auto out = mixed_embed(raw, space, p);
  const auto o1 = voxelize(raw, space, {std::vector<Index>{0, 1}, {0}, {0}});
  const auto o2 = voxelize(raw, space, {std::vector<Index>{1, 0}, {0}, {0}});
  for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.75 * o1[i] + 0.25 * o2[i]).epsilon(1e-12));

  p.logits = {Eigen::Vector2d(20.0, 0.0)};
  CHECK(max_abs(mixed_embed(raw, space, p), o1) < 1e-6);
}

TEST_CASE("equal weights over identical images") {
  // constant along features: every order gives the same image
  const auto space = space_of({0, 1, 2}, {0}, {0}, MappingMode::joint);
  VoxelImage raw({1, 3, 1, 1}, 2.5);
  auto p = EmbeddingParams::zeros(space);
  const auto out = mixed_embed(raw, space, p);
  CHECK(max_abs(out, raw) < 1e-12);
}

TEST_CASE("softmax weights form a distribution") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto v = oracle::random_vector(rng, 1 + static_cast<std::size_t>(t % 13), -30, 30);
    Eigen::ArrayXd a = Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Index>(v.size()));
    const auto s = ag::softmax(ag::constant(Tensor({a.size()}, a)));
    CHECK((s->value.array() > 0).all());
    CHECK(std::abs(s->value.array().sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("mixture output stays in the convex hull and ignores shifts") {
  for (auto mode : {MappingMode::joint, MappingMode::factorized}) {
    const auto space = space_of({0, 1, 2, 2}, {0, 1, 2}, {0, 1}, mode);
    const auto raw = random_voxel({2, 4, 3, 2}, 7);
    std::mt19937_64 rng(8);
    auto p = EmbeddingParams::zeros(space);
    for (auto& l : p.logits) {
      const auto v = oracle::random_vector(rng, static_cast<std::size_t>(l.size()), -2, 2);
      l = Eigen::Map<const Eigen::VectorXd>(v.data(), l.size());
    }
    const auto out = mixed_embed(raw, space, p);
    auto shifted = p;
    for (auto& l : shifted.logits) l.array() += 7.0;
    CHECK(max_abs(mixed_embed(raw, space, shifted), out) < 1e-9);
    CHECK(derive_embedding(space, shifted) == derive_embedding(space, p));

    Tensor lo(raw.shape(), std::numeric_limits<double>::infinity()), hi(raw.shape(), -lo[0]);
    for (const auto& fo : space.orders(VoxelAxis::feature))
      for (const auto& bo : space.orders(VoxelAxis::base))
        for (const auto& eo : space.orders(VoxelAxis::equipment)) {
          const auto v = voxelize(raw, space, {fo, bo, eo});
          lo.array() = lo.array().min(v.array());
          hi.array() = hi.array().max(v.array());
        }
    CHECK(((out.array() >= lo.array() - 1e-12) && (out.array() <= hi.array() + 1e-12)).all());
  }
}

TEST_CASE("one-hot factorized mixture equals voxelize") {
  const auto space = space_of({0, 1, 2, 2, 1}, {0, 1, 2}, {0, 1}, MappingMode::factorized);
  const auto raw = random_voxel({2, 5, 3, 2}, 12);
  auto p = EmbeddingParams::zeros(space);
  const std::array<Index, 3> pick{4, 3, 1};
  for (std::size_t a = 0; a < 3; ++a) {
    p.logits[a].setConstant(-1e4);
    p.logits[a][pick[a]] = 0.0;
  }
  const auto out = mixed_embed(raw, space, p);
  ClusterOrders orders;
  for (VoxelAxis a : kVoxelAxes) {
    const auto ai = static_cast<std::size_t>(a);
    orders[ai] = space.orders(a)[static_cast<std::size_t>(pick[ai])];
  }
  CHECK(out == voxelize(raw, space, orders));
  CHECK(derive_embedding(space, p) == orders);
}

TEST_CASE("derive embedding argmax and ties") {
  CHECK(argmax_lowest(Eigen::Vector3d(0.1, 2.3, -1.0)) == 1);
  CHECK(argmax_lowest(Eigen::Vector3d(1.0, 0.5, 1.0)) == 0);
  const auto space = space_of({0, 1, 2}, {0}, {0}, MappingMode::joint);
  auto p = EmbeddingParams::zeros(space);
  CHECK(derive_embedding(space, p)[0] == std::vector<Index>{0, 1, 2});
  p.logits[0][3] = 1.0;
  CHECK(derive_embedding(space, p)[0] == space.orders(VoxelAxis::feature)[3]);
}

TEST_CASE("mixture rejects the wrong parameter length") {
  const auto space = space_of({0, 1}, {0}, {0}, MappingMode::joint);
  EmbeddingParams p;
  p.mode = MappingMode::joint;
  p.logits = {Eigen::Vector3d::Zero()};
  CHECK_THROWS_AS(mixed_embed(VoxelImage({1, 2, 1, 1}), space, p), ShapeMismatch);
}

TEST_CASE("embedding genotype json round trip") {
  EmbeddingGenotype g;
  g.clusterings = {clustering(VoxelAxis::feature, {0, 1, 0}), clustering(VoxelAxis::base, {0, 0}),
                   clustering(VoxelAxis::equipment, {0, 1})};
  g.orders = {std::vector<Index>{1, 0}, {0}, {1, 0}};
  const auto back = EmbeddingGenotype::from_json(g.to_json());
  CHECK(back.orders == g.orders);
  CHECK(back.clusterings[0].assignment == g.clusterings[0].assignment);
}
