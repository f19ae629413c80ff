#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "voxnas/error.hpp"
#include "voxnas/ops.hpp"
#include "voxnas/supernet.hpp"

using namespace voxnas;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

ag::Var weights_of(const std::vector<double>& logits) {
  Eigen::ArrayXd a = Eigen::Map<const Eigen::ArrayXd>(logits.data(), static_cast<Index>(logits.size()));
  return ag::softmax(ag::constant(Tensor({a.size()}, a)));
}

double max_abs(const Tensor& a, const Tensor& b) { return (a.array() - b.array()).abs().maxCoeff(); }

}  // namespace

TEST_CASE("op enumeration is the deduplicated list") {
  CHECK(all_op_kinds().size() == 11);
  for (OpKind k : all_op_kinds()) CHECK(op_from_name(op_name(k)) == k);
}

TEST_CASE("every primitive keeps or halves the spatial shape") {
  for (const Shape& shape : {Shape{2, 3, 5, 4, 3}, Shape{1, 3, 1, 2, 7}}) {
    const auto x = ag::constant(random_tensor(shape, 1));
    for (OpKind k : all_op_kinds()) {
      for (Index stride : {1, 2}) {
        CAPTURE(op_name(k));
        CAPTURE(stride);
        Rng rng(3);
        Primitive p(k, shape[1], stride, rng);
        const auto y = p.forward_dense(x, true);
        CHECK(y->value.shape() == stride_output_shape(shape, stride));
        CHECK(y->value.all_finite());
      }
    }
  }
  Rng rng(0);
  CHECK_THROWS_AS(Primitive(OpKind::conv_1x1x1, 2, 3, rng), UnsupportedStride);
}

TEST_CASE("stride two halves with ceiling") {
  CHECK(stride_output_shape({2, 4, 5, 3, 1}, 2) == Shape{2, 4, 3, 2, 1});
}

TEST_CASE("skip, none and average pooling") {
  const auto x = ag::constant(random_tensor({2, 3, 4, 3, 2}, 5));
  Rng rng(1);
  Primitive skip(OpKind::skip_connect, 3, 1, rng);
  CHECK(skip.forward_dense(x, true)->value == x->value);
  Primitive none(OpKind::none, 3, 2, rng);
  const auto z = none.forward_dense(x, true);
  CHECK(z->value.shape() == Shape{2, 3, 2, 2, 1});
  CHECK(z->value.array().abs().maxCoeff() == 0.0);

  const auto c = ag::constant(Tensor({1, 2, 3, 3, 3}, 1.75));
  Primitive avg(OpKind::avg_pool_3x3x3, 2, 1, rng);
  CHECK(max_abs(avg.forward_dense(c, true)->value, c->value) < 1e-15);
}

TEST_CASE("mixed op over skip and none halves the input") {
  const auto x = ag::constant(random_tensor({2, 3, 4, 3, 2}, 6));
  Rng rng(2);
  MixedOp m({OpKind::skip_connect, OpKind::none}, 3, 1, rng);
  const auto y = m.forward(x, weights_of({0.0, 0.0}), true);
  CHECK(max_abs(y->value, Tensor(x->value.shape(), 0.5 * x->value.array())) < 1e-15);
}

TEST_CASE("mixed op with a dominant skip is the identity") {
  const auto x = ag::constant(random_tensor({2, 3, 4, 3, 2}, 7));
  Rng rng(2);
  MixedOp m(all_op_kinds(), 3, 1, rng);
  std::vector<double> logits(11, 0.0);
  logits[static_cast<std::size_t>(OpKind::skip_connect)] = 20.0;
  const auto y = m.forward(x, weights_of(logits), true);
  CHECK(max_abs(y->value, x->value) < 1e-6);
  MixedOp r(all_op_kinds(), 3, 2, rng);
  CHECK(r.forward(x, weights_of(logits), true)->value.shape() == Shape{2, 3, 2, 2, 1});
}

TEST_CASE("one-node cell with skip edges doubles the input") {
  SupernetConfig cfg;
  cfg.nodes = 1;
  cfg.ops = {OpKind::skip_connect, OpKind::none};
  Rng rng(4);
  Cell cell(cfg, {3, 3, 3, false, false}, rng);
  const auto x = ag::constant(random_tensor({2, 3, 4, 3, 2}, 8));
  const auto w = ag::constant(Tensor({2}, Eigen::Array2d(1.0, 0.0)));
  const auto y = cell.forward_dag(x, x, {w, w}, true);
  CHECK(y->value == Tensor(x->value.shape(), 2.0 * x->value.array()));
}

TEST_CASE("cell output channels and reduction") {
  SupernetConfig cfg;
  cfg.nodes = 3;
  Rng rng(4);
  Cell normal(cfg, {4, 4, 4, false, false}, rng);
  Cell reduce(cfg, {4, 4, 4, true, false}, rng);
  const auto x = ag::constant(random_tensor({2, 4, 5, 3, 2}, 9));
  std::vector<ag::Var> w;
  for (Index e = 0; e < cfg.edge_count(); ++e) w.push_back(weights_of(std::vector<double>(11, 0.0)));
  CHECK(normal.forward(x, x, w, true)->value.shape() == Shape{2, 12, 5, 3, 2});
  CHECK(reduce.forward(x, x, w, true)->value.shape() == Shape{2, 12, 3, 2, 1});
  CHECK(normal.output_channels() == 12);
}

TEST_CASE("network output shape and zero head") {
  SupernetConfig cfg;
  cfg.width = 4;
  const Shape in{3, 5, 4, 3};
  Network net(cfg, in);
  const auto x = ag::constant(random_tensor({7, 3, 5, 4, 3}, 10));
  std::vector<ag::Var> normal, reduce;
  for (Index e = 0; e < cfg.edge_count(); ++e) {
    normal.push_back(weights_of(std::vector<double>(11, 0.0)));
    reduce.push_back(weights_of(std::vector<double>(11, 0.0)));
  }
  const auto y = net.forward(x, normal, reduce, false);
  CHECK(y->value.shape() == Shape{7, 1});
  CHECK(y->value.all_finite());

  net.head_weight()->value.array().setZero();
  net.head_bias()->value[0] = 0.375;
  const auto z = net.forward(x, normal, reduce, false);
  for (Index i = 0; i < 7; ++i) CHECK(z->value[i] == 0.375);

  Network twin(cfg, in);
  twin.head_weight()->value.array().setZero();
  twin.head_bias()->value[0] = 0.375;
  CHECK(twin.forward(x, normal, reduce, false)->value == z->value);
}

TEST_CASE("genotype derivation with clear winners") {
  // nodes = 2 -> edges: node0 {s0, s1}, node1 {s0, s1, n0}
  const auto& ops = all_op_kinds();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(5, 11);
  auto col = [](OpKind k) { return static_cast<Index>(k); };
  a(0, col(OpKind::conv_3x3x3)) = 3.0;
  a(1, col(OpKind::max_pool_3x3x3)) = 2.0;
  a(2, col(OpKind::none)) = 50.0;  // strongest edge only through none
  a(2, col(OpKind::skip_connect)) = 1.0;
  a(3, col(OpKind::sep_conv_3x3x3)) = 4.0;
  a(4, col(OpKind::conv_1x3x3)) = 5.0;
  const auto g = derive_cell(a, ops, 2);
  REQUIRE(g.nodes.size() == 2);
  CHECK(g.nodes[0][0] == std::pair<Index, OpKind>{0, OpKind::conv_3x3x3});
  CHECK(g.nodes[0][1] == std::pair<Index, OpKind>{1, OpKind::max_pool_3x3x3});
  CHECK(g.nodes[1][0] == std::pair<Index, OpKind>{1, OpKind::sep_conv_3x3x3});
  CHECK(g.nodes[1][1] == std::pair<Index, OpKind>{2, OpKind::conv_1x3x3});
  g.validate();

  // adding a constant to one edge changes nothing
  Eigen::MatrixXd b = a;
  b.row(3).array() += 9.0;
  const auto h = derive_cell(b, ops, 2);
  CHECK(h.nodes == g.nodes);
}

TEST_CASE("uniform logits give lowest-index choices") {
  SupernetConfig cfg;
  const auto arch = ArchParams::zeros(cfg);
  const auto [n, r] = derive_genotype(arch, cfg);
  for (const auto& node : n.nodes) {
    CHECK(node[0] == std::pair<Index, OpKind>{0, OpKind::avg_pool_3x3x3});
    CHECK(node[1] == std::pair<Index, OpKind>{1, OpKind::avg_pool_3x3x3});
  }
  CHECK(r.nodes == n.nodes);
}

TEST_CASE("random logits never yield none") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0, 3);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd a(14, 11);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
    const auto g = derive_cell(a, all_op_kinds(), 4);
    for (Index i = 0; i < 4; ++i) {
      const auto& node = g.nodes[static_cast<std::size_t>(i)];
      for (const auto& [pred, op] : node) {
        CHECK(op != OpKind::none);
        CHECK(pred < i + 2);
      }
      CHECK(node[0].first != node[1].first);
    }
  }
}

TEST_CASE("discrete network runs from a genotype") {
  SupernetConfig cfg;
  cfg.width = 4;
  Genotype g;
  std::tie(g.normal, g.reduce) = derive_genotype(ArchParams::zeros(cfg), cfg);
  Network net(cfg, {2, 4, 3, 2}, g);
  const auto y = net.forward(ag::constant(random_tensor({3, 2, 4, 3, 2}, 2)), true);
  CHECK(y->value.shape() == Shape{3, 1});
  const auto back = Genotype::from_json(g.to_json());
  CHECK(back.normal.nodes == g.normal.nodes);
}
