#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxnas/autograd.hpp"
#include "voxnas/embedding.hpp"
#include "voxnas/ops.hpp"
#include "voxnas/rng.hpp"

namespace voxnas {

enum class OpKind : int {
  none = 0,
  avg_pool_3x3x3,
  max_pool_3x3x3,
  skip_connect,
  conv_1x1x1,
  conv_3x3x3,
  conv_5x5x5,
  sep_conv_3x3x3,
  dil_conv_3x3x3,
  conv_1x3x3,
  conv_3x1x1,
};
inline constexpr int kOpKindCount = 11;
const std::vector<OpKind>& all_op_kinds();
std::string op_name(OpKind kind);
OpKind op_from_name(const std::string& name);

struct SupernetConfig {
  Index cells = 4;
  Index nodes = 2;
  Index width = 8;
  std::vector<OpKind> ops = all_op_kinds();  // candidate set on every edge
  std::uint64_t seed = 0;

  void validate() const;
  bool is_reduction(Index cell) const { return cell == cells / 3 || cell == 2 * cells / 3; }
  // Edges per cell: node i has i + 2 predecessors.
  Index edge_count() const { return nodes * (nodes + 3) / 2; }
  nlohmann::json to_json() const;
  static SupernetConfig from_json(const nlohmann::json& j);
};

// Per-channel normalization state (affine-free).
struct BatchNorm3d {
  Eigen::ArrayXd running_mean;
  Eigen::ArrayXd running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNorm3d(Index channels = 0)
      : running_mean(Eigen::ArrayXd::Zero(channels)), running_var(Eigen::ArrayXd::Ones(channels)) {}
  ag::Var forward(const ag::Var& x, bool training);
};

// Everything a network owns that is not an architecture logit.
struct ModuleState {
  std::vector<ag::Var> weights;
  std::vector<BatchNorm3d*> norms;
};

// relu -> chain of convolutions -> batch norm.
class ConvStage {
 public:
  struct ConvSpec {
    Index in_channels, out_channels;
    std::array<Index, 3> kernel;
    ag::Conv3dOptions options;
  };
  ConvStage(const std::vector<ConvSpec>& convs, Rng& rng, bool leading_relu = true);
  ag::Var forward(const ag::Var& x, bool training);
  void collect(ModuleState& state);

 private:
  std::vector<ag::Var> weights_;
  std::vector<ag::Conv3dOptions> options_;
  BatchNorm3d bn_;
  bool leading_relu_;
};

// One candidate operation at a fixed channel count and stride.
class Primitive {
 public:
  Primitive(OpKind kind, Index channels, Index stride, Rng& rng);
  OpKind kind() const { return kind_; }
  Index stride() const { return stride_; }
  // `none` yields a null Var (an all-zero contribution); see forward_dense.
  ag::Var forward(const ag::Var& x, bool training);
  // Same as forward but materializes zeros for `none`.
  ag::Var forward_dense(const ag::Var& x, bool training);
  void collect(ModuleState& state);

 private:
  OpKind kind_;
  Index stride_;
  std::vector<ConvStage> stages_;
};

Shape stride_output_shape(const Shape& input, Index stride);

// Softmax-weighted sum of every candidate primitive on one edge.
class MixedOp {
 public:
  MixedOp(const std::vector<OpKind>& ops, Index channels, Index stride, Rng& rng);
  // `weights` are the softmax-normalized logits, one per candidate op.
  ag::Var forward(const ag::Var& x, const ag::Var& weights, bool training);
  const std::vector<OpKind>& ops() const { return ops_; }
  void collect(ModuleState& state);

 private:
  std::vector<OpKind> ops_;
  std::vector<Primitive> primitives_;
  Index stride_;
};

struct CellGenotype {
  // Per intermediate node: two (predecessor, op) inputs from earlier nodes.
  std::vector<std::array<std::pair<Index, OpKind>, 2>> nodes;
  nlohmann::json to_json() const;
  static CellGenotype from_json(const nlohmann::json& j);
  void validate() const;
};

// Cell DAG: input nodes s0 and s1, then `nodes` intermediate nodes, output
// the channel concatenation of the intermediate nodes.
class Cell {
 public:
  struct Geometry {
    Index c_prev_prev, c_prev, channels;
    bool reduction, reduction_prev;
  };
  // Supernet cell with a mixed op on every edge.
  Cell(const SupernetConfig& cfg, const Geometry& geo, Rng& rng);
  // Discrete cell following a genotype.
  Cell(const SupernetConfig& cfg, const Geometry& geo, const CellGenotype& genotype, Rng& rng);

  // `edge_weights` (supernet only): one softmax vector per edge.
  ag::Var forward(const ag::Var& s0, const ag::Var& s1, const std::vector<ag::Var>& edge_weights,
                  bool training);
  // DAG part on already preprocessed inputs.
  ag::Var forward_dag(const ag::Var& s0, const ag::Var& s1, const std::vector<ag::Var>& edge_weights,
                      bool training);
  Index output_channels() const { return nodes_ * geo_.channels; }
  bool reduction() const { return geo_.reduction; }
  void collect(ModuleState& state);

 private:
  Geometry geo_;
  Index nodes_;
  ConvStage pre0_, pre1_;
  std::vector<MixedOp> mixed_;  // supernet edges, node-major
  std::vector<std::array<std::pair<Index, Primitive>, 2>> chosen_;  // discrete
  bool discrete_;
};

// Architecture logits: one row per edge, one column per candidate op.
struct ArchParams {
  Eigen::MatrixXd normal;
  Eigen::MatrixXd reduce;

  static ArchParams zeros(const SupernetConfig& cfg);
  nlohmann::json to_json() const;
  static ArchParams from_json(const nlohmann::json& j);
};

struct Genotype {
  CellGenotype normal;
  CellGenotype reduce;
  EmbeddingGenotype embedding;
  nlohmann::json to_json() const;
  static Genotype from_json(const nlohmann::json& j);
};

// Keeps, per node, the two edges with the strongest non-`none` op weight and
// the argmax non-`none` op on each; ties go to the lowest index.
CellGenotype derive_cell(const Eigen::MatrixXd& logits, const std::vector<OpKind>& ops, Index nodes);
std::pair<CellGenotype, CellGenotype> derive_genotype(const ArchParams& arch, const SupernetConfig& cfg);

// Stem -> cells -> global average pool -> linear head with one output.
class Network {
 public:
  // input_shape: (channels = years, features, bases, equipment).
  Network(const SupernetConfig& cfg, const Shape& input_shape);
  Network(const SupernetConfig& cfg, const Shape& input_shape, const Genotype& genotype);

  // Supernet forward; `normal`/`reduce` are per-edge softmax weight vectors.
  ag::Var forward(const ag::Var& x, const std::vector<ag::Var>& normal,
                  const std::vector<ag::Var>& reduce, bool training);
  // Discrete network forward.
  ag::Var forward(const ag::Var& x, bool training);

  const SupernetConfig& config() const { return cfg_; }
  const Shape& input_shape() const { return input_shape_; }
  bool discrete() const { return discrete_; }
  ModuleState& state() { return state_; }
  const ag::Var& head_weight() const { return head_w_; }
  const ag::Var& head_bias() const { return head_b_; }

 private:
  void build(const std::optional<Genotype>& genotype);
  ag::Var forward_impl(const ag::Var& x, const std::vector<ag::Var>* normal,
                       const std::vector<ag::Var>* reduce, bool training);

  SupernetConfig cfg_;
  Shape input_shape_;
  bool discrete_ = false;
  std::unique_ptr<ConvStage> stem_;
  std::vector<Cell> cells_;
  ag::Var head_w_, head_b_;
  ModuleState state_;
};

}  // namespace voxnas
