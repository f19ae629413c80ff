#include "voxnas/supernet.hpp"

#include <algorithm>
#include <cmath>

#include "voxnas/error.hpp"

namespace voxnas {

const std::vector<OpKind>& all_op_kinds() {
  static const std::vector<OpKind> kinds = [] {
    std::vector<OpKind> v;
    for (int i = 0; i < kOpKindCount; ++i) v.push_back(static_cast<OpKind>(i));
    return v;
  }();
  return kinds;
}

std::string op_name(OpKind kind) {
  switch (kind) {
    case OpKind::none: return "none";
    case OpKind::avg_pool_3x3x3: return "avg_pool_3x3x3";
    case OpKind::max_pool_3x3x3: return "max_pool_3x3x3";
    case OpKind::skip_connect: return "skip_connect";
    case OpKind::conv_1x1x1: return "conv_1x1x1";
    case OpKind::conv_3x3x3: return "conv_3x3x3";
    case OpKind::conv_5x5x5: return "conv_5x5x5";
    case OpKind::sep_conv_3x3x3: return "sep_conv_3x3x3";
    case OpKind::dil_conv_3x3x3: return "dil_conv_3x3x3";
    case OpKind::conv_1x3x3: return "conv_1x3x3";
    case OpKind::conv_3x1x1: return "conv_3x1x1";
  }
  return "?";
}

OpKind op_from_name(const std::string& name) {
  for (OpKind k : all_op_kinds()) {
    if (op_name(k) == name) return k;
  }
  throw ConfigError("unknown operation '" + name + "'");
}

void SupernetConfig::validate() const {
  if (cells < 2) throw ConfigError("supernet needs at least 2 cells");
  if (nodes < 1) throw ConfigError("cells need at least 1 intermediate node");
  if (width < 1) throw ConfigError("channel width must be >= 1");
  if (ops.empty()) throw ConfigError("empty operation set");
  const bool has_real_op = std::any_of(ops.begin(), ops.end(), [](OpKind k) { return k != OpKind::none; });
  if (!has_real_op) throw ConfigError("operation set needs at least one op besides none");
}

nlohmann::json SupernetConfig::to_json() const {
  std::vector<std::string> names;
  for (OpKind k : ops) names.push_back(op_name(k));
  return {{"cells", cells}, {"nodes", nodes}, {"width", width}, {"ops", names}, {"seed", seed}};
}

SupernetConfig SupernetConfig::from_json(const nlohmann::json& j) {
  SupernetConfig c;
  c.cells = j.value("cells", c.cells);
  c.nodes = j.value("nodes", c.nodes);
  c.width = j.value("width", c.width);
  c.seed = j.value("seed", c.seed);
  if (j.contains("ops")) {
    c.ops.clear();
    for (const auto& n : j.at("ops")) c.ops.push_back(op_from_name(n.get<std::string>()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- building blocks

ag::Var BatchNorm3d::forward(const ag::Var& x, bool training) {
  ag::BatchStats stats;
  auto out = ag::batch_norm(x, training, running_mean, running_var, eps, training ? &stats : nullptr);
  if (training) {
    const double n = static_cast<double>(stats.count);
    const Eigen::ArrayXd unbiased = n > 1 ? Eigen::ArrayXd(stats.var * (n / (n - 1.0))) : stats.var;
    running_mean = (1.0 - momentum) * running_mean + momentum * stats.mean;
    running_var = (1.0 - momentum) * running_var + momentum * unbiased;
  }
  return out;
}

namespace {

ag::Var init_conv_weight(Index out_c, Index in_c_per_group, const std::array<Index, 3>& k, Rng& rng) {
  Tensor w({out_c, in_c_per_group, k[0], k[1], k[2]});
  const double fan_in = static_cast<double>(in_c_per_group * k[0] * k[1] * k[2]);
  const double sd = std::sqrt(2.0 / fan_in);
  for (Index i = 0; i < w.size(); ++i) w[i] = sd * standard_normal(rng);
  return ag::parameter(std::move(w));
}

ag::Conv3dOptions same_padding(const std::array<Index, 3>& k, Index stride, Index dilation = 1, Index groups = 1) {
  ag::Conv3dOptions o;
  o.stride = stride;
  o.dilation = dilation;
  o.groups = groups;
  for (std::size_t a = 0; a < 3; ++a) o.padding[a] = dilation * (k[a] - 1) / 2;
  return o;
}

}  // namespace

ConvStage::ConvStage(const std::vector<ConvSpec>& convs, Rng& rng, bool leading_relu)
    : bn_(convs.empty() ? 0 : convs.back().out_channels), leading_relu_(leading_relu) {
  for (const auto& c : convs) {
    weights_.push_back(init_conv_weight(c.out_channels, c.in_channels / c.options.groups, c.kernel, rng));
    options_.push_back(c.options);
  }
}

ag::Var ConvStage::forward(const ag::Var& x, bool training) {
  ag::Var h = leading_relu_ ? ag::relu(x) : x;
  for (std::size_t i = 0; i < weights_.size(); ++i) h = ag::conv3d(h, weights_[i], options_[i]);
  return bn_.forward(h, training);
}

void ConvStage::collect(ModuleState& state) {
  state.weights.insert(state.weights.end(), weights_.begin(), weights_.end());
  state.norms.push_back(&bn_);
}

Shape stride_output_shape(const Shape& input, Index stride) {
  Shape out = input;
  for (std::size_t a = 2; a < out.size(); ++a) out[a] = (out[a] + stride - 1) / stride;
  return out;
}

Primitive::Primitive(OpKind kind, Index channels, Index stride, Rng& rng) : kind_(kind), stride_(stride) {
  if (stride != 1 && stride != 2) throw UnsupportedStride("stride " + std::to_string(stride));
  using Spec = ConvStage::ConvSpec;
  const Index c = channels;
  auto full = [&](std::array<Index, 3> k) {
    stages_.emplace_back(std::vector<Spec>{{c, c, k, same_padding(k, stride)}}, rng);
  };
  const std::array<Index, 3> k3{3, 3, 3}, k1{1, 1, 1};
  switch (kind) {
    case OpKind::none:
    case OpKind::avg_pool_3x3x3:
    case OpKind::max_pool_3x3x3:
      break;
    case OpKind::skip_connect:
      // Strided identity is a 1x1x1 projection.
      if (stride == 2) full(k1);
      break;
    case OpKind::conv_1x1x1: full(k1); break;
    case OpKind::conv_3x3x3: full(k3); break;
    case OpKind::conv_5x5x5: full({5, 5, 5}); break;
    case OpKind::conv_1x3x3: full({1, 3, 3}); break;
    case OpKind::conv_3x1x1: full({3, 1, 1}); break;
    case OpKind::sep_conv_3x3x3:
      stages_.emplace_back(std::vector<Spec>{{c, c, k3, same_padding(k3, stride, 1, c)},
                                             {c, c, k1, same_padding(k1, 1)}},
                           rng);
      stages_.emplace_back(std::vector<Spec>{{c, c, k3, same_padding(k3, 1, 1, c)},
                                             {c, c, k1, same_padding(k1, 1)}},
                           rng);
      break;
    case OpKind::dil_conv_3x3x3:
      stages_.emplace_back(std::vector<Spec>{{c, c, k3, same_padding(k3, stride, 2, c)},
                                             {c, c, k1, same_padding(k1, 1)}},
                           rng);
      break;
  }
}

ag::Var Primitive::forward(const ag::Var& x, bool training) {
  if (x->value.rank() != 5) throw ShapeMismatch("primitive input must be rank 5");
  switch (kind_) {
    case OpKind::none: return nullptr;
    case OpKind::avg_pool_3x3x3: return ag::avg_pool3d(x, 3, stride_, 1);
    case OpKind::max_pool_3x3x3: return ag::max_pool3d(x, 3, stride_, 1);
    case OpKind::skip_connect:
      if (stride_ == 1) return x;
      break;
    default: break;
  }
  ag::Var h = x;
  for (auto& s : stages_) h = s.forward(h, training);
  return h;
}

ag::Var Primitive::forward_dense(const ag::Var& x, bool training) {
  if (kind_ == OpKind::none) return ag::constant(Tensor(stride_output_shape(x->value.shape(), stride_)));
  return forward(x, training);
}

void Primitive::collect(ModuleState& state) {
  for (auto& s : stages_) s.collect(state);
}

MixedOp::MixedOp(const std::vector<OpKind>& ops, Index channels, Index stride, Rng& rng)
    : ops_(ops), stride_(stride) {
  primitives_.reserve(ops.size());
  for (OpKind k : ops) primitives_.emplace_back(k, channels, stride, rng);
}

ag::Var MixedOp::forward(const ag::Var& x, const ag::Var& weights, bool training) {
  if (weights->value.size() != static_cast<Index>(ops_.size())) {
    throw ShapeMismatch("mixed op has " + std::to_string(ops_.size()) + " candidates, got " +
                        std::to_string(weights->value.size()) + " weights");
  }
  std::vector<ag::Var> outs;
  outs.reserve(primitives_.size());
  bool any = false;
  for (auto& p : primitives_) {
    outs.push_back(p.forward(x, training));
    any = any || static_cast<bool>(outs.back());
  }
  if (!any) outs.front() = ag::constant(Tensor(stride_output_shape(x->value.shape(), stride_)));
  return ag::weighted_sum(weights, outs);
}

void MixedOp::collect(ModuleState& state) {
  for (auto& p : primitives_) p.collect(state);
}

// ---------------------------------------------------------------- cells

nlohmann::json CellGenotype::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& node : nodes) {
    nlohmann::json n = nlohmann::json::array();
    for (const auto& [pred, op] : node) n.push_back({{"input", pred}, {"op", op_name(op)}});
    j.push_back(n);
  }
  return j;
}

CellGenotype CellGenotype::from_json(const nlohmann::json& j) {
  CellGenotype g;
  for (const auto& n : j) {
    if (n.size() != 2) throw ConfigError("each genotype node needs exactly two inputs");
    std::array<std::pair<Index, OpKind>, 2> node;
    for (std::size_t i = 0; i < 2; ++i) {
      node[i] = {n[i].at("input").get<Index>(), op_from_name(n[i].at("op").get<std::string>())};
    }
    g.nodes.push_back(node);
  }
  g.validate();
  return g;
}

void CellGenotype::validate() const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& [pred, op] : nodes[i]) {
      if (op == OpKind::none) throw ConfigError("genotype contains a none op");
      if (pred < 0 || pred >= static_cast<Index>(i) + 2) {
        throw ConfigError("node " + std::to_string(i) + " takes input from a later node");
      }
    }
  }
}

namespace {

ConvStage preprocess(Index in_c, Index out_c, Index stride, Rng& rng) {
  const std::array<Index, 3> k1{1, 1, 1};
  return ConvStage({{in_c, out_c, k1, same_padding(k1, stride)}}, rng);
}

}  // namespace

Cell::Cell(const SupernetConfig& cfg, const Geometry& geo, Rng& rng)
    : geo_(geo),
      nodes_(cfg.nodes),
      pre0_(preprocess(geo.c_prev_prev, geo.channels, geo.reduction_prev ? 2 : 1, rng)),
      pre1_(preprocess(geo.c_prev, geo.channels, 1, rng)),
      discrete_(false) {
  mixed_.reserve(static_cast<std::size_t>(cfg.edge_count()));
  for (Index i = 0; i < nodes_; ++i) {
    for (Index j = 0; j < i + 2; ++j) {
      mixed_.emplace_back(cfg.ops, geo.channels, geo.reduction && j < 2 ? 2 : 1, rng);
    }
  }
}

Cell::Cell(const SupernetConfig& cfg, const Geometry& geo, const CellGenotype& genotype, Rng& rng)
    : geo_(geo),
      nodes_(cfg.nodes),
      pre0_(preprocess(geo.c_prev_prev, geo.channels, geo.reduction_prev ? 2 : 1, rng)),
      pre1_(preprocess(geo.c_prev, geo.channels, 1, rng)),
      discrete_(true) {
  genotype.validate();
  if (static_cast<Index>(genotype.nodes.size()) != nodes_) {
    throw ShapeMismatch("genotype has " + std::to_string(genotype.nodes.size()) + " nodes, config expects " +
                        std::to_string(nodes_));
  }
  chosen_.reserve(genotype.nodes.size());
  for (const auto& node : genotype.nodes) {
    const auto make = [&](const std::pair<Index, OpKind>& in) {
      return std::pair<Index, Primitive>(
          in.first, Primitive(in.second, geo.channels, geo.reduction && in.first < 2 ? 2 : 1, rng));
    };
    auto a = make(node[0]);
    auto b = make(node[1]);
    chosen_.push_back({std::move(a), std::move(b)});
  }
}

ag::Var Cell::forward(const ag::Var& s0, const ag::Var& s1, const std::vector<ag::Var>& edge_weights,
                      bool training) {
  return forward_dag(pre0_.forward(s0, training), pre1_.forward(s1, training), edge_weights, training);
}

ag::Var Cell::forward_dag(const ag::Var& s0, const ag::Var& s1, const std::vector<ag::Var>& edge_weights,
                          bool training) {
  if (s0->value.shape() != s1->value.shape()) {
    throw ShapeMismatch("cell inputs differ: " + shape_string(s0->value.shape()) + " vs " +
                        shape_string(s1->value.shape()));
  }
  std::vector<ag::Var> states{s0, s1};
  std::size_t edge = 0;
  for (Index i = 0; i < nodes_; ++i) {
    std::vector<ag::Var> terms;
    if (discrete_) {
      for (auto& [pred, prim] : chosen_[static_cast<std::size_t>(i)]) {
        terms.push_back(prim.forward_dense(states[static_cast<std::size_t>(pred)], training));
      }
    } else {
      if (edge_weights.size() != mixed_.size()) {
        throw ShapeMismatch("cell has " + std::to_string(mixed_.size()) + " edges, got " +
                            std::to_string(edge_weights.size()) + " weight vectors");
      }
      for (Index j = 0; j < i + 2; ++j, ++edge) {
        terms.push_back(mixed_[edge].forward(states[static_cast<std::size_t>(j)], edge_weights[edge], training));
      }
    }
    states.push_back(terms.size() == 1 ? terms.front() : ag::add_n(terms));
  }
  return ag::concat_channels(std::vector<ag::Var>(states.begin() + 2, states.end()));
}

void Cell::collect(ModuleState& state) {
  pre0_.collect(state);
  pre1_.collect(state);
  for (auto& m : mixed_) m.collect(state);
  for (auto& node : chosen_) {
    for (auto& in : node) in.second.collect(state);
  }
}

// ---------------------------------------------------------------- genotype

ArchParams ArchParams::zeros(const SupernetConfig& cfg) {
  const auto ops = static_cast<Index>(cfg.ops.size());
  return {Eigen::MatrixXd::Zero(cfg.edge_count(), ops), Eigen::MatrixXd::Zero(cfg.edge_count(), ops)};
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    j.push_back(row);
  }
  return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Index>(j.size());
  const auto cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[static_cast<std::size_t>(r)].size()) != cols) throw ConfigError("ragged matrix");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json ArchParams::to_json() const { return {{"normal", matrix_json(normal)}, {"reduce", matrix_json(reduce)}}; }

ArchParams ArchParams::from_json(const nlohmann::json& j) {
  return {matrix_from_json(j.at("normal")), matrix_from_json(j.at("reduce"))};
}

nlohmann::json Genotype::to_json() const {
  return {{"normal", normal.to_json()}, {"reduce", reduce.to_json()}, {"embedding", embedding.to_json()}};
}

Genotype Genotype::from_json(const nlohmann::json& j) {
  return {CellGenotype::from_json(j.at("normal")), CellGenotype::from_json(j.at("reduce")),
          EmbeddingGenotype::from_json(j.at("embedding"))};
}

CellGenotype derive_cell(const Eigen::MatrixXd& logits, const std::vector<OpKind>& ops, Index nodes) {
  const Index edges = nodes * (nodes + 3) / 2;
  if (logits.rows() != edges || logits.cols() != static_cast<Index>(ops.size())) {
    throw ShapeMismatch("architecture logits are " + std::to_string(logits.rows()) + "x" +
                        std::to_string(logits.cols()) + ", expected " + std::to_string(edges) + "x" +
                        std::to_string(ops.size()));
  }
  CellGenotype g;
  Index start = 0;
  for (Index i = 0; i < nodes; ++i) {
    const Index preds = i + 2;
    struct Candidate {
      Index pred;
      OpKind op;
      double strength;
    };
    std::vector<Candidate> cands;
    for (Index j = 0; j < preds; ++j) {
      const Eigen::RowVectorXd z = logits.row(start + j);
      const Eigen::ArrayXd w = (z.array() - z.maxCoeff()).exp();
      const Eigen::ArrayXd p = w / w.sum();
      Index best = -1;
      for (Index k = 0; k < p.size(); ++k) {
        if (ops[static_cast<std::size_t>(k)] == OpKind::none) continue;
        if (best < 0 || p[k] > p[best]) best = k;
      }
      cands.push_back({j, ops[static_cast<std::size_t>(best)], p[best]});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.strength > b.strength; });
    std::array<std::pair<Index, OpKind>, 2> node{{{cands[0].pred, cands[0].op}, {cands[1].pred, cands[1].op}}};
    if (node[1].first < node[0].first) std::swap(node[0], node[1]);
    g.nodes.push_back(node);
    start += preds;
  }
  return g;
}

std::pair<CellGenotype, CellGenotype> derive_genotype(const ArchParams& arch, const SupernetConfig& cfg) {
  return {derive_cell(arch.normal, cfg.ops, cfg.nodes), derive_cell(arch.reduce, cfg.ops, cfg.nodes)};
}

// ---------------------------------------------------------------- network

Network::Network(const SupernetConfig& cfg, const Shape& input_shape) : cfg_(cfg), input_shape_(input_shape) {
  build(std::nullopt);
}

Network::Network(const SupernetConfig& cfg, const Shape& input_shape, const Genotype& genotype)
    : cfg_(cfg), input_shape_(input_shape), discrete_(true) {
  build(genotype);
}

void Network::build(const std::optional<Genotype>& genotype) {
  cfg_.validate();
  if (input_shape_.size() != 4) throw ShapeMismatch("network input shape must be (channels, d, h, w)");
  Rng rng = substream(cfg_.seed, "weights");
  const std::array<Index, 3> k3{3, 3, 3};
  stem_ = std::make_unique<ConvStage>(
      std::vector<ConvStage::ConvSpec>{{input_shape_[0], cfg_.width, k3, same_padding(k3, 1)}}, rng, false);
  Index c_prev_prev = cfg_.width, c_prev = cfg_.width, c = cfg_.width;
  bool reduction_prev = false;
  cells_.reserve(static_cast<std::size_t>(cfg_.cells));
  for (Index i = 0; i < cfg_.cells; ++i) {
    const bool reduction = cfg_.is_reduction(i);
    if (reduction) c *= 2;
    Cell::Geometry geo{c_prev_prev, c_prev, c, reduction, reduction_prev};
    if (genotype) {
      cells_.emplace_back(cfg_, geo, reduction ? genotype->reduce : genotype->normal, rng);
    } else {
      cells_.emplace_back(cfg_, geo, rng);
    }
    reduction_prev = reduction;
    c_prev_prev = c_prev;
    c_prev = cells_.back().output_channels();
  }
  Tensor w({1, c_prev});
  const double sd = 1.0 / std::sqrt(static_cast<double>(c_prev));
  for (Index i = 0; i < w.size(); ++i) w[i] = sd * standard_normal(rng);
  head_w_ = ag::parameter(std::move(w));
  head_b_ = ag::parameter(Tensor({1}));

  state_ = {};
  stem_->collect(state_);
  for (auto& cell : cells_) cell.collect(state_);
  state_.weights.push_back(head_w_);
  state_.weights.push_back(head_b_);
}

ag::Var Network::forward(const ag::Var& x, const std::vector<ag::Var>& normal, const std::vector<ag::Var>& reduce,
                         bool training) {
  if (discrete_) throw ShapeMismatch("discrete network takes no architecture weights");
  return forward_impl(x, &normal, &reduce, training);
}

ag::Var Network::forward(const ag::Var& x, bool training) {
  if (!discrete_) throw ShapeMismatch("supernet forward needs architecture weights");
  return forward_impl(x, nullptr, nullptr, training);
}

ag::Var Network::forward_impl(const ag::Var& x, const std::vector<ag::Var>* normal,
                              const std::vector<ag::Var>* reduce, bool training) {
  const Tensor& v = x->value;
  if (v.rank() != 5 || !std::equal(input_shape_.begin(), input_shape_.end(), v.shape().begin() + 1)) {
    Shape expect{-1};
    expect.insert(expect.end(), input_shape_.begin(), input_shape_.end());
    throw ShapeMismatch("network expects batches shaped " + shape_string(expect) + ", got " +
                        shape_string(v.shape()));
  }
  ag::Var s0 = stem_->forward(x, training);
  ag::Var s1 = s0;
  static const std::vector<ag::Var> kNoWeights;
  for (auto& cell : cells_) {
    const auto& w = discrete_ ? kNoWeights : (cell.reduction() ? *reduce : *normal);
    ag::Var next = cell.forward(s0, s1, w, training);
    s0 = s1;
    s1 = next;
  }
  return ag::linear(ag::global_avg_pool(s1), head_w_, head_b_);
}

}  // namespace voxnas
