#include "voxnas/search.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "voxnas/io.hpp"
#include "voxnas/ops.hpp"

namespace voxnas {

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

// ---------------------------------------------------------------- configs

void BilevelConfig::validate() const {
  require(epochs >= 0, "search epochs must be >= 0");
  require(batch_size >= 1, "search batch size must be >= 1");
  require(weight_lr >= 0.0 && arch_lr >= 0.0, "learning rates must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0 && arch_weight_decay >= 0.0, "weight decay must be >= 0");
  require(grad_clip >= 0.0, "gradient clip must be >= 0");
  require(arch_beta1 >= 0.0 && arch_beta1 < 1.0 && arch_beta2 >= 0.0 && arch_beta2 < 1.0,
          "Adam betas must be in [0, 1)");
  require(init_noise >= 0.0, "init noise must be >= 0");
  require(checkpoint_every >= 0, "checkpoint cadence must be >= 0");
}

nlohmann::json BilevelConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"weight_lr", weight_lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"grad_clip", grad_clip},
          {"arch_lr", arch_lr},
          {"arch_beta1", arch_beta1},
          {"arch_beta2", arch_beta2},
          {"arch_weight_decay", arch_weight_decay},
          {"init_noise", init_noise},
          {"checkpoint_every", checkpoint_every}};
}

BilevelConfig BilevelConfig::from_json(const nlohmann::json& j) { return from_json(j, BilevelConfig{}); }

BilevelConfig BilevelConfig::from_json(const nlohmann::json& j, BilevelConfig c) {
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "weight_lr", c.weight_lr);
  read_field(j, "momentum", c.momentum);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "grad_clip", c.grad_clip);
  read_field(j, "arch_lr", c.arch_lr);
  read_field(j, "arch_beta1", c.arch_beta1);
  read_field(j, "arch_beta2", c.arch_beta2);
  read_field(j, "arch_weight_decay", c.arch_weight_decay);
  read_field(j, "init_noise", c.init_noise);
  read_field(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

void EmbeddingConfig::validate() const {
  for (Index k : max_clusters) {
    require(k >= 1 && k <= kMaxClustersPerAxis,
            "cluster caps must be in [1, " + std::to_string(kMaxClustersPerAxis) + "]");
  }
  require(joint_cap >= 1, "joint candidate cap must be >= 1");
}

nlohmann::json EmbeddingConfig::to_json() const {
  return {{"max_feature_clusters", max_clusters[0]},
          {"max_base_clusters", max_clusters[1]},
          {"max_equipment_clusters", max_clusters[2]},
          {"mode", mode_name(mode)},
          {"joint_cap", joint_cap}};
}

EmbeddingConfig EmbeddingConfig::from_json(const nlohmann::json& j) { return from_json(j, EmbeddingConfig{}); }

EmbeddingConfig EmbeddingConfig::from_json(const nlohmann::json& j, EmbeddingConfig c) {
  read_field(j, "max_feature_clusters", c.max_clusters[0]);
  read_field(j, "max_base_clusters", c.max_clusters[1]);
  read_field(j, "max_equipment_clusters", c.max_clusters[2]);
  if (j.contains("mode")) c.mode = mode_from_name(j.at("mode").get<std::string>());
  read_field(j, "joint_cap", c.joint_cap);
  return c;
}

void TrainConfig::validate() const {
  require(epochs >= 0, "training epochs must be >= 0");
  require(batch_size >= 1, "training batch size must be >= 1");
  require(lr >= 0.0 && lr_min >= 0.0, "training learning rates must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0 && grad_clip >= 0.0, "weight decay and clip must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},     {"batch_size", batch_size},     {"lr", lr},                {"lr_min", lr_min},
          {"momentum", momentum}, {"weight_decay", weight_decay}, {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "lr", c.lr);
  read_field(j, "lr_min", c.lr_min);
  read_field(j, "momentum", c.momentum);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "grad_clip", c.grad_clip);
  return c;
}

// ---------------------------------------------------------------- data

TargetScaler TargetScaler::fit(const std::vector<double>& demands) {
  if (demands.empty()) throw EmptyInput("no training targets");
  TargetScaler s;
  double sum = 0.0;
  for (double d : demands) sum += std::log1p(d);
  s.mean = sum / static_cast<double>(demands.size());
  double var = 0.0;
  for (double d : demands) var += (std::log1p(d) - s.mean) * (std::log1p(d) - s.mean);
  s.std = std::sqrt(var / static_cast<double>(demands.size()));
  if (!(s.std > 1e-12)) s.std = 1.0;
  return s;
}

PreparedData prepare_data(const DemandPanel& cleaned, const std::vector<Index>& fit_items) {
  PreparedData d{normalize(cleaned, fit_items).first, {}, {}};
  std::vector<double> targets;
  for (Index i : fit_items) {
    const auto t = cleaned.forecast_target(i);
    if (!t) throw InsufficientHistory("item '" + cleaned.items()[static_cast<std::size_t>(i)] + "' has no target");
    targets.push_back(*t);
  }
  d.scaler = TargetScaler::fit(targets);
  d.voxel_shape = {cleaned.year_count(), cleaned.schema().feature_count(), cleaned.base_count(),
                   cleaned.equipment_count()};
  return d;
}

Tensor PreparedData::batch(const std::vector<Index>& items) const {
  Shape shape{static_cast<Index>(items.size())};
  shape.insert(shape.end(), voxel_shape.begin(), voxel_shape.end());
  Tensor out(shape);
  const Index per = shape_size(voxel_shape);
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.array().segment(static_cast<Index>(i) * per, per) = raw(items[i]).array();
  }
  return out;
}

Tensor PreparedData::targets(const std::vector<Index>& items) const {
  Tensor out({static_cast<Index>(items.size()), 1});
  for (std::size_t i = 0; i < items.size(); ++i) {
    out[static_cast<Index>(i)] = scaler.forward(normalized.forecast_target(items[i]).value());
  }
  return out;
}

// ---------------------------------------------------------------- optimizers

void SgdMomentum::step(const std::vector<ag::Var>& params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.push_back(Tensor::zeros_like(p->value));
  }
  double sq = 0.0;
  for (const auto& p : params) {
    if (p->has_grad()) sq += p->grad.array().square().sum();
  }
  const double norm = std::sqrt(sq);
  const double factor = clip_ > 0.0 && norm > clip_ ? clip_ / (norm + 1e-6) : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& v = velocity_[i].array();
    if (p.has_grad()) {
      v = momentum_ * v + factor * p.grad.array() + decay_ * p.value.array();
    } else {
      v = momentum_ * v + decay_ * p.value.array();
    }
    p.value.array() -= lr_ * v;
    p.zero_grad();
  }
}

void Adam::step(std::vector<Eigen::VectorXd*>& params, const std::vector<Eigen::VectorXd>& grads) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (auto* p : params) {
      m_.push_back(Eigen::VectorXd::Zero(p->size()));
      v_.push_back(Eigen::VectorXd::Zero(p->size()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::ArrayXd g = grads[i].array() + decay_ * params[i]->array();
    m_[i] = (beta1_ * m_[i].array() + (1.0 - beta1_) * g).matrix();
    v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * g.square()).matrix();
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------- state

SearchState::SearchState(const SupernetConfig& net_cfg, const Shape& voxel_shape, const CandidateMappingSpace& space,
                         const BilevelConfig& cfg)
    : net(net_cfg, voxel_shape),
      arch(ArchParams::zeros(net_cfg)),
      embedding(EmbeddingParams::zeros(space)),
      weight_opt(cfg.weight_lr, cfg.momentum, cfg.weight_decay, cfg.grad_clip),
      arch_opt(cfg.arch_lr, cfg.arch_beta1, cfg.arch_beta2, cfg.arch_weight_decay) {}

std::vector<Eigen::VectorXd> SearchState::arch_vectors() const {
  std::vector<Eigen::VectorXd> out(embedding.logits.begin(), embedding.logits.end());
  for (Index r = 0; r < arch.normal.rows(); ++r) out.push_back(arch.normal.row(r).transpose());
  for (Index r = 0; r < arch.reduce.rows(); ++r) out.push_back(arch.reduce.row(r).transpose());
  return out;
}

void SearchState::set_arch_vectors(const std::vector<Eigen::VectorXd>& v) {
  const std::size_t ne = embedding.logits.size();
  if (v.size() != ne + static_cast<std::size_t>(arch.normal.rows() + arch.reduce.rows())) {
    throw ShapeMismatch("architecture vector count mismatch");
  }
  for (std::size_t i = 0; i < ne; ++i) embedding.logits[i] = v[i];
  for (Index r = 0; r < arch.normal.rows(); ++r) arch.normal.row(r) = v[ne + static_cast<std::size_t>(r)].transpose();
  for (Index r = 0; r < arch.reduce.rows(); ++r) {
    arch.reduce.row(r) = v[ne + static_cast<std::size_t>(arch.normal.rows() + r)].transpose();
  }
}

bool SearchState::all_finite() const {
  for (const auto& w : const_cast<Network&>(net).state().weights) {
    if (!w->value.all_finite()) return false;
  }
  for (const auto& v : arch_vectors()) {
    if (!v.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------- losses

ag::Var supernet_loss(SearchState& state, const CandidateMappingSpace& space, const Tensor& raw_batch,
                      const Tensor& target, std::vector<ag::Var>* arch_vars, bool training) {
  const auto vectors = state.arch_vectors();
  std::vector<ag::Var> vars;
  vars.reserve(vectors.size());
  for (const auto& v : vectors) {
    Tensor t({v.size()}, v.array());
    vars.push_back(arch_vars ? ag::parameter(std::move(t)) : ag::constant(std::move(t)));
  }
  if (arch_vars) *arch_vars = vars;
  const std::size_t ne = state.embedding.logits.size();
  const auto rows = static_cast<std::size_t>(state.arch.normal.rows());
  std::vector<ag::Var> emb(vars.begin(), vars.begin() + static_cast<std::ptrdiff_t>(ne));
  std::vector<ag::Var> normal, reduce;
  for (std::size_t r = 0; r < rows; ++r) {
    normal.push_back(ag::softmax(vars[ne + r]));
    reduce.push_back(ag::softmax(vars[ne + rows + r]));
  }
  const auto x = mixed_embed(ag::constant(raw_batch), space, emb);
  return ag::mse_loss(state.net.forward(x, normal, reduce, training), target);
}

namespace {

std::vector<std::pair<Eigen::ArrayXd, Eigen::ArrayXd>> save_norms(ModuleState& s) {
  std::vector<std::pair<Eigen::ArrayXd, Eigen::ArrayXd>> out;
  out.reserve(s.norms.size());
  for (auto* bn : s.norms) out.emplace_back(bn->running_mean, bn->running_var);
  return out;
}

void restore_norms(ModuleState& s, const std::vector<std::pair<Eigen::ArrayXd, Eigen::ArrayXd>>& saved) {
  for (std::size_t i = 0; i < saved.size(); ++i) {
    s.norms[i]->running_mean = saved[i].first;
    s.norms[i]->running_var = saved[i].second;
  }
}

void check_finite(double loss, const char* what, std::int64_t step) {
  if (!std::isfinite(loss)) {
    throw NonFiniteLoss(std::string(what) + " loss is " + std::to_string(loss) + " at step " + std::to_string(step));
  }
}

// Batches of near-equal size covering `items` in order.
std::vector<std::vector<Index>> split_batches(const std::vector<Index>& items, Index batch_size) {
  const auto n = static_cast<Index>(items.size());
  const Index count = std::max<Index>(1, (n + batch_size - 1) / batch_size);
  std::vector<std::vector<Index>> out;
  for (Index b = 0; b < count; ++b) {
    out.emplace_back(items.begin() + b * n / count, items.begin() + (b + 1) * n / count);
  }
  return out;
}

}  // namespace

double evaluate_supernet(SearchState& state, const CandidateMappingSpace& space, const PreparedData& data,
                         const std::vector<Index>& items) {
  if (items.empty()) throw EmptyInput("no items to evaluate");
  ag::NoGradGuard guard;
  const auto saved = save_norms(state.net.state());
  const double loss = supernet_loss(state, space, data.batch(items), data.targets(items), nullptr, true)->value[0];
  restore_norms(state.net.state(), saved);
  return loss;
}

StepLosses search_step(SearchState& state, const CandidateMappingSpace& space, const Tensor& train_x,
                       const Tensor& train_y, const Tensor& val_x, const Tensor& val_y, const BilevelConfig& cfg) {
  if (!state.noise_applied) {
    // Tiny seeded perturbation of the uniform start; deferred to the first
    // step so that zero epochs derive from exact ties.
    Rng rng = substream(cfg.seed, "arch_init");
    auto v = state.arch_vectors();
    for (auto& vec : v) {
      for (Index i = 0; i < vec.size(); ++i) vec[i] += cfg.init_noise * standard_normal(rng);
    }
    state.set_arch_vectors(v);
    state.noise_applied = true;
  }
  ++state.steps;
  StepLosses out;
  auto& weights = state.net.state().weights;

  // weights on the train batch, logits held constant
  {
    auto loss = supernet_loss(state, space, train_x, train_y, nullptr, true);
    out.train = loss->value[0];
    check_finite(out.train, "train", state.steps);
    ag::backward(loss);
    state.weight_opt.step(weights);
  }

  // logits on the validation batch, weights held constant
  {
    for (auto& w : weights) w->requires_grad = false;
    std::vector<ag::Var> vars;
    ag::Var loss;
    try {
      loss = supernet_loss(state, space, val_x, val_y, &vars, true);
      out.val = loss->value[0];
      check_finite(out.val, "validation", state.steps);
      ag::backward(loss);
    } catch (...) {
      for (auto& w : weights) w->requires_grad = true;
      throw;
    }
    for (auto& w : weights) w->requires_grad = true;
    auto vectors = state.arch_vectors();
    std::vector<Eigen::VectorXd> grads;
    std::vector<Eigen::VectorXd*> ptrs;
    for (std::size_t i = 0; i < vars.size(); ++i) {
      grads.push_back(vars[i]->has_grad() ? Eigen::VectorXd(vars[i]->grad.array().matrix())
                                          : Eigen::VectorXd::Zero(vectors[i].size()));
      ptrs.push_back(&vectors[i]);
    }
    state.arch_opt.step(ptrs, grads);
    state.set_arch_vectors(vectors);
  }
  if (!state.all_finite()) {
    throw NonFiniteLoss("parameters became non-finite at step " + std::to_string(state.steps));
  }
  return out;
}

// ---------------------------------------------------------------- search

std::array<LevelClustering, 3> cluster_axes(const DemandPanel& normalized, const std::vector<Index>& items,
                                            const EmbeddingConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::array<LevelClustering, 3> out;
  for (VoxelAxis a : kVoxelAxes) {
    const auto ai = static_cast<std::size_t>(a);
    out[ai] = cluster_levels(normalized, a, cfg.max_clusters[ai], substream(seed, "clustering", ai)(), items);
  }
  return out;
}

SearchOutcome run_search(const DemandPanel& cleaned, const FoldSplit& fold, const SearchOptions& options) {
  const auto& cfg = options.bilevel;
  cfg.validate();
  options.supernet.validate();
  if (fold.train.empty()) throw TooFewItems("fold " + std::to_string(fold.fold) + " has no training items");
  const auto& val_items = fold.validation.empty() ? fold.train : fold.validation;

  const PreparedData data = prepare_data(cleaned, fold.train);
  const auto space = enumerate_candidates(cluster_axes(data.normalized, fold.train, options.embedding, cfg.seed),
                                          options.embedding.mode, options.embedding.joint_cap);
  SearchState state(options.supernet, data.voxel_shape, space, cfg);

  const std::string ckpt = options.checkpoint_dir.empty()
                               ? std::string()
                               : (std::filesystem::path(options.checkpoint_dir) / "checkpoint.bin").string();
  if (!ckpt.empty() && options.resume && std::filesystem::exists(ckpt)) {
    read_checkpoint(ckpt, state, options.config_hash);
  } else {
    state.initial_val_loss = evaluate_supernet(state, space, data, val_items);
  }

  while (state.epoch < cfg.epochs) {
    const Index epoch = state.epoch + 1;
    auto train = fold.train;
    auto val = val_items;
    Rng r1 = substream(cfg.seed, "batches", static_cast<std::uint64_t>(epoch));
    Rng r2 = substream(cfg.seed, "val_batches", static_cast<std::uint64_t>(epoch));
    shuffle(train, r1);
    shuffle(val, r2);
    const auto train_batches = split_batches(train, cfg.batch_size);
    const auto val_batches = split_batches(val, cfg.batch_size);
    double total = 0.0;
    for (std::size_t b = 0; b < train_batches.size(); ++b) {
      const auto& tb = train_batches[b];
      const auto& vb = val_batches[b % val_batches.size()];
      const auto losses =
          search_step(state, space, data.batch(tb), data.targets(tb), data.batch(vb), data.targets(vb), cfg);
      total += losses.train * static_cast<double>(tb.size());
    }
    EpochRecord rec{epoch, total / static_cast<double>(train.size()),
                    evaluate_supernet(state, space, data, val_items)};
    state.history.push_back(rec);
    state.epoch = epoch;
    if (options.on_epoch) options.on_epoch(rec);
    if (!ckpt.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      write_checkpoint(ckpt, state, options.config_hash);
    }
  }

  SearchOutcome out;
  out.arch = state.arch;
  out.embedding = state.embedding;
  out.initial_val_loss = state.initial_val_loss;
  out.history = state.history;
  std::tie(out.genotype.normal, out.genotype.reduce) = derive_genotype(state.arch, options.supernet);
  out.genotype.embedding.clusterings = space.clusterings();
  out.genotype.embedding.orders = derive_embedding(space, state.embedding);
  return out;
}

// ---------------------------------------------------------------- retraining

TrainOutcome train_derived(const Genotype& genotype, const SupernetConfig& net_cfg, const DemandPanel& cleaned,
                           const FoldSplit& fold, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  std::vector<Index> fit = fold.train;
  fit.insert(fit.end(), fold.validation.begin(), fold.validation.end());
  std::sort(fit.begin(), fit.end());
  if (fit.empty()) throw TooFewItems("fold " + std::to_string(fold.fold) + " has no training items");
  if (fold.test.empty()) throw TooFewItems("fold " + std::to_string(fold.fold) + " has no test items");

  const PreparedData data = prepare_data(cleaned, fit);
  const auto& clusterings = genotype.embedding.clusterings;
  for (VoxelAxis a : kVoxelAxes) {
    const auto ai = static_cast<std::size_t>(a);
    if (clusterings[ai].member_count() != data.voxel_shape[ai + 1]) {
      throw ShapeMismatch("genotype clustering along '" + axis_name(a) + "' has " +
                          std::to_string(clusterings[ai].member_count()) + " members, panel has " +
                          std::to_string(data.voxel_shape[ai + 1]));
    }
  }
  const CandidateMappingSpace space(clusterings, MappingMode::factorized);
  auto voxels = [&](const std::vector<Index>& items) {
    Tensor raw = data.batch(items);
    const Index per = shape_size(data.voxel_shape);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto seg = static_cast<Index>(i) * per;
      const VoxelImage one(data.voxel_shape, raw.array().segment(seg, per));
      raw.array().segment(seg, per) = voxelize(one, space, genotype.embedding.orders).array();
    }
    return raw;
  };

  Network net(net_cfg, data.voxel_shape, genotype);
  SgdMomentum opt(cfg.lr, cfg.momentum, cfg.weight_decay, cfg.grad_clip);
  TrainOutcome out;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = fit;
    Rng rng = substream(cfg.seed, "training", static_cast<std::uint64_t>(epoch));
    shuffle(order, rng);
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs);
    opt.set_lr(cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(3.141592653589793 * progress)));
    double total = 0.0;
    for (const auto& batch : split_batches(order, cfg.batch_size)) {
      auto loss = ag::mse_loss(net.forward(ag::constant(voxels(batch)), true), data.targets(batch));
      check_finite(loss->value[0], "training", epoch);
      total += loss->value[0] * static_cast<double>(batch.size());
      ag::backward(loss);
      opt.step(net.state().weights);
    }
    out.history.push_back({epoch, total / static_cast<double>(order.size()), 0.0});
  }

  ag::NoGradGuard guard;
  const auto pred = net.forward(ag::constant(voxels(fold.test)), false);
  auto& r = out.result;
  r.model = kDerivedModelId;
  r.fold = fold.fold;
  r.actual.resize(static_cast<Index>(fold.test.size()));
  r.forecast.resize(r.actual.size());
  for (std::size_t i = 0; i < fold.test.size(); ++i) {
    r.items.push_back(cleaned.items()[static_cast<std::size_t>(fold.test[i])]);
    r.actual[static_cast<Index>(i)] = cleaned.forecast_target(fold.test[i]).value();
    r.forecast[static_cast<Index>(i)] = data.scaler.inverse(pred->value[static_cast<Index>(i)]);
  }
  if (!r.forecast.allFinite()) throw NonFiniteLoss("derived model produced non-finite forecasts");
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------- gradient check

double gradient_check(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& point,
                      const Eigen::VectorXd& grad, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidEpsilon("finite-difference step must be > 0");
  if (grad.size() != point.size()) throw LengthMismatch("gradient and point differ in length");
  double worst = 0.0;
  Eigen::VectorXd x = point;
  for (Index i = 0; i < point.size(); ++i) {
    x[i] = point[i] + eps;
    const double up = f(x);
    x[i] = point[i] - eps;
    const double down = f(x);
    x[i] = point[i];
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
  }
  return worst;
}

double gradient_check(const std::function<double(const Eigen::VectorXd&)>& f,
                      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_fn,
                      const Eigen::VectorXd& point, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidEpsilon("finite-difference step must be > 0");
  return gradient_check(f, point, grad_fn(point), eps);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'V', 'X', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put(std::vector<double>& blob, const double* p, Index n) { blob.insert(blob.end(), p, p + n); }

}  // namespace

void write_checkpoint(const std::string& path, SearchState& state, std::uint64_t config_hash) {
  static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian doubles");
  auto& ms = state.net.state();
  auto& vel = state.weight_opt.buffers();
  nlohmann::json h;
  h["version"] = kCheckpointVersion;
  h["config_hash"] = config_hash;
  h["epoch"] = state.epoch;
  h["steps"] = state.steps;
  h["noise_applied"] = state.noise_applied;
  h["initial_val_loss"] = state.initial_val_loss;
  h["history"] = nlohmann::json::array();
  for (const auto& r : state.history) h["history"].push_back({r.epoch, r.train_loss, r.val_loss});
  h["adam_count"] = state.arch_opt.count();
  h["has_velocity"] = !vel.empty();
  h["has_moments"] = !state.arch_opt.first().empty();

  std::vector<double> blob;
  for (const auto& w : ms.weights) put(blob, w->value.data(), w->value.size());
  for (const auto& v : vel) put(blob, v.data(), v.size());
  for (const auto* bn : ms.norms) {
    put(blob, bn->running_mean.data(), bn->running_mean.size());
    put(blob, bn->running_var.data(), bn->running_var.size());
  }
  for (const auto& v : state.arch_vectors()) put(blob, v.data(), v.size());
  for (const auto& m : state.arch_opt.first()) put(blob, m.data(), m.size());
  for (const auto& m : state.arch_opt.second()) put(blob, m.data(), m.size());
  h["values"] = blob.size();

  const std::string header = h.dump();
  std::string bytes(kMagic, sizeof kMagic);
  auto append_u64 = [&](std::uint64_t v) { bytes.append(reinterpret_cast<const char*>(&v), sizeof v); };
  append_u64(kCheckpointVersion);
  append_u64(header.size());
  bytes += header;
  bytes.append(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(double));
  io::write_text_atomic(path, bytes);
}

void read_checkpoint(const std::string& path, SearchState& state, std::uint64_t config_hash) {
  const std::string bytes = io::read_text(path);
  auto fail = [&](const std::string& why) { throw IoError("checkpoint '" + path + "': " + why); };
  std::size_t at = 0;
  auto take = [&](std::size_t n) {
    if (at + n > bytes.size()) fail("truncated");
    const char* p = bytes.data() + at;
    at += n;
    return p;
  };
  if (std::memcmp(take(sizeof kMagic), kMagic, sizeof kMagic) != 0) fail("bad magic");
  std::uint64_t version = 0, header_len = 0;
  std::memcpy(&version, take(8), 8);
  std::memcpy(&header_len, take(8), 8);
  if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(std::string(take(header_len), header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad header: ") + e.what());
  }
  if (h.at("config_hash").get<std::uint64_t>() != config_hash) {
    throw ConfigError("checkpoint '" + path + "' was written under a different configuration");
  }
  const auto count = h.at("values").get<std::size_t>();
  if (bytes.size() - at != count * sizeof(double)) fail("payload size mismatch");
  std::vector<double> blob(count);
  std::memcpy(blob.data(), bytes.data() + at, count * sizeof(double));

  std::size_t pos = 0;
  auto get = [&](double* dst, Index n) {
    if (pos + static_cast<std::size_t>(n) > blob.size()) throw ShapeMismatch("checkpoint does not match the network");
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(pos), n, dst);
    pos += static_cast<std::size_t>(n);
  };
  auto& ms = state.net.state();
  for (auto& w : ms.weights) get(w->value.data(), w->value.size());
  auto& vel = state.weight_opt.buffers();
  vel.clear();
  if (h.at("has_velocity").get<bool>()) {
    for (const auto& w : ms.weights) {
      vel.push_back(Tensor::zeros_like(w->value));
      get(vel.back().data(), vel.back().size());
    }
  }
  for (auto* bn : ms.norms) {
    get(bn->running_mean.data(), bn->running_mean.size());
    get(bn->running_var.data(), bn->running_var.size());
  }
  auto vectors = state.arch_vectors();
  for (auto& v : vectors) get(v.data(), v.size());
  state.set_arch_vectors(vectors);
  auto& m1 = state.arch_opt.first();
  auto& m2 = state.arch_opt.second();
  m1.clear();
  m2.clear();
  if (h.at("has_moments").get<bool>()) {
    for (const auto& v : vectors) m1.push_back(Eigen::VectorXd::Zero(v.size()));
    for (const auto& v : vectors) m2.push_back(Eigen::VectorXd::Zero(v.size()));
    for (auto& m : m1) get(m.data(), m.size());
    for (auto& m : m2) get(m.data(), m.size());
  }
  if (pos != blob.size()) throw ShapeMismatch("checkpoint does not match the network");
  state.arch_opt.count() = h.at("adam_count").get<std::int64_t>();
  state.epoch = h.at("epoch").get<Index>();
  state.steps = h.at("steps").get<std::int64_t>();
  state.noise_applied = h.at("noise_applied").get<bool>();
  state.initial_val_loss = h.at("initial_val_loss").get<double>();
  state.history.clear();
  for (const auto& r : h.at("history")) state.history.push_back({r[0].get<Index>(), r[1].get<double>(), r[2].get<double>()});
}

// ---------------------------------------------------------------- history

void write_history_csv(const std::vector<EpochRecord>& history, double initial_val_loss, std::ostream& out) {
  out << "epoch,train_loss,val_loss\n";
  out << "0,," << io::format_double(initial_val_loss) << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.val_loss) << '\n';
  }
}

std::vector<EpochRecord> read_history_csv(std::istream& in, double* initial_val_loss) {
  std::vector<EpochRecord> out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto cells = io::split_csv_line(t);
    if (cells.size() != 3) throw NonNumericCell("history line '" + t + "' needs 3 columns");
    bool ok_e = false, ok_t = false, ok_v = false;
    const double e = io::parse_double(cells[0], ok_e);
    const double v = io::parse_double(cells[2], ok_v);
    if (!ok_e || !ok_v) throw NonNumericCell("history line '" + t + "'");
    if (e == 0.0) {
      if (initial_val_loss) *initial_val_loss = v;
      continue;
    }
    const double tr = io::parse_double(cells[1], ok_t);
    if (!ok_t) throw NonNumericCell("history line '" + t + "'");
    out.push_back({static_cast<Index>(e), tr, v});
  }
  return out;
}

}  // namespace voxnas
