#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxnas/dataset.hpp"
#include "voxnas/embedding.hpp"
#include "voxnas/evaluation.hpp"
#include "voxnas/supernet.hpp"

namespace voxnas {

struct BilevelConfig {
  Index epochs = 10;
  Index batch_size = 16;
  // weights: momentum SGD on the train loss
  double weight_lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double grad_clip = 5.0;  // global norm; 0 disables
  // architecture (embedding and cell logits): Adam on the validation loss
  double arch_lr = 3e-3;
  double arch_beta1 = 0.5;
  double arch_beta2 = 0.999;
  double arch_weight_decay = 1e-3;
  double init_noise = 1e-3;
  Index checkpoint_every = 1;  // epochs; 0 disables
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static BilevelConfig from_json(const nlohmann::json& j, BilevelConfig base);
  static BilevelConfig from_json(const nlohmann::json& j);
};

struct EmbeddingConfig {
  std::array<Index, 3> max_clusters{5, 4, 3};  // feature, base, equipment
  MappingMode mode = MappingMode::factorized;
  Index joint_cap = kDefaultJointCap;

  void validate() const;
  nlohmann::json to_json() const;
  static EmbeddingConfig from_json(const nlohmann::json& j, EmbeddingConfig base);
  static EmbeddingConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  Index epochs = 50;
  Index batch_size = 16;
  double lr = 0.025;  // cosine-annealed per epoch down to lr_min
  double lr_min = 0.001;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double grad_clip = 5.0;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
};

// log1p followed by a z-score fitted on training items.
struct TargetScaler {
  double mean = 0.0, std = 1.0;
  static TargetScaler fit(const std::vector<double>& demands);
  double forward(double demand) const { return (std::log1p(demand) - mean) / std; }
  // De-normalized and clamped at zero.
  double inverse(double z) const { return std::max(0.0, std::expm1(z * std + mean)); }
};

// Features normalized on the fit items; raw voxels stacked per item.
struct PreparedData {
  DemandPanel normalized;
  TargetScaler scaler;
  Shape voxel_shape;  // (years, features, bases, equipment)

  VoxelImage raw(Index item) const { return raw_voxel(normalized, item); }
  // (N, years, features, bases, equipment) batch of raw voxels.
  Tensor batch(const std::vector<Index>& items) const;
  // Scaled targets for a batch, shape (N, 1).
  Tensor targets(const std::vector<Index>& items) const;
};
PreparedData prepare_data(const DemandPanel& cleaned, const std::vector<Index>& fit_items);

// Momentum gradient descent with L2 decay and global-norm clipping.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay, double clip)
      : lr_(lr), momentum_(momentum), decay_(weight_decay), clip_(clip) {}
  void step(const std::vector<ag::Var>& params);
  void set_lr(double lr) { lr_ = lr; }
  std::vector<Tensor>& buffers() { return velocity_; }

 private:
  double lr_, momentum_, decay_, clip_;
  std::vector<Tensor> velocity_;
};

// Adam over a list of logit vectors.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double weight_decay, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), decay_(weight_decay), eps_(eps) {}
  void step(std::vector<Eigen::VectorXd*>& params, const std::vector<Eigen::VectorXd>& grads);
  std::vector<Eigen::VectorXd>& first() { return m_; }
  std::vector<Eigen::VectorXd>& second() { return v_; }
  std::int64_t& count() { return t_; }

 private:
  double lr_, beta1_, beta2_, decay_, eps_;
  std::vector<Eigen::VectorXd> m_, v_;
  std::int64_t t_ = 0;
};

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

// Everything a search run mutates.
struct SearchState {
  Network net;
  ArchParams arch;
  EmbeddingParams embedding;
  SgdMomentum weight_opt;
  Adam arch_opt;
  Index epoch = 0;
  std::int64_t steps = 0;
  bool noise_applied = false;
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> history;

  SearchState(const SupernetConfig& net_cfg, const Shape& voxel_shape, const CandidateMappingSpace& space,
              const BilevelConfig& cfg);
  // Arch logits in a fixed order: embedding vectors, normal rows, reduce rows.
  std::vector<Eigen::VectorXd> arch_vectors() const;
  void set_arch_vectors(const std::vector<Eigen::VectorXd>& v);
  bool all_finite() const;
};

// Mean squared error of the supernet on a batch. The returned loss is a
// graph node when recording is on.
ag::Var supernet_loss(SearchState& state, const CandidateMappingSpace& space, const Tensor& raw_batch,
                      const Tensor& target, std::vector<ag::Var>* arch_vars, bool training);

// Loss over a whole item set in batch-statistics mode; running statistics
// are left untouched.
double evaluate_supernet(SearchState& state, const CandidateMappingSpace& space, const PreparedData& data,
                         const std::vector<Index>& items);

struct StepLosses {
  double train = 0.0, val = 0.0;
};

// One first-order bilevel step: weights on the train batch, then every
// architecture logit on the validation batch with the weights held fixed.
StepLosses search_step(SearchState& state, const CandidateMappingSpace& space, const Tensor& train_x,
                       const Tensor& train_y, const Tensor& val_x, const Tensor& val_y, const BilevelConfig& cfg);

struct SearchOutcome {
  Genotype genotype;
  ArchParams arch;
  EmbeddingParams embedding;
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

struct SearchOptions {
  SupernetConfig supernet;
  BilevelConfig bilevel;
  EmbeddingConfig embedding;
  std::string checkpoint_dir;  // empty: no checkpoints
  bool resume = true;          // pick up the latest checkpoint in checkpoint_dir
  std::uint64_t config_hash = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

std::array<LevelClustering, 3> cluster_axes(const DemandPanel& normalized, const std::vector<Index>& items,
                                            const EmbeddingConfig& cfg, std::uint64_t seed);

// cluster -> enumerate -> bilevel epochs -> derive. `cleaned` is imputed,
// not yet normalized.
SearchOutcome run_search(const DemandPanel& cleaned, const FoldSplit& fold, const SearchOptions& options);

struct TrainOutcome {
  ForecastResult result;
  std::vector<EpochRecord> history;  // val_loss unused (0)
};

inline const char* kDerivedModelId = "voxnas";

// Discrete network from the genotype, trained on train plus validation items.
TrainOutcome train_derived(const Genotype& genotype, const SupernetConfig& net_cfg, const DemandPanel& cleaned,
                           const FoldSplit& fold, const TrainConfig& cfg);

// Max component-wise relative error between `grad` and central differences,
// |a - n| / max(|a|, |n|, 1e-8).
double gradient_check(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& point,
                      const Eigen::VectorXd& grad, double eps);
// Same, with the gradient taken from `grad_fn`.
double gradient_check(const std::function<double(const Eigen::VectorXd&)>& f,
                      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_fn,
                      const Eigen::VectorXd& point, double eps);

// Checkpoint: magic, version, JSON header, raw little-endian doubles.
void write_checkpoint(const std::string& path, SearchState& state, std::uint64_t config_hash);
void read_checkpoint(const std::string& path, SearchState& state, std::uint64_t config_hash);

void write_history_csv(const std::vector<EpochRecord>& history, double initial_val_loss, std::ostream& out);
std::vector<EpochRecord> read_history_csv(std::istream& in, double* initial_val_loss = nullptr);

}  // namespace voxnas
