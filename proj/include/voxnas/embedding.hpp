#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "voxnas/autograd.hpp"
#include "voxnas/dataset.hpp"

namespace voxnas {

// Spatial axes of the voxel image, in layout order.
enum class VoxelAxis : int { feature = 0, base = 1, equipment = 2 };
inline constexpr std::array<VoxelAxis, 3> kVoxelAxes{VoxelAxis::feature, VoxelAxis::base,
                                                     VoxelAxis::equipment};
std::string axis_name(VoxelAxis axis);
VoxelAxis axis_from_name(const std::string& name);

struct LevelClustering {
  VoxelAxis axis = VoxelAxis::feature;
  std::vector<Index> assignment;  // member -> cluster; clusters labelled by first member
  Index cluster_count = 1;

  Index member_count() const { return static_cast<Index>(assignment.size()); }
  // Members of each cluster in ascending id order.
  std::vector<std::vector<Index>> members() const;
  nlohmann::json to_json() const;
  static LevelClustering from_json(const nlohmann::json& j);
};

// Plain k-means (Lloyd) with seeded k-means++ starts; best inertia wins.
struct KMeansResult {
  std::vector<Index> labels;
  double inertia = 0.0;
};
KMeansResult kmeans(const Eigen::MatrixXd& points, Index k, std::uint64_t seed, int restarts = 10,
                    int max_iterations = 100);

// Mean silhouette; singleton clusters score 0.
double silhouette_score(const Eigen::MatrixXd& points, const std::vector<Index>& labels);

// Clusters row-profiles, picking the count in [2, max_clusters] with the best
// silhouette (smallest count on ties); max_clusters = 1 gives one cluster.
LevelClustering cluster_profiles(VoxelAxis axis, const Eigen::MatrixXd& profiles,
                                 Index max_clusters, std::uint64_t seed);

// Mean profiles over `items`: feature rows hold the mean value per
// (base, equipment) cell; base/equipment rows hold the mean feature vector.
Eigen::MatrixXd level_profiles(const DemandPanel& panel, VoxelAxis axis,
                               const std::vector<Index>& items);

LevelClustering cluster_levels(const DemandPanel& panel, VoxelAxis axis, Index max_clusters,
                               std::uint64_t seed, const std::vector<Index>& items);

enum class MappingMode { joint, factorized };
std::string mode_name(MappingMode mode);
MappingMode mode_from_name(const std::string& name);

using ClusterOrders = std::array<std::vector<Index>, 3>;  // one cluster order per axis

// All cluster orders per axis (lexicographic, identity first). In joint mode
// a candidate is a triple, indexed mixed-radix with the feature axis most
// significant.
class CandidateMappingSpace {
 public:
  CandidateMappingSpace(std::array<LevelClustering, 3> clusterings, MappingMode mode);

  MappingMode mode() const { return mode_; }
  const LevelClustering& clustering(VoxelAxis a) const { return clusterings_[static_cast<std::size_t>(a)]; }
  const std::array<LevelClustering, 3>& clusterings() const { return clusterings_; }
  const std::vector<std::vector<Index>>& orders(VoxelAxis a) const { return orders_[static_cast<std::size_t>(a)]; }
  Index axis_size(VoxelAxis a) const { return static_cast<Index>(orders(a).size()); }

  Index joint_size() const;
  // Number of embedding logits: joint size, or the per-axis sum.
  Index parameter_count() const;
  std::array<Index, 3> decode_joint(Index candidate) const;

  // Position -> member permutation laid out by cluster blocks in `order`.
  std::vector<Index> member_permutation(VoxelAxis a, const std::vector<Index>& order) const;
  std::vector<Index> member_permutation(VoxelAxis a, Index order_index) const;

 private:
  std::array<LevelClustering, 3> clusterings_;
  MappingMode mode_;
  std::array<std::vector<std::vector<Index>>, 3> orders_;
};

inline constexpr Index kDefaultJointCap = 2000;
inline constexpr Index kMaxClustersPerAxis = 8;

CandidateMappingSpace enumerate_candidates(std::array<LevelClustering, 3> clusterings,
                                           MappingMode mode, Index joint_cap = kDefaultJointCap);

// Voxel image of one item, shape (years, features, bases, equipment).
using VoxelImage = Tensor;

// Voxel with every spatial axis in plain member-id order.
VoxelImage raw_voxel(const DemandPanel& panel, Index item);
// Gathers along each spatial axis: out[y, i, j, k] = raw[y, pf[i], pb[j], pe[k]].
VoxelImage permute_voxel(const VoxelImage& raw, const std::array<std::vector<Index>, 3>& perms);
VoxelImage voxelize(const DemandPanel& panel, Index item, const CandidateMappingSpace& space,
                    const ClusterOrders& orders);
VoxelImage voxelize(const VoxelImage& raw, const CandidateMappingSpace& space,
                    const ClusterOrders& orders);

struct EmbeddingParams {
  MappingMode mode = MappingMode::factorized;
  std::vector<Eigen::VectorXd> logits;  // one (joint) or three (factorized) vectors

  static EmbeddingParams zeros(const CandidateMappingSpace& space);
  void validate(const CandidateMappingSpace& space) const;
};

// Differentiable mixture over candidate mappings. `raw` is a batch of raw
// voxels (N, years, features, bases, equipment); `logits` holds one Var per
// logit vector of the parameter layout.
ag::Var mixed_embed(const ag::Var& raw, const CandidateMappingSpace& space,
                    const std::vector<ag::Var>& logits);
VoxelImage mixed_embed(const VoxelImage& raw, const CandidateMappingSpace& space,
                       const EmbeddingParams& params);

// First index of the largest entry.
Index argmax_lowest(const Eigen::VectorXd& v);
ClusterOrders derive_embedding(const CandidateMappingSpace& space, const EmbeddingParams& params);

// Clusterings plus chosen orders; enough to rebuild voxels without searching.
struct EmbeddingGenotype {
  std::array<LevelClustering, 3> clusterings;
  ClusterOrders orders;
  nlohmann::json to_json() const;
  static EmbeddingGenotype from_json(const nlohmann::json& j);
};

}  // namespace voxnas
