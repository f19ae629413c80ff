#pragma once

#include <array>
#include <vector>

#include "voxnas/autograd.hpp"

// Differentiable tensor operations on (batch, channel, depth, height, width)
// volumes, plus the small vector/matrix ops the search needs.
namespace voxnas::ag {

struct Conv3dOptions {
  Index stride = 1;
  std::array<Index, 3> padding{0, 0, 0};
  Index dilation = 1;
  Index groups = 1;
};

// Output extent of a strided window along one axis.
inline Index conv_extent(Index in, Index kernel, Index stride, Index pad, Index dilation) {
  return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}

Var add(const Var& a, const Var& b);
Var add_n(const std::vector<Var>& xs);
Var scale(const Var& x, double factor);
Var relu(const Var& x);

// Softmax over a 1-D logit vector.
Var softmax(const Var& logits);
// sum_k weights[k] * xs[k]; a null entry in xs stands for an all-zero tensor.
Var weighted_sum(const Var& weights, const std::vector<Var>& xs);

// weight shape: (out_channels, in_channels / groups, kd, kh, kw); no bias.
Var conv3d(const Var& x, const Var& weight, const Conv3dOptions& opt);

// Cubic windows; average pooling divides by the in-bounds count only.
Var avg_pool3d(const Var& x, Index kernel, Index stride, Index padding);
Var max_pool3d(const Var& x, Index kernel, Index stride, Index padding);

// Per-channel normalization without affine terms. In training mode the batch
// statistics are used (and returned through the out-params); otherwise the
// given running statistics are applied as a fixed affine map.
struct BatchStats {
  Eigen::ArrayXd mean;
  Eigen::ArrayXd var;  // biased
  Index count = 0;
};
Var batch_norm(const Var& x, bool training, const Eigen::ArrayXd& running_mean,
               const Eigen::ArrayXd& running_var, double eps, BatchStats* batch_stats);

Var concat_channels(const std::vector<Var>& xs);
// (N, C, D, H, W) -> (N, C)
Var global_avg_pool(const Var& x);
// x: (N, C), weight: (out, C), bias: (out) -> (N, out)
Var linear(const Var& x, const Var& weight, const Var& bias);
// Mean squared error against a constant target of the same size.
Var mse_loss(const Var& prediction, const Tensor& target);
// Inner product with a constant tensor (test losses).
Var dot_constant(const Var& x, const Tensor& coefficients);

// Applies a square matrix along one axis: out[.., i, ..] = sum_j m(i, j) x[.., j, ..].
Var axis_mix(const Var& x, const Var& matrix, std::size_t axis);
// Soft permutation matrix sum_p weights[p] * P_p, with P_p(i, perms[p][i]) = 1.
Var permutation_mixture(const Var& weights, const std::vector<std::vector<Index>>& perms);

}  // namespace voxnas::ag
