#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "voxnas/tensor.hpp"

namespace voxnas::ag {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in a reverse-mode tape. Gradients accumulate into `grad`, which
// stays empty until something flows into it.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) {
      grad = Tensor::zeros_like(value);
    }
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
  void zero_grad() { grad = Tensor(); }
};

// Leaf that receives gradients (weights, architecture logits).
Var parameter(Tensor value);
// Leaf that never receives gradients.
Var constant(Tensor value);

// Creates an interior node; records parents and the backward rule only when
// recording is enabled and some parent needs a gradient.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

// Runs backward from a scalar root, seeding d(root)/d(root) = 1.
void backward(const Var& root);

bool grad_enabled();

// RAII guard that disables graph recording (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace voxnas::ag
