#include "voxnas/autograd.hpp"

#include <unordered_set>

namespace voxnas::ag {

namespace {
thread_local bool g_record = true;
}

bool grad_enabled() { return g_record; }

NoGradGuard::NoGradGuard() : previous_(g_record) { g_record = false; }
NoGradGuard::~NoGradGuard() { g_record = previous_; }

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!g_record) return n;
  bool needs = false;
  for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  if (!needs) return n;
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward = std::move(backward);
  return n;
}

void backward(const Var& root) {
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer().array().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

}  // namespace voxnas::ag
