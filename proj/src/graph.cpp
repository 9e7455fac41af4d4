#include "fpemb/graph.hpp"

#include <unordered_set>

#include "fpemb/common.hpp"

namespace fpemb {

void Node::accumulate(const Tensor& g) {
  if (!has_grad) {
    grad = g;
    has_grad = true;
  } else {
    grad.array() += g.array();
  }
}

void Node::accumulate(Tensor&& g) {
  if (!has_grad) {
    grad = std::move(g);
    has_grad = true;
  } else {
    grad.array() += g.array();
  }
}

Var::Var(Tensor v, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->value = std::move(v);
  node_->requires_grad = requires_grad;
}

void backward(const Var& root) {
  FPEMB_CHECK(root.defined() && root.value().size() == 1, ErrorKind::kContract,
              "backward requires a defined scalar root");
  // Iterative post-order DFS to get a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(*node);
  }
}

}  // namespace fpemb
