#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fpemb/tensor.hpp"

namespace fpemb {

// Reverse-mode autodiff tape node. Graphs are built eagerly per forward pass;
// parameters are long-lived leaves shared across passes.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
  void accumulate(Tensor&& g);
  void clear_grad() {
    has_grad = false;
    grad = Tensor();
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->has_grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void clear_grad() { node_->clear_grad(); }

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

  double scalar() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);

}  // namespace fpemb
