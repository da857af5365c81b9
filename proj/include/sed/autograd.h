// sed/autograd.h

// Copyright 2026 The noisysed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over Tensor values.
//
// Every primitive records a Node holding its output value, its parents and a
// closure that pushes the node's gradient into the parents. Nodes carry a
// sequence number taken at recording time; backward() walks the nodes that
// are reachable from the loss in decreasing sequence order, which is a valid
// reverse topological order because a node is always recorded after its
// parents.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sed/tensor.h"

namespace sed::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

/// Handle to a node in the graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf that never receives gradient.
  static Var constant(Tensor value);
  /// Leaf that accumulates gradient across backward() calls.
  static Var parameter(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Accumulated gradient; a zero tensor when nothing reached this node.
  Tensor grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }
  /// Scalar value; throws unless the tensor has exactly one element.
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records a result node. If recording is disabled or no parent requires
/// grad, the result is a constant and `backward` is dropped. The value is
/// checked for NaN/Inf.
Var record(Tensor value, std::vector<Var> parents,
           std::function<void(Node&)> backward, std::string_view op);

/// Accumulates d(loss)/d(leaf) into every requires-grad node reachable from
/// `loss`. `loss` must be a scalar.
void backward(const Var& loss);

/// Relative error used by the gradient checks:
/// |a - n| / max(|a|, |n|, floor), maximised over elements.
double max_relative_error(const Tensor& analytic, const Tensor& numeric,
                          double floor = 1e-6);

/// Central-difference gradient of a scalar function at `point`.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f,
                        const Tensor& point, double eps = 1e-5);

/// Compares the autodiff gradient of `f` at `point` with central
/// differences and returns the max relative error.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& point,
                  double eps = 1e-5);

/// Gradient check with respect to existing parameter leaves. `loss` rebuilds
/// the graph from scratch on every call. When `max_entries` is nonzero only
/// that many evenly strided entries per leaf are perturbed.
double grad_check_leaves(const std::function<Var()>& loss,
                         std::vector<Var> leaves, double eps = 1e-5,
                         std::size_t max_entries = 0);

}  // namespace sed::ad
