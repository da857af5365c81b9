// src/autograd.cc

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

#include "sed/autograd.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace sed::ad {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::uint64_t next_seq() { return g_next_seq.fetch_add(1); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->seq = next_seq();
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->seq = next_seq();
  return Var(std::move(node));
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

double Var::item() const {
  if (node_->value.size() != 1) {
    throw ShapeError("item() on non-scalar tensor " +
                     shape_str(node_->value.shape()));
  }
  return node_->value[0];
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var record(Tensor value, std::vector<Var> parents,
           std::function<void(Node&)> backward, std::string_view op) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->seq = next_seq();
  bool needs = false;
  if (t_grad_enabled) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (Var& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  loss.node()->grad_buffer()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior gradients are not needed after the sweep.
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad = Tensor();
  }
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric,
                          double floor) {
  require_shape(numeric, analytic.shape(), "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double a = analytic[i];
    double n = numeric[i];
    double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f,
                        const Tensor& point, double eps) {
  Tensor x = point;
  Tensor g(point.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + eps;
    double fp = f(x);
    x[i] = orig - eps;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& point,
                  double eps) {
  Var x = Var::parameter(point);
  Var y = f(x);
  backward(y);
  Tensor analytic = x.grad();
  auto eval = [&](const Tensor& p) {
    NoGradGuard guard;
    return f(Var::constant(p)).item();
  };
  return max_relative_error(analytic, numeric_gradient(eval, point, eps));
}

double grad_check_leaves(const std::function<Var()>& loss,
                         std::vector<Var> leaves, double eps,
                         std::size_t max_entries) {
  for (Var& v : leaves) v.zero_grad();
  backward(loss());
  double worst = 0.0;
  for (Var& leaf : leaves) {
    Tensor analytic = leaf.grad();
    Tensor& value = leaf.mutable_value();
    std::size_t n = value.size();
    std::size_t stride = 1;
    if (max_entries != 0 && n > max_entries) stride = n / max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      double orig = value[i];
      double fp, fm;
      {
        NoGradGuard guard;
        value[i] = orig + eps;
        fp = loss().item();
        value[i] = orig - eps;
        fm = loss().item();
        value[i] = orig;
      }
      double num = (fp - fm) / (2.0 * eps);
      double a = analytic[i];
      double denom = std::max({std::abs(a), std::abs(num), 1e-6});
      worst = std::max(worst, std::abs(a - num) / denom);
    }
    leaf.zero_grad();
  }
  return worst;
}

}  // namespace sed::ad
