// Copyright 2026 The fmdacl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fmdacl/tensor.hpp"

// Minimal reverse-mode differentiation over Tensor values. Every op records a
// closure computing the vector-Jacobian product for its parents; backward()
// replays them in reverse topological order.
namespace fmdacl::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  /// Gradient buffer, zero-initialized on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  /// Direct write access, for optimizers and parameter loading. Not recorded.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient after backward(); zero tensor of matching shape when none flowed.
  Tensor grad() const;
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 for a one-element value and propagates.
  void backward() const;
  /// Same value, no graph linkage.
  Var detach() const;
  /// Scalar value of a one-element tensor.
  double item() const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Var from_node(std::shared_ptr<Node> n);

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. All parents are kept in argument order so backward
/// closures can index them; when no parent requires grad (or recording is off)
/// the result is a constant with no parents.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn,
                const char* op);

// Elementwise and reduction primitives.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, const Tensor& c);
/// Sum of all elements as a one-element tensor.
Var sum(const Var& a);
Var mean(const Var& a);
/// Σ w_i · s_i over one-element tensors.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

Var slice_batch(const Var& a, int begin, int end);
Var concat_batch(const std::vector<Var>& parts);
Var reshape(const Var& a, Shape shape);

}  // namespace fmdacl::ag
