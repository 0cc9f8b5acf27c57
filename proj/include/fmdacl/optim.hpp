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

#include <cstdint>
#include <vector>

#include "fmdacl/models.hpp"

namespace fmdacl::optim {

struct ParamGroupConfig {
  std::vector<models::Parameter*> params;
  double lr = 1e-3;
  double weight_decay = 0.0;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class AdamW {
 public:
  AdamW(std::vector<ParamGroupConfig> groups, AdamWOptions opt = {});

  /// One update using the gradients currently stored on the parameters.
  /// `lr_scale` multiplies every group's rate (schedules).
  void step(double lr_scale = 1.0);
  void zero_grad();

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const std::vector<ParamGroupConfig>& groups() const { return groups_; }
  void set_lr(std::size_t group, double lr) { groups_.at(group).lr = lr; }
  /// First/second moments, one per parameter in group order.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const AdamWOptions& options() const { return opt_; }

 private:
  std::vector<ParamGroupConfig> groups_;
  AdamWOptions opt_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(const std::vector<models::Parameter*>& params, double max_norm);

}  // namespace fmdacl::optim
