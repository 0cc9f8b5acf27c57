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

#include "fmdacl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fmdacl::optim {

AdamW::AdamW(std::vector<ParamGroupConfig> groups, AdamWOptions opt) : groups_(std::move(groups)), opt_(opt) {
  for (const auto& g : groups_) {
    if (!(g.lr >= 0.0) || !(g.weight_decay >= 0.0)) throw std::invalid_argument("AdamW: negative rate or decay");
    for (const auto* p : g.params) {
      m_.emplace_back(p->var.shape(), 0.0);
      v_.emplace_back(p->var.shape(), 0.0);
    }
  }
}

void AdamW::step(double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  std::size_t idx = 0;
  for (auto& g : groups_) {
    const double lr = g.lr * lr_scale;
    for (auto* p : g.params) {
      Tensor& w = p->var.mutable_value();
      const Tensor grad = p->var.grad();
      Tensor& m = m_[idx];
      Tensor& v = v_[idx];
      ++idx;
      for (std::size_t k = 0; k < w.numel(); ++k) {
        w[k] -= lr * g.weight_decay * w[k];
        m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * grad[k];
        v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * grad[k] * grad[k];
        w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + opt_.eps);
      }
    }
  }
}

void AdamW::zero_grad() {
  for (auto& g : groups_) {
    for (auto* p : g.params) p->var.zero_grad();
  }
}

double clip_grad_norm(const std::vector<models::Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->var.has_grad()) continue;
    for (double g : p->var.node()->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto* p : params) {
      if (!p->var.has_grad()) continue;
      for (double& g : p->var.node()->grad.values()) g *= s;
    }
  }
  return norm;
}

}  // namespace fmdacl::optim
