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
#include <memory>
#include <utility>

#include "fmdacl/models.hpp"

// Exponential-moving-average teacher of the convolutional student.
namespace fmdacl::teacher {

inline constexpr double kDefaultEmaDecay = 0.99;

struct EmaState {
  /// Student architecture holding the shadow parameters.
  std::unique_ptr<models::Network> shadow;
  double decay = kDefaultEmaDecay;
  std::int64_t step = 0;
};

/// Shadow = exact copy of the student; step = 0.
EmaState ema_init(const models::Network& student, double decay = kDefaultEmaDecay);

/// shadow <- decay * shadow + (1 - decay) * student for every learnable
/// parameter; normalization running statistics are copied. Throws when the
/// student's parameter shapes no longer match the shadow.
void ema_update(EmaState& state, const models::Network& student);

/// Evaluation-mode forward with the shadow parameters; no graph is recorded.
std::pair<Tensor, Tensor> teacher_predict(EmaState& state, const Tensor& x);

}  // namespace fmdacl::teacher
