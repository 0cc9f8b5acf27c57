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

#include "fmdacl/teacher.hpp"

#include <stdexcept>

namespace fmdacl::teacher {

EmaState ema_init(const models::Network& student, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1]");
  EmaState s;
  s.shadow = student.clone();
  s.decay = decay;
  s.step = 0;
  return s;
}

void ema_update(EmaState& state, const models::Network& student) {
  auto& shadow_params = state.shadow->parameters();
  const auto& student_params = student.parameters();
  if (shadow_params.size() != student_params.size()) {
    throw std::logic_error("EMA update: student has " + std::to_string(student_params.size()) +
                           " parameters, shadow has " + std::to_string(shadow_params.size()));
  }
  const double a = state.decay;
  for (std::size_t i = 0; i < shadow_params.size(); ++i) {
    Tensor& sh = shadow_params[i].var.mutable_value();
    const Tensor& st = student_params[i].var.value();
    if (sh.shape() != st.shape()) {
      throw std::logic_error("EMA update: shape drift in " + student_params[i].name + " " + shape_str(st.shape()) +
                             " vs shadow " + shape_str(sh.shape()));
    }
    for (std::size_t k = 0; k < sh.numel(); ++k) sh[k] = a * sh[k] + (1.0 - a) * st[k];
  }
  auto& shadow_bufs = state.shadow->buffers();
  const auto& student_bufs = student.buffers();
  if (shadow_bufs.size() != student_bufs.size()) throw std::logic_error("EMA update: buffer count drift");
  for (std::size_t i = 0; i < shadow_bufs.size(); ++i) shadow_bufs[i].value = student_bufs[i].value;
  ++state.step;
}

std::pair<Tensor, Tensor> teacher_predict(EmaState& state, const Tensor& x) {
  if (!state.shadow) throw std::logic_error("teacher_predict on an uninitialized EMA state");
  ag::NoGradGuard guard;
  auto out = state.shadow->forward(x, /*train=*/false);
  return {out.seg.value(), out.cls.value()};
}

}  // namespace fmdacl::teacher
