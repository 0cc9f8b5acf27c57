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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fmdacl/teacher.hpp"
#include "oracles.hpp"

using namespace fmdacl;

namespace {

std::unique_ptr<models::Network> small_unet(std::uint64_t seed) {
  models::BackboneSpec s;
  s.width = 8;
  s.depth = 2;
  return models::build_network(s, seed);
}

void fill_params(models::Network& n, double v) {
  for (auto& p : n.parameters()) p.var.mutable_value().fill(v);
}

}  // namespace

TEST(Ema, InitCopiesStudent) {
  auto student = small_unet(1);
  auto state = teacher::ema_init(*student);
  EXPECT_EQ(state.step, 0);
  EXPECT_EQ(state.shadow->parameters().size(), student->parameters().size());
  EXPECT_EQ(state.shadow->parameter_count(), student->parameter_count());
  Rng rng(3);
  const Tensor x = oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1);
  const auto [seg, cls] = teacher::teacher_predict(state, x);
  ag::NoGradGuard g;
  const auto out = student->forward(x, false);
  EXPECT_LT(oracle::max_relative_error(seg, out.seg.value(), 1.0), 1e-6);
  EXPECT_LT(oracle::max_relative_error(cls, out.cls.value(), 1.0), 1e-6);
  auto again = teacher::ema_init(*student);
  for (std::size_t i = 0; i < student->parameters().size(); ++i) {
    EXPECT_EQ(again.shadow->parameters()[i].var.value().storage(), state.shadow->parameters()[i].var.value().storage());
  }
}

TEST(Ema, SingleUpdateArithmetic) {
  auto student = small_unet(1);
  fill_params(*student, 0.0);
  auto state = teacher::ema_init(*student, 0.99);
  fill_params(*student, 1.0);
  teacher::ema_update(state, *student);
  EXPECT_EQ(state.step, 1);
  for (const auto& p : state.shadow->parameters()) {
    for (double v : p.var.value().values()) EXPECT_NEAR(v, 0.01, 1e-15);
  }
}

TEST(Ema, DecayOneFreezesShadow) {
  auto student = small_unet(1);
  auto state = teacher::ema_init(*student, 1.0);
  const auto before = state.shadow->parameters()[0].var.value().storage();
  fill_params(*student, 7.0);
  teacher::ema_update(state, *student);
  EXPECT_EQ(state.shadow->parameters()[0].var.value().storage(), before);
}

TEST(Ema, GeometricClosedForm) {
  auto student = small_unet(2);
  auto state = teacher::ema_init(*student, 0.99);
  std::vector<Tensor> s0;
  for (const auto& p : state.shadow->parameters()) s0.push_back(p.var.value());
  fill_params(*student, 0.3);
  for (int i = 0; i < 10; ++i) teacher::ema_update(state, *student);
  const double k = std::pow(0.99, 10);
  for (std::size_t i = 0; i < s0.size(); ++i) {
    const Tensor& sh = state.shadow->parameters()[i].var.value();
    for (std::size_t j = 0; j < sh.numel(); ++j) EXPECT_NEAR(sh[j], 0.3 + (s0[i][j] - 0.3) * k, 1e-10);
  }
}

TEST(Ema, ShadowStaysInsideMonotoneHistoryEnvelope) {
  auto student = small_unet(3);
  auto state = teacher::ema_init(*student, 0.9);
  std::vector<Tensor> lo, hi;
  for (const auto& p : student->parameters()) {
    lo.push_back(p.var.value());
    hi.push_back(p.var.value());
  }
  Rng rng(5);
  for (int step = 0; step < 15; ++step) {
    for (std::size_t i = 0; i < student->parameters().size(); ++i) {
      Tensor& w = student->parameters()[i].var.mutable_value();
      for (std::size_t j = 0; j < w.numel(); ++j) {
        w[j] += rng.uniform(0, 0.1);  // monotone increasing history
        hi[i][j] = std::max(hi[i][j], w[j]);
      }
    }
    teacher::ema_update(state, *student);
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    const Tensor& sh = state.shadow->parameters()[i].var.value();
    for (std::size_t j = 0; j < sh.numel(); ++j) {
      EXPECT_GE(sh[j], lo[i][j] - 1e-12);
      EXPECT_LE(sh[j], hi[i][j] + 1e-12);
    }
  }
}

TEST(Ema, UpdateIsElementwiseAndOrderIndependent) {
  // Updating via the library equals an elementwise update of each tensor
  // performed in reverse parameter order.
  auto student = small_unet(4);
  auto state = teacher::ema_init(*student, 0.95);
  Rng rng(6);
  for (auto& p : student->parameters()) {
    for (double& v : p.var.mutable_value().values()) v += rng.uniform(-1, 1);
  }
  std::vector<Tensor> expected;
  for (const auto& p : state.shadow->parameters()) expected.push_back(p.var.value());
  for (std::size_t i = expected.size(); i-- > 0;) {
    const Tensor& st = student->parameters()[i].var.value();
    for (std::size_t j = 0; j < st.numel(); ++j) expected[i][j] = 0.95 * expected[i][j] + (1 - 0.95) * st[j];
  }
  teacher::ema_update(state, *student);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(state.shadow->parameters()[i].var.value().storage(), expected[i].storage());
  }
}

TEST(Ema, RunningStatisticsAreCopied) {
  auto student = small_unet(5);
  auto state = teacher::ema_init(*student);
  Rng rng(1);
  student->forward(oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1), true);
  teacher::ema_update(state, *student);
  for (std::size_t i = 0; i < student->buffers().size(); ++i) {
    EXPECT_EQ(state.shadow->buffers()[i].value.storage(), student->buffers()[i].value.storage());
  }
}

TEST(Ema, ShapeDriftRejected) {
  auto student = small_unet(1);
  auto state = teacher::ema_init(*student);
  models::BackboneSpec wider;
  wider.width = 16;
  wider.depth = 2;
  auto other = models::build_network(wider, 0);
  EXPECT_THROW(teacher::ema_update(state, *other), std::logic_error);
  models::BackboneSpec deeper;
  deeper.width = 8;
  deeper.depth = 3;
  EXPECT_THROW(teacher::ema_update(state, *models::build_network(deeper, 0)), std::logic_error);
}

TEST(Ema, PredictionsDetachedAndDeterministic) {
  auto student = small_unet(6);
  auto state = teacher::ema_init(*student);
  Rng rng(2);
  const Tensor x = oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1);
  const auto a = teacher::teacher_predict(state, x);
  const auto b = teacher::teacher_predict(state, x);
  EXPECT_EQ(a.first.storage(), b.first.storage());
  EXPECT_EQ(a.second.storage(), b.second.storage());
  for (const auto& p : state.shadow->parameters()) EXPECT_FALSE(p.var.has_grad());
}
