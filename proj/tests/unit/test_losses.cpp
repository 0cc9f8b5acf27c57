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

#include <cmath>

#include "fmdacl/losses.hpp"
#include "fmdacl/nn_ops.hpp"
#include "oracles.hpp"

using namespace fmdacl;
using ag::Var;

namespace {

const double kLn2 = std::log(2.0);
const double kLn4 = std::log(4.0);

Var probs_of(const Tensor& logits) { return ag::softmax_channels(Var(logits)); }

/// Analytic gradient of a scalar graph w.r.t. x, and its central difference.
std::pair<Tensor, Tensor> gradients(const std::function<Var(const Var&)>& f, const Tensor& x) {
  Var leaf(x, true);
  f(leaf).backward();
  const Tensor analytic = leaf.grad();
  const Tensor numeric = oracle::numeric_gradient(
      [&](const Tensor& t) {
        ag::NoGradGuard g;
        return f(Var(t)).item();
      },
      x);
  return {analytic, numeric};
}

Tensor uniform_probs(int b, int c, int h, int w) { return Tensor({b, c, h, w}, 1.0 / c); }

}  // namespace

TEST(CrossEntropy, OneHotMatchIsZero) {
  Rng rng(1);
  const IndexMask y = oracle::random_mask(2, 3, 3, 4, rng);
  EXPECT_LE(losses::ce_seg(Var(encode_one_hot(y, 4)), y).item(), 1e-7);
}

TEST(CrossEntropy, UniformIsLogC) {
  Rng rng(2);
  const IndexMask y = oracle::random_mask(2, 4, 4, 4, rng);
  EXPECT_NEAR(losses::ce_seg(Var(uniform_probs(2, 4, 4, 4)), y).item(), kLn4, 1e-6);
}

TEST(CrossEntropy, ThreeQuartersOnTruth) {
  IndexMask y(1, 2, 2, 1);
  Tensor p({1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    p[i] = 0.25;
    p[4 + i] = 0.75;
  }
  EXPECT_NEAR(losses::ce_seg(Var(p), y).item(), -std::log(0.75), 1e-9);
}

TEST(CrossEntropy, RejectsClassOutOfRange) {
  IndexMask y(1, 2, 2, 4);
  EXPECT_THROW(losses::ce_seg(Var(uniform_probs(1, 4, 2, 2)), y), std::invalid_argument);
}

TEST(Dice, PerfectOverlap) {
  Rng rng(3);
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  EXPECT_LE(losses::dice_loss(Var(encode_one_hot(y, 3)), y).item(), 1e-5);
}

TEST(Dice, TwoVersusOnePixel) {
  // One class over 4 pixels: prediction [1,1,0,0], target [1,0,0,0].
  const Tensor p({1, 1, 1, 4}, {1, 1, 0, 0});
  const Tensor t({1, 1, 1, 4}, {1, 0, 0, 0});
  EXPECT_NEAR(losses::dice_loss(Var(p), t).item(), 1.0 / 3.0, 1e-4);
}

TEST(Dice, DisjointIsNearOne) {
  const Tensor p({1, 1, 1, 4}, {1, 1, 0, 0});
  const Tensor t({1, 1, 1, 4}, {0, 0, 1, 1});
  EXPECT_GE(losses::dice_loss(Var(p), t).item(), 1.0 - 1e-3);
}

TEST(Bce, ZeroLogitsAreLogTwo) {
  Rng rng(4);
  LabelMatrix c(3, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  EXPECT_NEAR(losses::bce_cls(Var(Tensor({3, 7}, 0.0)), c).item(), kLn2, 1e-6);
}

TEST(Bce, SaturatedCorrect) {
  LabelMatrix c(1, 4);
  c.data = {1, 0, 1, 0};
  EXPECT_LE(losses::bce_cls(Var(Tensor({1, 4}, {30, -30, 30, -30})), c).item(), 1e-9);
}

TEST(Bce, LargeLogitStable) {
  LabelMatrix c(2, 3, 0);
  const double v = losses::bce_cls(Var(Tensor({2, 3}, 30.0)), c).item();
  EXPECT_NEAR(v, 30.0 + std::log1p(std::exp(-30.0)), 1e-12);
}

TEST(SupLoss, IsSumOfComponents) {
  Rng rng(5);
  const Tensor seg = oracle::random_tensor({2, 4, 3, 3}, rng, -2, 2);
  const Tensor cls = oracle::random_tensor({2, 7}, rng, -2, 2);
  const IndexMask y = oracle::random_mask(2, 3, 3, 4, rng);
  LabelMatrix c(2, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  const double total = losses::sup_loss({Var(seg), Var(cls)}, y, c).item();
  const Var p = probs_of(seg);
  const double parts =
      losses::ce_seg(p, y).item() + losses::dice_loss(p, y).item() + losses::bce_cls(Var(cls), c).item();
  EXPECT_NEAR(total, parts, 1e-12);
  EXPECT_NEAR(kLn4 + 1.0 / 3.0 + kLn2, 2.412774, 1e-6);
}

TEST(SupLoss, PerfectPredictionIsSmall) {
  Rng rng(6);
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  Tensor seg = encode_one_hot(y, 3);
  for (double& v : seg.values()) v = v > 0 ? 30.0 : -30.0;
  LabelMatrix c(2, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  Tensor cls = c.as_tensor();
  for (double& v : cls.values()) v = v > 0 ? 30.0 : -30.0;
  EXPECT_LE(losses::sup_loss({Var(seg), Var(cls)}, y, c).item(), 1e-4);
}

TEST(SupLoss, BatchPermutationInvariant) {
  Rng rng(7);
  const Tensor seg = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const Tensor cls = oracle::random_tensor({2, 7}, rng, -2, 2);
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  LabelMatrix c(2, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  const double a = losses::sup_loss({Var(seg), Var(cls)}, y, c).item();
  const Tensor seg_swapped = concat_batch(seg.slice_batch(1, 2), seg.slice_batch(0, 1));
  const Tensor cls_swapped = concat_batch(cls.slice_batch(1, 2), cls.slice_batch(0, 1));
  const IndexMask y_swapped = concat_masks({y.image(1), y.image(0)});
  LabelMatrix c_swapped(2, 7);
  for (int k = 0; k < 7; ++k) {
    c_swapped.at(0, k) = c.at(1, k);
    c_swapped.at(1, k) = c.at(0, k);
  }
  EXPECT_NEAR(losses::sup_loss({Var(seg_swapped), Var(cls_swapped)}, y_swapped, c_swapped).item(), a, 1e-12);
}

TEST(Cps, IdenticalConfidentOutputsNearZero) {
  Rng rng(8);
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  Tensor seg = encode_one_hot(y, 3);
  for (double& v : seg.values()) v = v > 0 ? 30.0 : -30.0;
  Tensor cls({2, 7});
  for (double& v : cls.values()) v = rng.bernoulli(0.5) ? 30.0 : -30.0;
  const losses::DualHeadOutput out{Var(seg), Var(cls)};
  EXPECT_LE(losses::cps_loss(out, out).item(), 1e-3);
}

TEST(Cps, UniformCaseMatchesScalarEvaluation) {
  const int b = 1, c = 4, h = 2, w = 2, k = 7;
  const losses::DualHeadOutput out{Var(Tensor({b, c, h, w}, 0.0)), Var(Tensor({b, k}, 0.0))};
  // Scalar evaluation: pseudo-label is class 0 (tie) and all-ones labels.
  const double n = b * h * w, eps = 1e-5, pu = 1.0 / c;
  double dice_mean = 0.0;
  for (int cls = 0; cls < c; ++cls) {
    double inter = 0, psum = 0, tsum = 0;
    for (int i = 0; i < n; ++i) {
      const double t = cls == 0 ? 1.0 : 0.0;
      inter += pu * t;
      psum += pu;
      tsum += t;
    }
    dice_mean += (2 * inter + eps) / (psum + tsum + eps) / c;
  }
  const double dice_u = 1.0 - dice_mean;
  EXPECT_NEAR(losses::cps_loss(out, out).item(), 2.0 * (kLn4 + dice_u + kLn2), 1e-9);
}

TEST(Cps, RejectsBatchMismatch) {
  const losses::DualHeadOutput a{Var(Tensor({2, 3, 2, 2})), Var(Tensor({2, 7}))};
  const losses::DualHeadOutput b{Var(Tensor({3, 3, 2, 2})), Var(Tensor({3, 7}))};
  EXPECT_THROW(losses::cps_loss(a, b), std::invalid_argument);
}

TEST(Ict, ConstantNetworkIsZero) {
  Tensor logits({2, 3, 4, 4});
  for (int i = 0; i < 2 * 16; ++i) {
    logits[static_cast<std::size_t>(i)] = 0.3;
  }
  EXPECT_LE(losses::ict_loss(Var(logits), logits, logits, 0.5).item(), 1e-7);
}

TEST(Ict, OneHotStudentAgainstHalfTarget) {
  Tensor student({1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    student[i] = 40.0;
    student[4 + i] = -40.0;
  }
  const Tensor ti = student;
  Tensor tj({1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    tj[i] = -40.0;
    tj[4 + i] = 40.0;
  }
  EXPECT_NEAR(losses::ict_loss(Var(student), ti, tj, 0.5).item(), 0.25, 1e-12);
}

TEST(Ict, SigmaOneIsPlainConsistency) {
  Rng rng(9);
  const Tensor s = oracle::random_tensor({2, 3, 3, 3}, rng, -2, 2);
  const Tensor ti = oracle::random_tensor({2, 3, 3, 3}, rng, -2, 2);
  const Tensor tj = oracle::random_tensor({2, 3, 3, 3}, rng, -2, 2);
  const Tensor ps = softmax_seg(s), pt = softmax_seg(ti);
  double mse = 0;
  for (std::size_t i = 0; i < ps.numel(); ++i) mse += (ps[i] - pt[i]) * (ps[i] - pt[i]);
  mse /= static_cast<double>(ps.numel());
  EXPECT_NEAR(losses::ict_loss(Var(s), ti, tj, 1.0).item(), mse, 1e-12);
}

TEST(Ict, RejectsShapeMismatch) {
  EXPECT_THROW(losses::ict_loss(Var(Tensor({1, 3, 2, 2})), Tensor({1, 3, 2, 2}), Tensor({1, 3, 2, 3}), 0.5),
               std::invalid_argument);
}

TEST(Dac, IdenticalDistributions) {
  Rng rng(10);
  const Tensor p = softmax_seg(oracle::random_tensor({2, 3, 3, 3}, rng, -3, 3));
  EXPECT_NEAR(losses::dac_loss(Var(p), Var(p)).first.item(), 0.0, 1e-12);
  const Tensor oh = encode_one_hot(oracle::random_mask(2, 3, 3, 3, rng), 3);
  const auto [align, conf] = losses::dac_loss(Var(oh), Var(oh));
  EXPECT_NEAR(align.item(), 0.0, 1e-12);
  EXPECT_NEAR(conf.item(), 0.0, 1e-6);
}

TEST(Dac, UniformConfidenceIsLogC) {
  const Tensor u = uniform_probs(2, 4, 3, 3);
  const auto [align, conf] = losses::dac_loss(Var(u), Var(u));
  EXPECT_NEAR(align.item(), 0.0, 1e-12);
  EXPECT_NEAR(conf.item(), kLn4, 1e-6);
}

TEST(Dac, KlExample) {
  const Tensor p({1, 2, 1, 1}, {0.75, 0.25});
  const Tensor q({1, 2, 1, 1}, {0.5, 0.5});
  EXPECT_NEAR(losses::dac_loss(Var(p), Var(q)).first.item(), 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-9);
  EXPECT_NEAR(losses::dac_loss(Var(p), Var(q)).first.item(), 0.130812, 1e-6);
}

TEST(Dac, DisjointOneHotConfidenceIsMinusLogTwo) {
  const Tensor p({1, 2, 1, 1}, {1.0, 0.0});
  const Tensor q({1, 2, 1, 1}, {0.0, 1.0});
  EXPECT_NEAR(losses::dac_loss(Var(p), Var(q)).second.item(), -kLn2, 1e-6);
}

TEST(Dac, RejectsInvalidDistribution) {
  const Tensor p({1, 2, 1, 1}, {0.7, 0.7});
  const Tensor q({1, 2, 1, 1}, {0.5, 0.5});
  EXPECT_THROW(losses::dac_loss(Var(p), Var(q)), std::invalid_argument);
}

TEST(LossProperties, NonNegativityAndConfidenceBounds) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(5));
    const double spread = rng.uniform(0.1, 20);
    const Tensor z1 = oracle::random_tensor({2, c, 3, 3}, rng, -spread, spread);
    const Tensor z2 = oracle::random_tensor({2, c, 3, 3}, rng, -spread, spread);
    const IndexMask y = oracle::random_mask(2, 3, 3, c, rng);
    const Var p = probs_of(z1), q = probs_of(z2);
    EXPECT_GE(losses::ce_seg(p, y).item(), 0.0);
    EXPECT_GE(losses::dice_loss(p, y).item(), 0.0);
    EXPECT_GE(losses::ict_loss(Var(z1), z2, z1, rng.uniform()).item(), 0.0);
    const auto [align, conf] = losses::dac_loss(p, q);
    EXPECT_GE(align.item(), -1e-12);
    // Pixel means stay inside the per-pixel bounds.
    EXPECT_GE(conf.item(), -std::log(2.0) - 1e-9);
    EXPECT_LE(conf.item(), std::log(static_cast<double>(c)) + 1e-9);
    LabelMatrix lab(2, 5);
    for (auto& v : lab.data) v = static_cast<std::uint8_t>(rng.below(2));
    EXPECT_GE(losses::bce_cls(Var(oracle::random_tensor({2, 5}, rng, -spread, spread)), lab).item(), 0.0);
  }
}

TEST(LossProperties, AlignmentVanishesOnlyForEqualMaps) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = softmax_seg(oracle::random_tensor({1, 3, 2, 2}, rng, -3, 3));
    Tensor q = softmax_seg(oracle::random_tensor({1, 3, 2, 2}, rng, -3, 3));
    EXPECT_GT(losses::dac_loss(Var(p), Var(q)).first.item(), 1e-9);
    EXPECT_GT(losses::dac_loss(Var(q), Var(p)).first.item(), 1e-9);
    EXPECT_NEAR(losses::dac_loss(Var(q), Var(q)).first.item(), 0.0, 1e-12);
  }
}

TEST(Gradients, CrossEntropy) {
  Rng rng(20);
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  const auto [a, n] = gradients([&](const Var& z) { return losses::ce_seg(ag::softmax_channels(z), y); },
                                oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2));
  EXPECT_LT(oracle::max_relative_error(a, n), 1e-4);
}

TEST(Gradients, Dice) {
  Rng rng(21);
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  const auto [a, n] = gradients([&](const Var& z) { return losses::dice_loss(ag::softmax_channels(z), y); },
                                oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2));
  EXPECT_LT(oracle::max_relative_error(a, n), 1e-4);
}

TEST(Gradients, Bce) {
  Rng rng(22);
  LabelMatrix c(2, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  const auto [a, n] = gradients([&](const Var& z) { return losses::bce_cls(z, c); },
                                oracle::random_tensor({2, 7}, rng, -3, 3));
  EXPECT_LT(oracle::max_relative_error(a, n), 1e-4);
}

TEST(Gradients, Ict) {
  Rng rng(23);
  const Tensor ti = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const Tensor tj = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const auto [a, n] = gradients([&](const Var& z) { return losses::ict_loss(z, ti, tj, 0.5); },
                                oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2));
  EXPECT_LT(oracle::max_relative_error(a, n), 1e-4);
}

TEST(Gradients, DacBothInputs) {
  Rng rng(24);
  const Tensor z1 = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const Tensor z2 = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  for (int part = 0; part < 2; ++part) {
    auto pick = [part](std::pair<Var, Var> r) { return part == 0 ? r.first : r.second; };
    const auto [a1, n1] = gradients(
        [&](const Var& z) { return pick(losses::dac_loss(ag::softmax_channels(z), ag::softmax_channels(Var(z2)))); }, z1);
    EXPECT_LT(oracle::max_relative_error(a1, n1), 1e-4) << "part " << part << " wrt p";
    const auto [a2, n2] = gradients(
        [&](const Var& z) { return pick(losses::dac_loss(ag::softmax_channels(Var(z1)), ag::softmax_channels(z))); }, z2);
    EXPECT_LT(oracle::max_relative_error(a2, n2), 1e-4) << "part " << part << " wrt q";
  }
}

TEST(Gradients, CpsMatchesFiniteDifferences) {
  Rng rng(25);
  const Tensor seg2 = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const Tensor cls2 = oracle::random_tensor({2, 7}, rng, -2, 2);
  const Tensor cls1 = oracle::random_tensor({2, 7}, rng, -2, 2);
  const auto [a, n] = gradients(
      [&](const Var& z) { return losses::cps_loss({z, Var(cls1)}, {Var(seg2), Var(cls2)}); },
      oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2));
  EXPECT_LT(oracle::max_relative_error(a, n), 1e-4);
}

TEST(Gradients, CpsPseudoLabelBranchIsDetached) {
  Rng rng(26);
  const Tensor seg1 = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const Tensor cls1 = oracle::random_tensor({2, 7}, rng, -2, 2);
  const Tensor seg2 = oracle::random_tensor({2, 3, 4, 4}, rng, -2, 2);
  const Tensor cls2 = oracle::random_tensor({2, 7}, rng, -2, 2);

  // Only network 1 is a leaf: its gradient must equal the gradient of the
  // direction in which it is the student.
  Var s1(seg1, true), c1(cls1, true);
  losses::cps_loss({s1, c1}, {Var(seg2), Var(cls2)}).backward();
  Var r1(seg1, true), k1(cls1, true);
  const Tensor target = one_hot_argmax(softmax_seg(seg2));
  const LabelMatrix pseudo = binarize_cls(cls2, 0.5);
  const Var p1 = ag::softmax_channels(r1);
  ag::weighted_sum({losses::ce_seg(p1, target), losses::dice_loss(p1, target), losses::bce_cls(k1, pseudo)},
                   {1, 1, 1})
      .backward();
  EXPECT_LT(oracle::max_relative_error(s1.grad(), r1.grad(), 1e-12), 1e-12);
  EXPECT_LT(oracle::max_relative_error(c1.grad(), k1.grad(), 1e-12), 1e-12);

  // The source side receives nothing through its own pseudo-labels: with
  // network 2 as the only leaf, the direction where it supervises network 1
  // contributes exactly zero.
  Var s2(seg2, true), c2(cls2, true);
  losses::cps_loss({Var(seg1), Var(cls1)}, {s2, c2}).backward();
  Var q2(seg2, true), m2(cls2, true);
  const Tensor target1 = one_hot_argmax(softmax_seg(seg1));
  const Var p2 = ag::softmax_channels(q2);
  ag::weighted_sum({losses::ce_seg(p2, target1), losses::dice_loss(p2, target1),
                    losses::bce_cls(m2, binarize_cls(cls1, 0.5))},
                   {1, 1, 1})
      .backward();
  EXPECT_LT(oracle::max_relative_error(s2.grad(), q2.grad(), 1e-12), 1e-12);
  EXPECT_LT(oracle::max_relative_error(c2.grad(), m2.grad(), 1e-12), 1e-12);
}

TEST(TotalLoss, Arithmetic) {
  losses::LossReport r{1, 1, 1, 1, 1, 1, 0};
  EXPECT_DOUBLE_EQ(losses::total_loss(r, {}), 18.0);
  EXPECT_DOUBLE_EQ(losses::total_loss(r, {0, 0, 0, 1}), 2.0);
  losses::LossReport r2 = r;
  r2.cps += 0.25;
  EXPECT_NEAR(losses::total_loss(r2, {}) - losses::total_loss(r, {}), 5 * 0.25, 1e-12);
}

TEST(TotalLoss, AffineInEachWeight) {
  Rng rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    losses::LossReport r{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2),
                         rng.uniform(0, 2), rng.uniform(-0.6, 1), 0};
    losses::LossWeights w{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5), 1};
    const double base = losses::total_loss(r, w);
    const double d = rng.uniform(0.1, 2);
    losses::LossWeights w2 = w;
    w2.lambda_cps += d;
    EXPECT_NEAR(losses::total_loss(r, w2) - base, d * r.cps, 1e-12);
    w2 = w;
    w2.tau_ict += d;
    EXPECT_NEAR(losses::total_loss(r, w2) - base, d * r.ict, 1e-12);
    w2 = w;
    w2.beta_dac += d;
    EXPECT_NEAR(losses::total_loss(r, w2) - base, d * (r.dac_align + r.dac_conf), 1e-12);
  }
}

TEST(TotalLoss, NonFiniteNamesTheTerm) {
  losses::LossReport r{1, 1, 1, NAN, 1, 1, 0};
  try {
    losses::total_loss(r, {});
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("ict"), std::string::npos) << e.what();
  }
}

TEST(LossWeights, RejectNegative) {
  EXPECT_THROW((losses::LossWeights{-1, 1, 1, 1}.validate()), std::invalid_argument);
  EXPECT_NO_THROW(losses::LossWeights{}.validate());
}
