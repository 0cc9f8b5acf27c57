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

#include <string>
#include <utility>

#include "fmdacl/autograd.hpp"
#include "fmdacl/core.hpp"

// Every loss term of the co-training objective. Inputs are graph values so the
// trainer can backpropagate through them; each term has a hand-written
// vector-Jacobian product.
namespace fmdacl::losses {

inline constexpr double kProbFloor = 1e-8;
inline constexpr double kDiceEps = 1e-5;

/// Segmentation and classification heads of one network.
struct DualHeadOutput {
  ag::Var seg;  // [B, C_seg, H, W] logits
  ag::Var cls;  // [B, K] logits
};

struct LossWeights {
  double lambda_cps = 5.0;
  double tau_ict = 1.0;
  double beta_dac = 5.0;
  /// Multiplier on the entropy-agreement term; -1 flips it for ablations.
  double conf_sign = 1.0;

  void validate() const;
};

struct LossReport {
  double sup1 = 0.0;
  double sup2 = 0.0;
  double cps = 0.0;
  double ict = 0.0;
  double dac_align = 0.0;
  double dac_conf = 0.0;
  double total = 0.0;
};

/// Mean over pixels of -sum_c t_c ln max(p_c, floor). `target` is a one-hot
/// (or soft) map shaped like `probs`.
ag::Var ce_seg(const ag::Var& probs, const Tensor& target);
ag::Var ce_seg(const ag::Var& probs, const IndexMask& y);

/// Soft Dice over all classes, sums taken over batch and pixels:
/// 1 - mean_c (2 sum p t + eps) / (sum p + sum t + eps).
ag::Var dice_loss(const ag::Var& probs, const Tensor& target);
ag::Var dice_loss(const ag::Var& probs, const IndexMask& y);

/// Mean logit-space binary cross-entropy, max(z,0) - z c + ln(1 + e^-|z|).
ag::Var bce_cls(const ag::Var& logits, const Tensor& targets);
ag::Var bce_cls(const ag::Var& logits, const LabelMatrix& targets);

/// ce + dice + bce against ground truth.
ag::Var sup_loss(const DualHeadOutput& out, const IndexMask& y, const LabelMatrix& c);

/// Cross pseudo-supervision: each network is fitted to the detached argmax /
/// thresholded predictions of the other, summed over both directions.
ag::Var cps_loss(const DualHeadOutput& out1, const DualHeadOutput& out2, double cls_threshold = 0.5);

/// Mean squared difference between softmax(student) and the sigma-mix of the
/// two (detached) teacher softmax maps.
ag::Var ict_loss(const ag::Var& student_logits, const Tensor& teacher_i_logits,
                 const Tensor& teacher_j_logits, double sigma);

/// (alignment, confidence): pixel-mean KL(p || q) and pixel-mean of
/// H(p) + H(q) - H((p + q) / 2). Gradients reach both inputs.
std::pair<ag::Var, ag::Var> dac_loss(const ag::Var& p, const ag::Var& q);

/// Weighted objective. Throws NonFiniteError naming the first non-finite term.
double total_loss(const LossReport& parts, const LossWeights& w);

}  // namespace fmdacl::losses
