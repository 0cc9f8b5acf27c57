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

#include "fmdacl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fmdacl/nn_ops.hpp"

namespace fmdacl::losses {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

Tensor mask_target(const ag::Var& probs, const IndexMask& y, const char* op) {
  const Tensor& p = probs.value();
  if (p.rank() != 4 || p.dim(0) != y.batch || p.dim(2) != y.height || p.dim(3) != y.width) {
    throw std::invalid_argument(std::string(op) + ": mask [" + std::to_string(y.batch) + ", " + std::to_string(y.height) +
                                ", " + std::to_string(y.width) + "] does not match " + shape_str(p.shape()));
  }
  return encode_one_hot(y, p.dim(1));
}

double safe_log(double v) { return std::log(std::max(v, kProbFloor)); }
double floor_active(double v) { return v > kProbFloor ? 1.0 : 0.0; }

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_cps >= 0.0 && tau_ict >= 0.0 && beta_dac >= 0.0)) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (conf_sign != 1.0 && conf_sign != -1.0) throw std::invalid_argument("conf_sign must be +1 or -1");
}

ag::Var ce_seg(const ag::Var& probs, const Tensor& target) {
  require_same_shape(probs.value(), target, "ce_seg");
  const Tensor& p = probs.value();
  const int c = p.dim(1);
  const double pixels = static_cast<double>(p.numel() / static_cast<std::size_t>(c));
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (target[i] != 0.0) s -= target[i] * safe_log(p[i]);
  }
  return ag::make_result(Tensor({1}, s / pixels), {probs}, [target, pixels](ag::Node& self) {
    const Tensor& pv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0] / pixels;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (target[i] != 0.0 && pv[i] > kProbFloor) g[i] -= gs * target[i] / pv[i];
    }
  }, "ce_seg");
}

ag::Var ce_seg(const ag::Var& probs, const IndexMask& y) { return ce_seg(probs, mask_target(probs, y, "ce_seg")); }

ag::Var dice_loss(const ag::Var& probs, const Tensor& target) {
  require_same_shape(probs.value(), target, "dice_loss");
  const Tensor& p = probs.value();
  const int batch = p.dim(0), c = p.dim(1);
  const std::size_t hw = p.numel() / (static_cast<std::size_t>(batch) * c);
  std::vector<double> inter(c, 0.0), psum(c, 0.0), tsum(c, 0.0);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < c; ++k) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        inter[k] += p[base + i] * target[base + i];
        psum[k] += p[base + i];
        tsum[k] += target[base + i];
      }
    }
  }
  double score = 0.0;
  for (int k = 0; k < c; ++k) score += (2.0 * inter[k] + kDiceEps) / (psum[k] + tsum[k] + kDiceEps);
  const double loss = 1.0 - score / c;
  return ag::make_result(Tensor({1}, loss), {probs}, [target, inter, psum, tsum, batch, c, hw](ag::Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0];
    for (int k = 0; k < c; ++k) {
      const double den = psum[k] + tsum[k] + kDiceEps;
      const double num = 2.0 * inter[k] + kDiceEps;
      for (int b = 0; b < batch; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          g[base + i] -= gs / c * (2.0 * target[base + i] * den - num) / (den * den);
        }
      }
    }
  }, "dice_loss");
}

ag::Var dice_loss(const ag::Var& probs, const IndexMask& y) {
  return dice_loss(probs, mask_target(probs, y, "dice_loss"));
}

ag::Var bce_cls(const ag::Var& logits, const Tensor& targets) {
  require_same_shape(logits.value(), targets, "bce_cls");
  const Tensor& z = logits.value();
  const double n = static_cast<double>(z.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    s += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return ag::make_result(Tensor({1}, s / n), {logits}, [targets, n](ag::Node& self) {
    const Tensor& zv = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0] / n;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gs * (sigmoid(zv[i]) - targets[i]);
  }, "bce_cls");
}

ag::Var bce_cls(const ag::Var& logits, const LabelMatrix& targets) { return bce_cls(logits, targets.as_tensor()); }

ag::Var sup_loss(const DualHeadOutput& out, const IndexMask& y, const LabelMatrix& c) {
  ag::Var p = ag::softmax_channels(out.seg);
  const Tensor target = mask_target(p, y, "sup_loss");
  return ag::weighted_sum({ce_seg(p, target), dice_loss(p, target), bce_cls(out.cls, c)}, {1.0, 1.0, 1.0});
}

ag::Var cps_loss(const DualHeadOutput& out1, const DualHeadOutput& out2, double cls_threshold) {
  if (out1.seg.value().shape() != out2.seg.value().shape() || out1.cls.value().shape() != out2.cls.value().shape()) {
    throw std::invalid_argument("cps_loss: outputs of the two networks disagree in shape (" +
                                shape_str(out1.seg.shape()) + " vs " + shape_str(out2.seg.shape()) + ")");
  }
  ag::Var p1 = ag::softmax_channels(out1.seg);
  ag::Var p2 = ag::softmax_channels(out2.seg);
  // Pseudo-labels are plain tensors: no gradient reaches their source.
  const Tensor y1 = one_hot_argmax(p1.value());
  const Tensor y2 = one_hot_argmax(p2.value());
  const Tensor c1 = binarize_cls(out1.cls.value(), cls_threshold).as_tensor();
  const Tensor c2 = binarize_cls(out2.cls.value(), cls_threshold).as_tensor();
  return ag::weighted_sum({ce_seg(p1, y2), dice_loss(p1, y2), bce_cls(out1.cls, c2),
                           ce_seg(p2, y1), dice_loss(p2, y1), bce_cls(out2.cls, c1)},
                          {1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
}

ag::Var ict_loss(const ag::Var& student_logits, const Tensor& teacher_i_logits, const Tensor& teacher_j_logits,
                 double sigma) {
  require_same_shape(teacher_i_logits, teacher_j_logits, "ict_loss");
  require_same_shape(student_logits.value(), teacher_i_logits, "ict_loss");
  const Tensor target = mix(softmax_seg(teacher_i_logits), softmax_seg(teacher_j_logits), sigma);
  ag::Var ps = ag::softmax_channels(student_logits);
  const Tensor& pv = ps.value();
  const double n = static_cast<double>(pv.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
  return ag::make_result(Tensor({1}, s / n), {ps}, [target, n](ag::Node& self) {
    const Tensor& v = self.parents[0]->value;
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gs * (v[i] - target[i]);
  }, "ict_loss");
}

std::pair<ag::Var, ag::Var> dac_loss(const ag::Var& p, const ag::Var& q) {
  const Tensor& pv = p.value();
  const Tensor& qv = q.value();
  require_same_shape(pv, qv, "dac_loss");
  validate_prob_map(pv);
  validate_prob_map(qv);
  const double pixels = static_cast<double>(pv.numel() / static_cast<std::size_t>(pv.dim(1)));

  double kl = 0.0, conf = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    const double lp = safe_log(pv[i]);
    const double lq = safe_log(qv[i]);
    const double m = 0.5 * (pv[i] + qv[i]);
    kl += pv[i] * (lp - lq);
    conf += -pv[i] * lp - qv[i] * lq + m * safe_log(m);
  }

  ag::Var align = ag::make_result(Tensor({1}, kl / pixels), {p, q}, [pixels](ag::Node& self) {
    const Tensor& pv = self.parents[0]->value;
    const Tensor& qv = self.parents[1]->value;
    const double gs = self.grad[0] / pixels;
    if (self.parents[0]->requires_grad) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        g[i] += gs * (safe_log(pv[i]) - safe_log(qv[i]) + floor_active(pv[i]));
      }
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (qv[i] > kProbFloor) g[i] -= gs * pv[i] / qv[i];
      }
    }
  }, "dac_align");

  ag::Var confidence = ag::make_result(Tensor({1}, conf / pixels), {p, q}, [pixels](ag::Node& self) {
    const double gs = self.grad[0] / pixels;
    for (int side = 0; side < 2; ++side) {
      ag::Node& own = *self.parents[side];
      if (!own.requires_grad) continue;
      const Tensor& other = self.parents[1 - side]->value;
      Tensor& g = own.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double v = own.value[i];
        const double m = 0.5 * (v + other[i]);
        const double dh_own = -(safe_log(v) + floor_active(v));
        const double dh_mix = -0.5 * (safe_log(m) + floor_active(m));
        g[i] += gs * (dh_own - dh_mix);
      }
    }
  }, "dac_conf");
  return {align, confidence};
}

double total_loss(const LossReport& parts, const LossWeights& w) {
  const std::pair<const char*, double> terms[] = {{"sup1", parts.sup1}, {"sup2", parts.sup2},
                                                  {"cps", parts.cps},   {"ict", parts.ict},
                                                  {"dac_align", parts.dac_align}, {"dac_conf", parts.dac_conf}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("loss term '") + name + "' is not finite");
  }
  return (parts.sup1 + parts.sup2) + w.lambda_cps * parts.cps + w.tau_ict * parts.ict +
         w.beta_dac * (parts.dac_align + w.conf_sign * parts.dac_conf);
}

}  // namespace fmdacl::losses
