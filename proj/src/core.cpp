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

#include "fmdacl/core.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fmdacl/nn_ops.hpp"

namespace fmdacl {

IndexMask IndexMask::image(int b) const {
  IndexMask m(1, height, width);
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(b * pixels_per_image()), pixels_per_image(), m.data.begin());
  return m;
}

void IndexMask::validate(int c_seg) const {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] >= c_seg) {
      throw std::invalid_argument("mask value " + std::to_string(data[i]) + " at flat index " + std::to_string(i) +
                                  " is not a valid class id (C_seg = " + std::to_string(c_seg) + ")");
    }
  }
}

IndexMask concat_masks(const std::vector<IndexMask>& parts) {
  if (parts.empty()) return {};
  IndexMask out(0, parts[0].height, parts[0].width);
  for (const auto& p : parts) {
    if (p.height != out.height || p.width != out.width) throw std::invalid_argument("concat_masks: size mismatch");
    out.batch += p.batch;
    out.data.insert(out.data.end(), p.data.begin(), p.data.end());
  }
  return out;
}

Tensor LabelMatrix::as_tensor() const {
  Tensor t({batch, labels});
  for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i];
  return t;
}

LabelMatrix concat_labels(const std::vector<LabelMatrix>& parts) {
  if (parts.empty()) return {};
  LabelMatrix out(0, parts[0].labels);
  for (const auto& p : parts) {
    if (p.labels != out.labels) throw std::invalid_argument("concat_labels: label count mismatch");
    out.batch += p.batch;
    out.data.insert(out.data.end(), p.data.begin(), p.data.end());
  }
  return out;
}

Tensor softmax_seg(const Tensor& logits) {
  if (logits.rank() != 4) throw std::invalid_argument("softmax_seg expects [B, C, H, W], got " + shape_str(logits.shape()));
  const int bad = logits.first_nonfinite_batch();
  if (bad >= 0) throw NonFiniteError("softmax_seg: non-finite logits in batch index " + std::to_string(bad));
  ag::NoGradGuard guard;
  return ag::softmax_channels(ag::Var(logits)).value();
}

void validate_prob_map(const Tensor& p, double tol) {
  if (p.rank() != 4) throw std::invalid_argument("probability map must be [B, C, H, W]");
  const int batch = p.dim(0), c = p.dim(1);
  const std::size_t hw = static_cast<std::size_t>(p.dim(2)) * p.dim(3);
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) {
        const double v = p[(static_cast<std::size_t>(b) * c + k) * hw + i];
        if (!(v >= 0.0 && v <= 1.0)) {
          throw std::invalid_argument("invalid probability " + std::to_string(v) + " in batch index " + std::to_string(b));
        }
        s += v;
      }
      if (std::abs(s - 1.0) > tol) {
        throw std::invalid_argument("pixel distribution sums to " + std::to_string(s) + " in batch index " + std::to_string(b));
      }
    }
  }
}

IndexMask argmax_mask(const Tensor& p) {
  if (p.rank() != 4) throw std::invalid_argument("argmax_mask expects [B, C, H, W]");
  const int batch = p.dim(0), c = p.dim(1), h = p.dim(2), w = p.dim(3);
  if (c > 256) throw std::invalid_argument("argmax_mask supports at most 256 classes");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  IndexMask m(batch, h, w);
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      int best = 0;
      double bv = p[static_cast<std::size_t>(b) * c * hw + i];
      for (int k = 1; k < c; ++k) {
        const double v = p[(static_cast<std::size_t>(b) * c + k) * hw + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      m.data[b * hw + i] = static_cast<std::uint8_t>(best);
    }
  }
  return m;
}

Tensor encode_one_hot(const IndexMask& m, int c_seg) {
  m.validate(c_seg);
  const std::size_t hw = m.pixels_per_image();
  Tensor t({m.batch, c_seg, m.height, m.width}, 0.0);
  for (int b = 0; b < m.batch; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      t[(static_cast<std::size_t>(b) * c_seg + m.data[b * hw + i]) * hw + i] = 1.0;
    }
  }
  return t;
}

Tensor one_hot_argmax(const Tensor& p) { return encode_one_hot(argmax_mask(p), p.dim(1)); }

LabelMatrix binarize_cls(const Tensor& logits, double threshold) {
  if (logits.rank() != 2) throw std::invalid_argument("binarize_cls expects [B, K] logits");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  const double cut = std::log(threshold / (1.0 - threshold));
  LabelMatrix out(logits.dim(0), logits.dim(1));
  for (std::size_t i = 0; i < logits.numel(); ++i) out.data[i] = logits[i] >= cut ? 1 : 0;
  return out;
}

Tensor mix(const Tensor& xi, const Tensor& xj, double sigma) {
  if (xi.shape() != xj.shape()) {
    throw std::invalid_argument("mix: shape mismatch " + shape_str(xi.shape()) + " vs " + shape_str(xj.shape()));
  }
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw std::invalid_argument("mix: sigma must lie in [0, 1]");
  Tensor out(xi.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigma * xi[i] + (1.0 - sigma) * xj[i];
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace fmdacl
