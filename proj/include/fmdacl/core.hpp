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

#include "fmdacl/tensor.hpp"

// Shared array vocabulary and the elementary transforms between them.
//
// Real-valued maps are plain Tensors with a documented layout:
//   SegLogits / ProbMap / OneHotMask  [B, C_seg, H, W]
//   ClsLogits                         [B, K]
//   ImageBatch                        [B, 1, H, W], intensities in [0, 1]
// Integer-valued targets get their own types below.
namespace fmdacl {

inline constexpr int kDefaultSegClasses = 15;
inline constexpr int kDefaultClsLabels = 7;

/// One class id per pixel, [B, H, W]. Class 0 is background.
struct IndexMask {
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  IndexMask() = default;
  IndexMask(int b, int h, int w, std::uint8_t fill = 0)
      : batch(b), height(h), width(w), data(static_cast<std::size_t>(b) * h * w, fill) {}

  std::size_t pixels_per_image() const { return static_cast<std::size_t>(height) * width; }
  std::uint8_t& at(int b, int y, int x) { return data[b * pixels_per_image() + static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int b, int y, int x) const { return data[b * pixels_per_image() + static_cast<std::size_t>(y) * width + x]; }
  IndexMask image(int b) const;
  /// Throws when any value is >= c_seg.
  void validate(int c_seg) const;

  friend bool operator==(const IndexMask&, const IndexMask&) = default;
};

IndexMask concat_masks(const std::vector<IndexMask>& parts);

/// Binary multi-label targets/predictions, [B, K].
struct LabelMatrix {
  int batch = 0;
  int labels = 0;
  std::vector<std::uint8_t> data;

  LabelMatrix() = default;
  LabelMatrix(int b, int k, std::uint8_t fill = 0)
      : batch(b), labels(k), data(static_cast<std::size_t>(b) * k, fill) {}

  std::uint8_t& at(int b, int k) { return data[static_cast<std::size_t>(b) * labels + k]; }
  std::uint8_t at(int b, int k) const { return data[static_cast<std::size_t>(b) * labels + k]; }
  Tensor as_tensor() const;

  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;
};

LabelMatrix concat_labels(const std::vector<LabelMatrix>& parts);

/// Per-pixel softmax over the class axis, max-subtracted.
/// Throws NonFiniteError naming the first offending batch index.
Tensor softmax_seg(const Tensor& logits);

/// Throws std::invalid_argument unless every pixel distribution lies in [0,1]
/// and sums to 1 within `tol`.
void validate_prob_map(const Tensor& p, double tol = 1e-5);

/// Class with the highest probability; ties go to the lowest index.
IndexMask argmax_mask(const Tensor& p);
/// One-hot encoding of argmax_mask(p).
Tensor one_hot_argmax(const Tensor& p);
Tensor encode_one_hot(const IndexMask& m, int c_seg);

/// Entry k is 1 iff sigmoid(logit_k) >= threshold, evaluated in logit space
/// so boundary cases are exact.
LabelMatrix binarize_cls(const Tensor& logits, double threshold = 0.5);

/// sigma * xi + (1 - sigma) * xj. Works for images and probability maps alike.
Tensor mix(const Tensor& xi, const Tensor& xj, double sigma);

double sigmoid(double z);

}  // namespace fmdacl
