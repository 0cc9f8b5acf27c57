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
#include <filesystem>
#include <vector>

#include "fmdacl/core.hpp"
#include "fmdacl/png_io.hpp"

// Deterministic toy dataset: 14 structure classes drawn as ellipses, annuli
// and crescents over multiplicative speckle, plus 7 label bits that are
// geometric predicates of the mask.
namespace fmdacl::synthetic {

inline constexpr int kStructureClasses = 14;
inline constexpr int kLabelBits = 7;

struct SyntheticOptions {
  int n = 200;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 0;
  double labeled_frac = 0.2;
  double val_frac = 0.2;
  double test_frac = 0.0;
  void validate() const;
};

struct SyntheticSample {
  GrayImage image;
  IndexMask mask;  // [1, H, W]
  std::vector<std::uint8_t> labels;
};

/// One image from a per-sample seed.
SyntheticSample render_sample(int height, int width, std::uint64_t seed);

/// The 7 label bits of a single-image mask:
///   0  class 3 absent
///   1  class 5 covers less than 2% of the image
///   2  classes 1 and 2 both present
///   3  at least 5 distinct structure classes present
///   4  structures cover more than 20% of the image
///   5  class 7 present with centroid in the left half
///   6  some class in 10..14 covers more than 3% of the image
std::vector<std::uint8_t> label_bits(const IndexMask& mask);

struct SplitCounts {
  int labeled = 0;
  int unlabeled = 0;
  int val = 0;
  int test = 0;
};

/// Writes images/, masks/, labels.csv and manifest.csv under `root`.
SplitCounts gen_synthetic(const std::filesystem::path& root, const SyntheticOptions& options);

}  // namespace fmdacl::synthetic
