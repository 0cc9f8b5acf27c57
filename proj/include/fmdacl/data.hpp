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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmdacl/core.hpp"

// Dataset layout under a root directory:
//   images/<id>.png   8-bit grayscale
//   masks/<id>.png    8-bit class index (labeled / val / test only)
//   labels.csv        id,c0,...,c6   (labeled / val / test only)
//   manifest.csv      id,split       split in {labeled, unlabeled, val, test}
namespace fmdacl::data {

enum class Split { labeled, unlabeled, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SampleRecord {
  std::string id;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;
  std::optional<std::vector<std::uint8_t>> labels;
  Split split = Split::unlabeled;
};

/// Parses manifest.csv and labels.csv. Rejects duplicate ids, unknown split
/// tags, annotated splits without mask or labels, and missing image files.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& root, int k_cls = kDefaultClsLabels);

std::vector<const SampleRecord*> filter_split(const std::vector<SampleRecord>& records, Split split);

struct AugmentPolicy {
  double hflip_prob = 0.5;
  double max_rotate_deg = 20.0;
  int target_height = 256;
  int target_width = 256;
};

/// Mirrors left-right.
void hflip(Tensor& image, IndexMask* mask);
/// Rotation about the image center; bilinear for the image, nearest for the
/// mask, 0 outside the source.
void rotate(Tensor& image, IndexMask* mask, double degrees);

/// Random flip then random rotation in [-max, max], the same transform for
/// image [1, 1, H, W] and mask.
std::pair<Tensor, std::optional<IndexMask>> augment(const Tensor& image, const std::optional<IndexMask>& mask,
                                                    const AugmentPolicy& policy, Rng& rng);

/// Bilinear resize of a [1, 1, H, W] image.
Tensor resize_image(const Tensor& image, int h, int w);
/// Nearest-neighbor resize of a single-image mask.
IndexMask resize_mask(const IndexMask& mask, int h, int w);

/// Images and annotations held in memory, resized to a common size. Mask
/// reads are audited so tests can prove unlabeled annotations are never used.
class Dataset {
 public:
  Dataset(std::vector<SampleRecord> records, int height, int width, int k_cls = kDefaultClsLabels);

  const std::vector<SampleRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  int height() const { return height_; }
  int width() const { return width_; }
  int k_cls() const { return k_cls_; }

  /// [1, 1, H, W], intensities in [0, 1].
  const Tensor& image(std::size_t index) const { return images_[index]; }
  /// Throws for records without annotation.
  const IndexMask& mask(std::size_t index) const;
  LabelMatrix labels(std::size_t index) const;

  std::vector<std::size_t> indices(Split split) const;
  /// Number of images that had to be resized on load.
  std::size_t resized_count() const { return resized_; }
  /// Mask reads per split since construction.
  std::size_t mask_reads(Split split) const { return mask_reads_[static_cast<std::size_t>(split)]; }

 private:
  std::vector<SampleRecord> records_;
  int height_, width_, k_cls_;
  std::vector<Tensor> images_;
  std::vector<std::optional<IndexMask>> masks_;
  std::size_t resized_ = 0;
  mutable std::size_t mask_reads_[4] = {0, 0, 0, 0};
};

/// Normalizes 8-bit pixels to [0, 1], resizing to (h, w) when needed.
Tensor image_to_tensor(const std::vector<std::uint8_t>& pixels, int src_h, int src_w, int h, int w);

/// One optimization step worth of record indices.
struct BatchPlan {
  int epoch = 0;
  int step = 0;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  /// True where an unlabeled slot repeats a record already seen this epoch to
  /// fill the final short batch.
  std::vector<bool> unlabeled_padding;
};

/// Deterministic batch schedule. Unlabeled records are reshuffled each epoch
/// and each appears exactly once as a non-padding entry; labeled records
/// cycle through successive reshuffles independent of epoch boundaries.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled, int batch_labeled,
              int batch_unlabeled, std::uint64_t seed);

  int steps_per_epoch() const { return steps_; }
  std::vector<BatchPlan> epoch(int epoch) const;

 private:
  std::size_t labeled_at(std::int64_t position) const;

  std::vector<std::size_t> labeled_, unlabeled_;
  int batch_labeled_, batch_unlabeled_;
  std::uint64_t seed_;
  int steps_ = 0;
};

}  // namespace fmdacl::data
