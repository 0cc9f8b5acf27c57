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
#include <string>
#include <vector>

#include "fmdacl/core.hpp"

// Challenge evaluation: Dice, Normalized Surface Dice, macro-F1 and the
// weighted overall score. All values are percentages.
namespace fmdacl::metrics {

struct MetricOptions {
  /// NSD boundary tolerance in pixels.
  double nsd_tolerance = 1.0;
  /// Treat a class absent from both masks as a perfect 100 instead of
  /// excluding it from the image mean.
  bool empty_as_perfect = false;
};

/// Scores for one image, foreground classes 1..C-1.
struct ImageScores {
  std::vector<double> per_class;  // length C-1; only meaningful where included
  std::vector<bool> included;
  double mean = 0.0;              // over included classes
  bool any_included = false;
};

ImageScores dice_image(const IndexMask& pred, const IndexMask& gt, int c_seg, bool empty_as_perfect = false);
ImageScores nsd_image(const IndexMask& pred, const IndexMask& gt, double tolerance_px, int c_seg,
                      bool empty_as_perfect = false);

struct SegSummary {
  /// Mean over images in which the class was included; 100 when it never was.
  std::vector<double> per_class;
  /// Mean over images of each image's mean over included classes.
  double mean = 0.0;
};

/// Batched masks: per-image scoring, then averaging over images.
SegSummary dice_metric(const IndexMask& pred, const IndexMask& gt, int c_seg, bool empty_as_perfect = false);
SegSummary nsd_metric(const IndexMask& pred, const IndexMask& gt, double tolerance_px, int c_seg,
                      bool empty_as_perfect = false);

/// Macro-F1 over labels. A label with no positives in either pred or gt scores 1.
double f1_metric(const LabelMatrix& pred, const LabelMatrix& gt);

/// 0.45 * f1 + 0.45 * (dsc + nsd) / 2 + 0.1 * s_time; inputs must lie in [0, 100].
double overall_score(double dsc, double nsd, double f1, double s_time);
/// The same without the time term.
double score_no_time(double dsc, double nsd, double f1);

/// Boundary pixels of class c: pixels of class c with a 4-neighbor of another
/// class or on the image border. Row-major flags for a single image.
std::vector<std::uint8_t> class_boundary(const IndexMask& m, int c);

/// Exact squared Euclidean distance from every pixel center to the nearest
/// set pixel (single image, row-major). +inf everywhere when the set is empty.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& set, int h, int w);

struct MetricsReport {
  double dsc = 0.0;
  double nsd = 0.0;
  double f1 = 0.0;
  double s_time = 0.0;
  double score = 0.0;
  double score_no_time = 0.0;
  double nsd_tolerance = 1.0;
  std::vector<double> per_class_dsc;
  std::vector<double> per_class_nsd;
};

struct ImageRow {
  std::string id;
  double dsc = 0.0;
  double nsd = 0.0;
  bool included = false;
  std::vector<std::uint8_t> pred_labels;
  std::vector<std::uint8_t> gt_labels;
};

/// Streams images one at a time; the result does not depend on how the
/// images were grouped into calls.
class MetricsAccumulator {
 public:
  MetricsAccumulator(int c_seg, int k_cls, MetricOptions options = {});

  /// Batched masks and labels; ids name the images for per-image rows.
  void add(const IndexMask& pred, const IndexMask& gt, const LabelMatrix& pred_labels, const LabelMatrix& gt_labels,
           const std::vector<std::string>& ids = {});

  MetricsReport finalize(double s_time = 0.0) const;
  const std::vector<ImageRow>& rows() const { return rows_; }
  std::size_t images() const { return rows_.size(); }

 private:
  int c_seg_;
  int k_cls_;
  MetricOptions options_;
  std::vector<ImageRow> rows_;
  std::vector<double> dsc_class_sum_, nsd_class_sum_;
  std::vector<int> dsc_class_n_, nsd_class_n_;
  LabelMatrix pred_labels_, gt_labels_;
};

}  // namespace fmdacl::metrics
