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

#include "fmdacl/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fmdacl::metrics {

namespace {

void require_same_geometry(const IndexMask& a, const IndexMask& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("metric inputs differ in shape: [" + std::to_string(a.batch) + ", " +
                                std::to_string(a.height) + ", " + std::to_string(a.width) + "] vs [" +
                                std::to_string(b.batch) + ", " + std::to_string(b.height) + ", " +
                                std::to_string(b.width) + "]");
  }
}

void finish(ImageScores& s) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < s.per_class.size(); ++c) {
    if (s.included[c]) {
      sum += s.per_class[c];
      ++n;
    }
  }
  s.any_included = n > 0;
  s.mean = n > 0 ? sum / n : 0.0;
}

// 1-D squared distance transform of a sampled function (Felzenszwalb & Huttenlocher).
void dt_1d(const double* f, int n, double* d, std::vector<int>& v, std::vector<double>& z) {
  const double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    auto intersect = [&](int r) {
      return ((f[q] + static_cast<double>(q) * q) - (f[r] + static_cast<double>(r) * r)) / (2.0 * q - 2.0 * r);
    };
    double s = intersect(v[static_cast<std::size_t>(k)]);
    // z[0] is -inf, so this stops at k == 0 at the latest.
    while (s <= z[static_cast<std::size_t>(k)]) {
      --k;
      s = intersect(v[static_cast<std::size_t>(k)]);
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const int r = v[static_cast<std::size_t>(j)];
    d[q] = static_cast<double>(q - r) * (q - r) + f[r];
  }
}

double check_percent(double v, const char* name) {
  if (!(v >= 0.0 && v <= 100.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in [0, 100], got " + std::to_string(v));
  }
  return v;
}

}  // namespace

std::vector<std::uint8_t> class_boundary(const IndexMask& m, int c) {
  const int h = m.height, w = m.width;
  std::vector<std::uint8_t> b(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (m.at(0, y, x) != c) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || m.at(0, y - 1, x) != c ||
                        m.at(0, y + 1, x) != c || m.at(0, y, x - 1) != c || m.at(0, y, x + 1) != c;
      b[static_cast<std::size_t>(y) * w + x] = edge ? 1 : 0;
    }
  }
  return b;
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& set, int h, int w) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) grid[i] = set[i] ? 0.0 : inf;
  const int n = std::max(h, w);
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n) + 1);
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * w + x];
    dt_1d(f.data(), h, d.data(), v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < h; ++y) {
    double* row = grid.data() + static_cast<std::size_t>(y) * w;
    std::copy(row, row + w, f.begin());
    dt_1d(f.data(), w, row, v, z);
  }
  return grid;
}

ImageScores dice_image(const IndexMask& pred, const IndexMask& gt, int c_seg, bool empty_as_perfect) {
  require_same_geometry(pred, gt);
  if (pred.batch != 1) throw std::invalid_argument("dice_image expects a single image");
  pred.validate(c_seg);
  gt.validate(c_seg);
  std::vector<long> np(static_cast<std::size_t>(c_seg), 0), ng(static_cast<std::size_t>(c_seg), 0),
      inter(static_cast<std::size_t>(c_seg), 0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    ++np[pred.data[i]];
    ++ng[gt.data[i]];
    if (pred.data[i] == gt.data[i]) ++inter[pred.data[i]];
  }
  ImageScores s;
  s.per_class.assign(static_cast<std::size_t>(c_seg - 1), 0.0);
  s.included.assign(static_cast<std::size_t>(c_seg - 1), false);
  for (int c = 1; c < c_seg; ++c) {
    const auto k = static_cast<std::size_t>(c - 1);
    const long denom = np[static_cast<std::size_t>(c)] + ng[static_cast<std::size_t>(c)];
    if (denom == 0) {
      if (empty_as_perfect) {
        s.per_class[k] = 100.0;
        s.included[k] = true;
      }
      continue;
    }
    s.included[k] = true;
    s.per_class[k] = 100.0 * 2.0 * static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(denom);
  }
  finish(s);
  return s;
}

ImageScores nsd_image(const IndexMask& pred, const IndexMask& gt, double tolerance_px, int c_seg, bool empty_as_perfect) {
  require_same_geometry(pred, gt);
  if (pred.batch != 1) throw std::invalid_argument("nsd_image expects a single image");
  if (!(tolerance_px >= 0.0)) throw std::invalid_argument("NSD tolerance must be non-negative");
  pred.validate(c_seg);
  gt.validate(c_seg);
  const double tol2 = tolerance_px * tolerance_px;
  const int h = pred.height, w = pred.width;
  ImageScores s;
  s.per_class.assign(static_cast<std::size_t>(c_seg - 1), 0.0);
  s.included.assign(static_cast<std::size_t>(c_seg - 1), false);
  for (int c = 1; c < c_seg; ++c) {
    const auto k = static_cast<std::size_t>(c - 1);
    const auto bp = class_boundary(pred, c);
    const auto bg = class_boundary(gt, c);
    long np = 0, ng = 0;
    for (std::size_t i = 0; i < bp.size(); ++i) {
      np += bp[i];
      ng += bg[i];
    }
    if (np == 0 && ng == 0) {
      if (empty_as_perfect) {
        s.per_class[k] = 100.0;
        s.included[k] = true;
      }
      continue;
    }
    s.included[k] = true;
    if (np == 0 || ng == 0) continue;
    const auto dp = squared_distance_transform(bp, h, w);
    const auto dg = squared_distance_transform(bg, h, w);
    long hits = 0;
    for (std::size_t i = 0; i < bp.size(); ++i) {
      if (bp[i] && dg[i] <= tol2) ++hits;
      if (bg[i] && dp[i] <= tol2) ++hits;
    }
    s.per_class[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(np + ng);
  }
  finish(s);
  return s;
}

namespace {
template <typename PerImage>
SegSummary summarize(const IndexMask& pred, const IndexMask& gt, int c_seg, PerImage per_image) {
  require_same_geometry(pred, gt);
  SegSummary out;
  std::vector<double> class_sum(static_cast<std::size_t>(c_seg - 1), 0.0);
  std::vector<int> class_n(static_cast<std::size_t>(c_seg - 1), 0);
  double sum = 0.0;
  int n = 0;
  for (int b = 0; b < pred.batch; ++b) {
    const ImageScores s = per_image(pred.image(b), gt.image(b));
    for (std::size_t k = 0; k < class_sum.size(); ++k) {
      if (s.included[k]) {
        class_sum[k] += s.per_class[k];
        ++class_n[k];
      }
    }
    if (s.any_included) {
      sum += s.mean;
      ++n;
    }
  }
  out.per_class.resize(class_sum.size());
  for (std::size_t k = 0; k < class_sum.size(); ++k) out.per_class[k] = class_n[k] ? class_sum[k] / class_n[k] : 100.0;
  out.mean = n ? sum / n : 100.0;
  return out;
}
}  // namespace

SegSummary dice_metric(const IndexMask& pred, const IndexMask& gt, int c_seg, bool empty_as_perfect) {
  return summarize(pred, gt, c_seg, [&](const IndexMask& p, const IndexMask& g) {
    return dice_image(p, g, c_seg, empty_as_perfect);
  });
}

SegSummary nsd_metric(const IndexMask& pred, const IndexMask& gt, double tolerance_px, int c_seg, bool empty_as_perfect) {
  return summarize(pred, gt, c_seg, [&](const IndexMask& p, const IndexMask& g) {
    return nsd_image(p, g, tolerance_px, c_seg, empty_as_perfect);
  });
}

double f1_metric(const LabelMatrix& pred, const LabelMatrix& gt) {
  if (pred.batch != gt.batch || pred.labels != gt.labels) throw std::invalid_argument("f1_metric: shape mismatch");
  if (pred.labels == 0) throw std::invalid_argument("f1_metric: no labels");
  double sum = 0.0;
  for (int k = 0; k < pred.labels; ++k) {
    long tp = 0, fp = 0, fn = 0;
    for (int b = 0; b < pred.batch; ++b) {
      const bool p = pred.at(b, k) != 0, g = gt.at(b, k) != 0;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    const long denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return 100.0 * sum / pred.labels;
}

double overall_score(double dsc, double nsd, double f1, double s_time) {
  return score_no_time(dsc, nsd, f1) + 0.1 * check_percent(s_time, "s_time");
}

double score_no_time(double dsc, double nsd, double f1) {
  check_percent(dsc, "dsc");
  check_percent(nsd, "nsd");
  check_percent(f1, "f1");
  return 0.45 * f1 + 0.45 * ((dsc + nsd) / 2.0);
}

MetricsAccumulator::MetricsAccumulator(int c_seg, int k_cls, MetricOptions options)
    : c_seg_(c_seg),
      k_cls_(k_cls),
      options_(options),
      dsc_class_sum_(static_cast<std::size_t>(c_seg - 1), 0.0),
      nsd_class_sum_(static_cast<std::size_t>(c_seg - 1), 0.0),
      dsc_class_n_(static_cast<std::size_t>(c_seg - 1), 0),
      nsd_class_n_(static_cast<std::size_t>(c_seg - 1), 0),
      pred_labels_(0, k_cls),
      gt_labels_(0, k_cls) {
  if (!(options.nsd_tolerance >= 0.0)) throw std::invalid_argument("NSD tolerance must be non-negative");
}

void MetricsAccumulator::add(const IndexMask& pred, const IndexMask& gt, const LabelMatrix& pred_labels,
                             const LabelMatrix& gt_labels, const std::vector<std::string>& ids) {
  require_same_geometry(pred, gt);
  if (pred_labels.batch != pred.batch || gt_labels.batch != pred.batch || pred_labels.labels != k_cls_ ||
      gt_labels.labels != k_cls_) {
    throw std::invalid_argument("MetricsAccumulator::add: label batch does not match masks");
  }
  for (int b = 0; b < pred.batch; ++b) {
    const IndexMask p = pred.image(b), g = gt.image(b);
    const ImageScores d = dice_image(p, g, c_seg_, options_.empty_as_perfect);
    const ImageScores s = nsd_image(p, g, options_.nsd_tolerance, c_seg_, options_.empty_as_perfect);
    for (std::size_t k = 0; k < dsc_class_sum_.size(); ++k) {
      if (d.included[k]) {
        dsc_class_sum_[k] += d.per_class[k];
        ++dsc_class_n_[k];
      }
      if (s.included[k]) {
        nsd_class_sum_[k] += s.per_class[k];
        ++nsd_class_n_[k];
      }
    }
    ImageRow row;
    row.id = b < static_cast<int>(ids.size()) ? ids[static_cast<std::size_t>(b)] : std::to_string(rows_.size());
    row.dsc = d.mean;
    row.nsd = s.mean;
    row.included = d.any_included;
    for (int k = 0; k < k_cls_; ++k) {
      row.pred_labels.push_back(pred_labels.at(b, k));
      row.gt_labels.push_back(gt_labels.at(b, k));
    }
    rows_.push_back(std::move(row));
  }
  pred_labels_ = concat_labels({pred_labels_, pred_labels});
  gt_labels_ = concat_labels({gt_labels_, gt_labels});
}

MetricsReport MetricsAccumulator::finalize(double s_time) const {
  MetricsReport r;
  double dsum = 0.0, nsum = 0.0;
  int n = 0;
  for (const auto& row : rows_) {
    if (!row.included) continue;
    dsum += row.dsc;
    nsum += row.nsd;
    ++n;
  }
  r.dsc = n ? dsum / n : 100.0;
  r.nsd = n ? nsum / n : 100.0;
  r.f1 = rows_.empty() ? 100.0 : f1_metric(pred_labels_, gt_labels_);
  r.s_time = s_time;
  r.nsd_tolerance = options_.nsd_tolerance;
  r.score = overall_score(r.dsc, r.nsd, r.f1, s_time);
  r.score_no_time = score_no_time(r.dsc, r.nsd, r.f1);
  for (std::size_t k = 0; k < dsc_class_sum_.size(); ++k) {
    r.per_class_dsc.push_back(dsc_class_n_[k] ? dsc_class_sum_[k] / dsc_class_n_[k] : 100.0);
    r.per_class_nsd.push_back(nsd_class_n_[k] ? nsd_class_sum_[k] / nsd_class_n_[k] : 100.0);
  }
  return r;
}

}  // namespace fmdacl::metrics
