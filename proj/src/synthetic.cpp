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

#include "fmdacl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fmdacl/data.hpp"

namespace fmdacl::synthetic {

namespace fs = std::filesystem;

namespace {

constexpr double kBackground = 0.12;
constexpr double kSpeckle = 0.1;

enum class Shape { ellipse, annulus, crescent };

struct ClassStyle {
  Shape shape;
  double radius_frac;
  double aspect;
  double intensity;
};

ClassStyle style_of(int c) {
  const int k = c - 1;
  return {static_cast<Shape>(k % 3), 0.11 + 0.015 * (k % 5), 1.0 + 0.15 * (k % 4), 0.25 + 0.055 * k};
}

bool inside(Shape shape, double u, double v, double a, double b) {
  const double e = (u / a) * (u / a) + (v / b) * (v / b);
  if (e > 1.0) return false;
  switch (shape) {
    case Shape::ellipse:
      return true;
    case Shape::annulus: {
      const double ia = 0.55 * a, ib = 0.55 * b;
      return (u / ia) * (u / ia) + (v / ib) * (v / ib) > 1.0;
    }
    case Shape::crescent: {
      const double su = u - 0.45 * a;
      return (su / a) * (su / a) + (v / b) * (v / b) > 1.0;
    }
  }
  return false;
}

std::string sample_id(int i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "s" + digits;
}

}  // namespace

void SyntheticOptions::validate() const {
  if (n < 1) throw std::invalid_argument("n must be >= 1, got " + std::to_string(n));
  if (height < 8 || width < 8) throw std::invalid_argument("image size must be at least 8x8");
  for (double f : {labeled_frac, val_frac, test_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("split fractions must lie in [0, 1]");
  }
  if (labeled_frac + val_frac + test_frac > 1.0 + 1e-12) {
    throw std::invalid_argument("labeled + val + test fractions exceed 1");
  }
}

SyntheticSample render_sample(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticSample s;
  s.mask = IndexMask(1, height, width, 0);
  std::vector<double> intensity(static_cast<std::size_t>(height) * width, kBackground);

  std::vector<int> classes;
  for (int c = 1; c <= kStructureClasses; ++c) classes.push_back(c);
  rng.shuffle(classes);
  const int count = 3 + static_cast<int>(rng.below(4));
  const double side = std::min(height, width);

  for (int k = 0; k < count; ++k) {
    const int c = classes[static_cast<std::size_t>(k)];
    const ClassStyle st = style_of(c);
    const double cx = rng.uniform(0.15, 0.85) * (width - 1);
    const double cy = rng.uniform(0.15, 0.85) * (height - 1);
    const double scale = rng.uniform(0.8, 1.3);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double b = st.radius_frac * side * scale;
    const double a = b * st.aspect;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = ca * dx + sa * dy;
        const double v = -sa * dx + ca * dy;
        if (inside(st.shape, u, v, a, b)) {
          s.mask.at(0, y, x) = static_cast<std::uint8_t>(c);
          intensity[static_cast<std::size_t>(y) * width + x] = st.intensity;
        }
      }
    }
  }

  s.image.height = height;
  s.image.width = width;
  s.image.pixels.resize(intensity.size());
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const double v = std::clamp(intensity[i] * (1.0 + kSpeckle * rng.normal()), 0.0, 1.0);
    s.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  s.labels = label_bits(s.mask);
  return s;
}

std::vector<std::uint8_t> label_bits(const IndexMask& mask) {
  const double hw = static_cast<double>(mask.height) * mask.width;
  std::vector<double> area(kStructureClasses + 1, 0.0), sum_x(kStructureClasses + 1, 0.0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const int c = mask.at(0, y, x);
      if (c > kStructureClasses) throw std::invalid_argument("mask value out of range");
      area[c] += 1.0;
      sum_x[c] += x;
    }
  }
  int distinct = 0;
  double foreground = 0.0;
  for (int c = 1; c <= kStructureClasses; ++c) {
    if (area[c] > 0) ++distinct;
    foreground += area[c];
  }
  bool big_late = false;
  for (int c = 10; c <= kStructureClasses; ++c) big_late = big_late || area[c] > 0.03 * hw;

  std::vector<std::uint8_t> bits(kLabelBits, 0);
  bits[0] = area[3] == 0;
  bits[1] = area[5] < 0.02 * hw;
  bits[2] = area[1] > 0 && area[2] > 0;
  bits[3] = distinct >= 5;
  bits[4] = foreground > 0.20 * hw;
  bits[5] = area[7] > 0 && sum_x[7] / area[7] < mask.width / 2.0;
  bits[6] = big_late;
  return bits;
}

SplitCounts gen_synthetic(const fs::path& root, const SyntheticOptions& options) {
  options.validate();
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec || !fs::is_directory(root / "images")) {
    throw std::runtime_error("cannot create dataset directory " + root.string());
  }

  const int n = options.n;
  const int n_lab = static_cast<int>(std::lround(options.labeled_frac * n));
  const int n_val = std::min(n - n_lab, static_cast<int>(std::lround(options.val_frac * n)));
  const int n_test = std::min(n - n_lab - n_val, static_cast<int>(std::lround(options.test_frac * n)));

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng(mix_seed(options.seed, 0x53504C4954ULL));
  split_rng.shuffle(order);
  std::vector<data::Split> split(static_cast<std::size_t>(n), data::Split::unlabeled);
  for (int r = 0; r < n; ++r) {
    data::Split s = data::Split::unlabeled;
    if (r < n_lab) s = data::Split::labeled;
    else if (r < n_lab + n_val) s = data::Split::val;
    else if (r < n_lab + n_val + n_test) s = data::Split::test;
    split[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = s;
  }

  std::ofstream manifest(root / "manifest.csv", std::ios::binary);
  std::ofstream labels(root / "labels.csv", std::ios::binary);
  if (!manifest || !labels) throw std::runtime_error("cannot write into " + root.string());
  manifest << "id,split\n";
  labels << "id";
  for (int k = 0; k < kLabelBits; ++k) labels << ",c" << k;
  labels << "\n";

  SplitCounts counts;
  for (int i = 0; i < n; ++i) {
    const std::string id = sample_id(i);
    const SyntheticSample s = render_sample(options.height, options.width,
                                            mix_seed({options.seed, static_cast<std::uint64_t>(i)}));
    write_png_gray(root / "images" / (id + ".png"), s.image);
    const data::Split sp = split[static_cast<std::size_t>(i)];
    manifest << id << "," << data::to_string(sp) << "\n";
    switch (sp) {
      case data::Split::labeled: ++counts.labeled; break;
      case data::Split::unlabeled: ++counts.unlabeled; break;
      case data::Split::val: ++counts.val; break;
      case data::Split::test: ++counts.test; break;
    }
    if (sp == data::Split::unlabeled) continue;
    GrayImage m{options.height, options.width, s.mask.data};
    write_png_gray(root / "masks" / (id + ".png"), m);
    labels << id;
    for (auto b : s.labels) labels << "," << static_cast<int>(b);
    labels << "\n";
  }
  if (!manifest || !labels) throw std::runtime_error("write failed under " + root.string());
  return counts;
}

}  // namespace fmdacl::synthetic
