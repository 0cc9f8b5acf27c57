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

#include "fmdacl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fmdacl/png_io.hpp"

namespace fmdacl::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool looks_like_png(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return in.gcount() == 8 && std::equal(sig, sig + 8, png_sig);
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::labeled: return "labeled";
    case Split::unlabeled: return "unlabeled";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "labeled") return Split::labeled;
  if (s == "unlabeled") return Split::unlabeled;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

std::vector<SampleRecord> load_manifest(const fs::path& root, int k_cls) {
  std::ifstream manifest(root / "manifest.csv");
  if (!manifest) throw std::runtime_error("missing manifest " + (root / "manifest.csv").string());

  std::map<std::string, std::vector<std::uint8_t>> labels;
  if (std::ifstream lf(root / "labels.csv"); lf) {
    std::string line;
    std::getline(lf, line);
    const auto header = split_csv_line(line);
    if (header.size() != static_cast<std::size_t>(k_cls) + 1 || header[0] != "id") {
      throw std::runtime_error("labels.csv header must be id,c0..c" + std::to_string(k_cls - 1));
    }
    int line_no = 1;
    while (std::getline(lf, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != header.size()) {
        throw std::runtime_error("labels.csv:" + std::to_string(line_no) + ": expected " +
                                 std::to_string(header.size()) + " columns");
      }
      std::vector<std::uint8_t> bits;
      for (std::size_t k = 1; k < cells.size(); ++k) {
        if (cells[k] != "0" && cells[k] != "1") {
          throw std::runtime_error("labels.csv:" + std::to_string(line_no) + ": non-binary label '" + cells[k] + "'");
        }
        bits.push_back(cells[k] == "1" ? 1 : 0);
      }
      if (!labels.emplace(cells[0], std::move(bits)).second) {
        throw std::runtime_error("labels.csv: duplicate id '" + cells[0] + "'");
      }
    }
  }

  std::string line;
  std::getline(manifest, line);
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"id", "split"}) throw std::runtime_error("manifest.csv header must be id,split");

  std::vector<SampleRecord> records;
  std::set<std::string> seen;
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) throw std::runtime_error("manifest.csv:" + std::to_string(line_no) + ": expected id,split");
    SampleRecord r;
    r.id = cells[0];
    if (!seen.insert(r.id).second) throw std::runtime_error("manifest.csv: duplicate id '" + r.id + "'");
    r.split = parse_split(cells[1]);
    r.image_path = root / "images" / (r.id + ".png");
    if (!looks_like_png(r.image_path)) throw std::runtime_error("unreadable image for '" + r.id + "': " + r.image_path.string());
    if (r.split != Split::unlabeled) {
      const fs::path mp = root / "masks" / (r.id + ".png");
      if (!fs::exists(mp)) throw std::runtime_error("record '" + r.id + "' (" + cells[1] + ") has no mask " + mp.string());
      r.mask_path = mp;
      auto it = labels.find(r.id);
      if (it == labels.end()) throw std::runtime_error("record '" + r.id + "' (" + cells[1] + ") has no labels row");
      r.labels = it->second;
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<const SampleRecord*> filter_split(const std::vector<SampleRecord>& records, Split split) {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

void hflip(Tensor& image, IndexMask* mask) {
  const int h = image.dim(2), w = image.dim(3);
  for (int y = 0; y < h; ++y) {
    double* row = image.data() + static_cast<std::size_t>(y) * w;
    std::reverse(row, row + w);
    if (mask) {
      auto* mrow = mask->data.data() + static_cast<std::size_t>(y) * w;
      std::reverse(mrow, mrow + w);
    }
  }
}

void rotate(Tensor& image, IndexMask* mask, double degrees) {
  const int h = image.dim(2), w = image.dim(3);
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out(image.shape(), 0.0);
  IndexMask mout = mask ? IndexMask(1, h, w, 0) : IndexMask();
  auto px = [&](int y, int x) { return (y >= 0 && y < h && x >= 0 && x < w) ? image[static_cast<std::size_t>(y) * w + x] : 0.0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: output pixel -> source location.
      const double dy = y - cy, dx = x - cx;
      const double sy = c * dy + s * dx + cy;
      const double sx = -s * dy + c * dx + cx;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      out[static_cast<std::size_t>(y) * w + x] = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                                                 fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
      if (mask) {
        const int ny = static_cast<int>(std::floor(sy + 0.5)), nx = static_cast<int>(std::floor(sx + 0.5));
        if (ny >= 0 && ny < h && nx >= 0 && nx < w) mout.at(0, y, x) = mask->at(0, ny, nx);
      }
    }
  }
  image = std::move(out);
  if (mask) *mask = std::move(mout);
}

std::pair<Tensor, std::optional<IndexMask>> augment(const Tensor& image, const std::optional<IndexMask>& mask,
                                                    const AugmentPolicy& policy, Rng& rng) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1) {
    throw std::invalid_argument("augment expects a [1, 1, H, W] image");
  }
  Tensor img = image;
  std::optional<IndexMask> m = mask;
  if (m && (m->batch != 1 || m->height != img.dim(2) || m->width != img.dim(3))) {
    throw std::invalid_argument("augment: mask does not match image");
  }
  // Both draws happen unconditionally so the stream position is policy-independent.
  const bool flip = rng.uniform() < policy.hflip_prob;
  const double angle = rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg);
  if (flip) hflip(img, m ? &*m : nullptr);
  if (angle != 0.0) rotate(img, m ? &*m : nullptr, angle);
  return {std::move(img), std::move(m)};
}

Tensor resize_image(const Tensor& image, int h, int w) {
  const int sh = image.dim(2), sw = image.dim(3);
  if (sh == h && sw == w) return image;
  Tensor out({1, 1, h, w});
  for (int y = 0; y < h; ++y) {
    double syf = std::max(0.0, (y + 0.5) * sh / h - 0.5);
    const int y0 = std::min(static_cast<int>(syf), sh - 1), y1 = std::min(y0 + 1, sh - 1);
    const double fy = syf - y0;
    for (int x = 0; x < w; ++x) {
      double sxf = std::max(0.0, (x + 0.5) * sw / w - 0.5);
      const int x0 = std::min(static_cast<int>(sxf), sw - 1), x1 = std::min(x0 + 1, sw - 1);
      const double fx = sxf - x0;
      auto at = [&](int yy, int xx) { return image[static_cast<std::size_t>(yy) * sw + xx]; };
      out[static_cast<std::size_t>(y) * w + x] =
          (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
    }
  }
  return out;
}

IndexMask resize_mask(const IndexMask& mask, int h, int w) {
  if (mask.height == h && mask.width == w) return mask;
  IndexMask out(1, h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(static_cast<int>(std::floor((y + 0.5) * mask.height / h)), mask.height - 1);
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(static_cast<int>(std::floor((x + 0.5) * mask.width / w)), mask.width - 1);
      out.at(0, y, x) = mask.at(0, sy, sx);
    }
  }
  return out;
}

Tensor image_to_tensor(const std::vector<std::uint8_t>& pixels, int src_h, int src_w, int h, int w) {
  Tensor t({1, 1, src_h, src_w});
  for (std::size_t i = 0; i < pixels.size(); ++i) t[i] = pixels[i] / 255.0;
  return resize_image(t, h, w);
}

Dataset::Dataset(std::vector<SampleRecord> records, int height, int width, int k_cls)
    : records_(std::move(records)), height_(height), width_(width), k_cls_(k_cls) {
  for (const auto& r : records_) {
    const GrayImage img = read_png_gray(r.image_path);
    if (img.height != height_ || img.width != width_) ++resized_;
    images_.push_back(image_to_tensor(img.pixels, img.height, img.width, height_, width_));
    if (r.split != Split::unlabeled && r.mask_path) {
      const GrayImage m = read_png_gray(*r.mask_path);
      if (m.height != img.height || m.width != img.width) {
        throw std::runtime_error("mask size differs from image for '" + r.id + "'");
      }
      IndexMask mask(1, m.height, m.width);
      mask.data = m.pixels;
      masks_.push_back(resize_mask(mask, height_, width_));
    } else {
      masks_.emplace_back(std::nullopt);
    }
  }
}

const IndexMask& Dataset::mask(std::size_t index) const {
  const SampleRecord& r = records_.at(index);
  ++mask_reads_[static_cast<std::size_t>(r.split)];
  if (!masks_[index]) throw std::logic_error("record '" + r.id + "' (" + to_string(r.split) + ") has no mask");
  return *masks_[index];
}

LabelMatrix Dataset::labels(std::size_t index) const {
  const SampleRecord& r = records_.at(index);
  if (!r.labels) throw std::logic_error("record '" + r.id + "' has no labels");
  LabelMatrix m(1, k_cls_);
  m.data = *r.labels;
  return m;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == split) out.push_back(i);
  }
  return out;
}

BatchStream::BatchStream(std::vector<std::size_t> labeled, std::vector<std::size_t> unlabeled, int batch_labeled,
                         int batch_unlabeled, std::uint64_t seed)
    : labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      batch_labeled_(batch_labeled),
      batch_unlabeled_(batch_unlabeled),
      seed_(seed) {
  if (labeled_.empty()) throw std::invalid_argument("batch stream: labeled split is empty");
  if (unlabeled_.empty()) throw std::invalid_argument("batch stream: unlabeled split is empty");
  if (batch_labeled_ < 1) throw std::invalid_argument("labeled batch size must be >= 1");
  if (batch_unlabeled_ < 2 || batch_unlabeled_ % 2 != 0) {
    throw std::invalid_argument("unlabeled batch size must be even and >= 2 (mixup pairs its halves), got " +
                                std::to_string(batch_unlabeled_));
  }
  if (unlabeled_.size() < 2) throw std::invalid_argument("need at least two unlabeled records");
  steps_ = static_cast<int>((unlabeled_.size() + static_cast<std::size_t>(batch_unlabeled_) - 1) / batch_unlabeled_);
}

std::size_t BatchStream::labeled_at(std::int64_t position) const {
  const auto n = static_cast<std::int64_t>(labeled_.size());
  const std::int64_t cycle = position / n;
  std::vector<std::size_t> order = labeled_;
  Rng rng(mix_seed({seed_, 0x4C41424CULL, static_cast<std::uint64_t>(cycle)}));
  rng.shuffle(order);
  return order[static_cast<std::size_t>(position % n)];
}

std::vector<BatchPlan> BatchStream::epoch(int epoch) const {
  std::vector<std::size_t> order = unlabeled_;
  Rng rng(mix_seed({seed_, 0x554E4C42ULL, static_cast<std::uint64_t>(epoch)}));
  rng.shuffle(order);
  std::vector<BatchPlan> plans;
  std::size_t cursor = 0;
  std::size_t pad_cursor = 0;
  for (int s = 0; s < steps_; ++s) {
    BatchPlan plan;
    plan.epoch = epoch;
    plan.step = s;
    const std::int64_t global = static_cast<std::int64_t>(epoch) * steps_ + s;
    for (int k = 0; k < batch_labeled_; ++k) plan.labeled.push_back(labeled_at(global * batch_labeled_ + k));
    for (int k = 0; k < batch_unlabeled_; ++k) {
      if (cursor < order.size()) {
        plan.unlabeled.push_back(order[cursor++]);
        plan.unlabeled_padding.push_back(false);
      } else {
        plan.unlabeled.push_back(order[pad_cursor++ % order.size()]);
        plan.unlabeled_padding.push_back(true);
      }
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

}  // namespace fmdacl::data
