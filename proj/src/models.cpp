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

#include "fmdacl/models.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fmdacl/checkpoint.hpp"
#include "fmdacl/nn_ops.hpp"

namespace fmdacl::models {

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::conv_unet ? "conv_unet" : "patch_attention";
}

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "conv_unet") return BackboneKind::conv_unet;
  if (s == "patch_attention") return BackboneKind::patch_attention;
  throw std::invalid_argument("unknown backbone kind '" + s + "' (expected conv_unet or patch_attention)");
}

int BackboneSpec::downsampling_factor() const {
  return kind == BackboneKind::conv_unet ? 1 << (depth - 1) : 1 << depth;
}

void BackboneSpec::validate() const {
  if (width < 8) throw std::invalid_argument("backbone width must be >= 8, got " + std::to_string(width));
  if (depth < 2 || depth > 5) throw std::invalid_argument("backbone depth must lie in [2, 5], got " + std::to_string(depth));
  if (c_seg < 2 || c_seg > 256) throw std::invalid_argument("c_seg must lie in [2, 256]");
  if (k_cls < 1) throw std::invalid_argument("k_cls must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (kind == BackboneKind::patch_attention) {
    const int dim = width << (depth - 1);
    if (heads < 1 || dim % heads != 0) throw std::invalid_argument("attention width must be divisible by heads");
    if (dim % 4 != 0) throw std::invalid_argument("attention width must be divisible by 4");
    if (blocks < 1) throw std::invalid_argument("patch_attention needs at least one block");
  }
}

void BackboneSpec::validate_input(int h, int w) const {
  const int f = downsampling_factor();
  if (h <= 0 || w <= 0 || h % f != 0 || w % f != 0) {
    throw std::invalid_argument(to_string(kind) + " with depth " + std::to_string(depth) + " requires H and W divisible by " +
                                std::to_string(f) + ", got " + std::to_string(h) + "x" + std::to_string(w));
  }
}

Network::Network(BackboneSpec spec, std::uint64_t seed)
    : spec_(spec), init_rng_(mix_seed(seed, 0x1717)), rng_(mix_seed(seed, 0xD0D0)) {
  spec_.validate();
}

DualHeadOutput Network::forward(const ag::Var& x, bool train) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != 1) {
    throw std::invalid_argument("network input must be [B, 1, H, W], got " + shape_str(xv.shape()));
  }
  spec_.validate_input(xv.dim(2), xv.dim(3));
  ag::check_finite(x, "input");
  return forward_impl(x, train);
}

const Parameter* Network::find_parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter* Network::find_parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().numel();
  return n;
}

void Network::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::unique_ptr<Network> Network::clone() const {
  auto copy = build_network(spec_, 0);
  copy->copy_state_from(*this);
  return copy;
}

void Network::copy_state_from(const Network& other) {
  if (other.params_.size() != params_.size() || other.buffers_.size() != buffers_.size()) {
    throw std::invalid_argument("copy_state_from: topology mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].var.shape() != other.params_[i].var.shape()) {
      throw std::invalid_argument("copy_state_from: shape mismatch at " + params_[i].name);
    }
    params_[i].var.mutable_value() = other.params_[i].var.value();
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) buffers_[i].value = other.buffers_[i].value;
  rng_ = other.rng_;
}

int Network::add_param(const std::string& name, ParamGroup group, Tensor init) {
  params_.push_back({name, group, ag::Var(std::move(init), true)});
  return static_cast<int>(params_.size() - 1);
}

int Network::add_buffer(const std::string& name, Tensor init) {
  buffers_.push_back({name, std::move(init)});
  return static_cast<int>(buffers_.size() - 1);
}

Tensor Network::kaiming(Shape shape, int fan_in) {
  Tensor t(std::move(shape));
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (double& v : t.values()) v = std_dev * init_rng_.normal();
  return t;
}

Network::ConvBn Network::add_conv_bn(const std::string& name, ParamGroup group, int cin, int cout, int k) {
  ConvBn l{};
  l.weight = add_param(name + ".conv.weight", group, kaiming({cout, cin, k, k}, cin * k * k));
  l.gamma = add_param(name + ".bn.weight", group, Tensor({cout}, 1.0));
  l.beta = add_param(name + ".bn.bias", group, Tensor({cout}, 0.0));
  l.mean = add_buffer(name + ".bn.running_mean", Tensor({cout}, 0.0));
  l.var = add_buffer(name + ".bn.running_var", Tensor({cout}, 1.0));
  l.padding = k / 2;
  return l;
}

ag::Var Network::conv_bn_relu(const ag::Var& x, const ConvBn& l, bool train, const std::string& name) {
  ag::Var y = ag::conv2d(x, p(l.weight), ag::Var(), {1, l.padding});
  y = ag::batch_norm2d(y, p(l.gamma), p(l.beta), buf(l.mean), buf(l.var), train);
  return ag::check_finite(ag::relu(y), name);
}

namespace {

class ConvUNet final : public Network {
 public:
  ConvUNet(const BackboneSpec& spec, std::uint64_t seed) : Network(spec, seed) {
    const int d = spec.depth;
    for (int s = 0; s < d; ++s) {
      const int cin = s == 0 ? 1 : spec.width << (s - 1);
      const int cout = spec.width << s;
      enc_.push_back({add_conv_bn("enc" + std::to_string(s) + ".0", ParamGroup::backbone, cin, cout, 3),
                      add_conv_bn("enc" + std::to_string(s) + ".1", ParamGroup::backbone, cout, cout, 3)});
    }
    dec_.resize(static_cast<std::size_t>(d - 1));
    for (int s = d - 2; s >= 0; --s) {
      const int cout = spec.width << s;
      const int cin = (spec.width << (s + 1)) + cout;
      dec_[static_cast<std::size_t>(s)] = {add_conv_bn("dec" + std::to_string(s) + ".0", ParamGroup::backbone, cin, cout, 3),
                                           add_conv_bn("dec" + std::to_string(s) + ".1", ParamGroup::backbone, cout, cout, 3)};
    }
    seg_w_ = add_param("seg_head.weight", ParamGroup::seg_head, kaiming({spec.c_seg, spec.width, 1, 1}, spec.width));
    seg_b_ = add_param("seg_head.bias", ParamGroup::seg_head, Tensor({spec.c_seg}, 0.0));
    const int deep = spec.width << (d - 1);
    cls_w_ = add_param("cls_head.weight", ParamGroup::cls_head, kaiming({spec.k_cls, deep}, 2 * deep));
    cls_b_ = add_param("cls_head.bias", ParamGroup::cls_head, Tensor({spec.k_cls}, 0.0));
  }

 protected:
  DualHeadOutput forward_impl(const ag::Var& x, bool train) override {
    const int d = spec_.depth;
    std::vector<ag::Var> skips;
    ag::Var h = x;
    for (int s = 0; s < d; ++s) {
      if (s > 0) h = ag::max_pool2(h);
      const std::string name = "enc" + std::to_string(s);
      h = conv_bn_relu(h, enc_[static_cast<std::size_t>(s)].first, train, name + ".0");
      h = conv_bn_relu(h, enc_[static_cast<std::size_t>(s)].second, train, name + ".1");
      skips.push_back(h);
    }
    h = ag::dropout(h, spec_.dropout, rng(), train);
    ag::Var cls = ag::linear(ag::global_avg_pool(h), p(cls_w_), p(cls_b_));
    ag::check_finite(cls, "cls_head");
    for (int s = d - 2; s >= 0; --s) {
      const ag::Var& skip = skips[static_cast<std::size_t>(s)];
      h = ag::upsample_bilinear(h, skip.dim(2), skip.dim(3));
      h = ag::concat_channels(h, skip);
      const std::string name = "dec" + std::to_string(s);
      h = conv_bn_relu(h, dec_[static_cast<std::size_t>(s)].first, train, name + ".0");
      h = conv_bn_relu(h, dec_[static_cast<std::size_t>(s)].second, train, name + ".1");
    }
    ag::Var seg = ag::conv2d(h, p(seg_w_), p(seg_b_));
    ag::check_finite(seg, "seg_head");
    return {seg, cls};
  }

 private:
  std::vector<std::pair<ConvBn, ConvBn>> enc_, dec_;
  int seg_w_ = 0, seg_b_ = 0, cls_w_ = 0, cls_b_ = 0;
};

Tensor sinusoid_2d(int h, int w, int dim) {
  // First half of the channels encodes the row, second half the column.
  Tensor pe({1, h * w, dim});
  const int quarter = dim / 4;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* row = pe.data() + (static_cast<std::size_t>(y) * w + x) * dim;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / quarter);
        row[2 * i] = std::sin(y * freq);
        row[2 * i + 1] = std::cos(y * freq);
        row[dim / 2 + 2 * i] = std::sin(x * freq);
        row[dim / 2 + 2 * i + 1] = std::cos(x * freq);
      }
    }
  }
  return pe;
}

class PatchAttentionNet final : public Network {
 public:
  PatchAttentionNet(const BackboneSpec& spec, std::uint64_t seed) : Network(spec, seed) {
    patch_ = 1 << spec.depth;
    dim_ = spec.width << (spec.depth - 1);
    embed_w_ = add_param("patch_embed.weight", ParamGroup::backbone, kaiming({dim_, 1, patch_, patch_}, patch_ * patch_));
    embed_b_ = add_param("patch_embed.bias", ParamGroup::backbone, Tensor({dim_}, 0.0));
    for (int b = 0; b < spec.blocks; ++b) {
      const std::string n = "blocks." + std::to_string(b);
      Block blk{};
      blk.ln1_g = add_param(n + ".ln1.weight", ParamGroup::backbone, Tensor({dim_}, 1.0));
      blk.ln1_b = add_param(n + ".ln1.bias", ParamGroup::backbone, Tensor({dim_}, 0.0));
      blk.qkv_w = add_param(n + ".attn.qkv.weight", ParamGroup::backbone, xavier({3 * dim_, dim_}));
      blk.qkv_b = add_param(n + ".attn.qkv.bias", ParamGroup::backbone, Tensor({3 * dim_}, 0.0));
      blk.proj_w = add_param(n + ".attn.proj.weight", ParamGroup::backbone, xavier({dim_, dim_}));
      blk.proj_b = add_param(n + ".attn.proj.bias", ParamGroup::backbone, Tensor({dim_}, 0.0));
      blk.ln2_g = add_param(n + ".ln2.weight", ParamGroup::backbone, Tensor({dim_}, 1.0));
      blk.ln2_b = add_param(n + ".ln2.bias", ParamGroup::backbone, Tensor({dim_}, 0.0));
      blk.fc1_w = add_param(n + ".mlp.fc1.weight", ParamGroup::backbone, xavier({2 * dim_, dim_}));
      blk.fc1_b = add_param(n + ".mlp.fc1.bias", ParamGroup::backbone, Tensor({2 * dim_}, 0.0));
      blk.fc2_w = add_param(n + ".mlp.fc2.weight", ParamGroup::backbone, xavier({dim_, 2 * dim_}));
      blk.fc2_b = add_param(n + ".mlp.fc2.bias", ParamGroup::backbone, Tensor({dim_}, 0.0));
      blocks_.push_back(blk);
    }
    norm_g_ = add_param("norm.weight", ParamGroup::backbone, Tensor({dim_}, 1.0));
    norm_b_ = add_param("norm.bias", ParamGroup::backbone, Tensor({dim_}, 0.0));

    const int c = spec.width;
    dec_in_ = add_conv_bn("decoder.proj", ParamGroup::seg_head, dim_, c, 1);
    for (int s = 0; s < spec.depth; ++s) {
      dec_.push_back(add_conv_bn("decoder.up" + std::to_string(s), ParamGroup::seg_head, s + 1 == spec.depth ? c + 1 : c, c, 1));
    }
    seg_w_ = add_param("seg_head.weight", ParamGroup::seg_head, kaiming({spec.c_seg, c, 1, 1}, c));
    seg_b_ = add_param("seg_head.bias", ParamGroup::seg_head, Tensor({spec.c_seg}, 0.0));
    cls_w_ = add_param("cls_head.weight", ParamGroup::cls_head, kaiming({spec.k_cls, dim_}, 2 * dim_));
    cls_b_ = add_param("cls_head.bias", ParamGroup::cls_head, Tensor({spec.k_cls}, 0.0));
  }

 protected:
  DualHeadOutput forward_impl(const ag::Var& x, bool train) override {
    const int gh = x.dim(2) / patch_, gw = x.dim(3) / patch_;
    ag::Var t = ag::conv2d(x, p(embed_w_), p(embed_b_), {patch_, 0});
    t = ag::map_to_tokens(t);
    Tensor pos = sinusoid_2d(gh, gw, dim_);
    if (t.dim(0) > 1) {
      Tensor tiled = pos;
      for (int b = 1; b < t.dim(0); ++b) tiled = concat_batch(tiled, pos);
      pos = std::move(tiled);
    }
    t = ag::check_finite(ag::add_const(t, pos), "patch_embed");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      const std::string n = "blocks." + std::to_string(b);
      ag::Var h = ag::layer_norm(t, p(blk.ln1_g), p(blk.ln1_b));
      h = ag::self_attention(ag::linear(h, p(blk.qkv_w), p(blk.qkv_b)), spec_.heads);
      t = ag::add(t, ag::linear(h, p(blk.proj_w), p(blk.proj_b)));
      ag::check_finite(t, n + ".attn");
      h = ag::layer_norm(t, p(blk.ln2_g), p(blk.ln2_b));
      h = ag::dropout(ag::gelu(ag::linear(h, p(blk.fc1_w), p(blk.fc1_b))), spec_.dropout, rng(), train);
      t = ag::add(t, ag::linear(h, p(blk.fc2_w), p(blk.fc2_b)));
      ag::check_finite(t, n + ".mlp");
    }
    t = ag::layer_norm(t, p(norm_g_), p(norm_b_));

    // Mean over tokens == global average pooling of the feature map.
    ag::Var fmap = ag::tokens_to_map(t, gh, gw);
    ag::Var cls = ag::linear(ag::global_avg_pool(fmap), p(cls_w_), p(cls_b_));
    ag::check_finite(cls, "cls_head");

    ag::Var h = conv_bn_relu(fmap, dec_in_, train, "decoder.proj");
    for (int s = 0; s < spec_.depth; ++s) {
      h = ag::upsample_bilinear(h, h.dim(2) * 2, h.dim(3) * 2);
      if (s + 1 == spec_.depth) h = ag::concat_channels(h, x);
      h = conv_bn_relu(h, dec_[static_cast<std::size_t>(s)], train, "decoder.up" + std::to_string(s));
    }
    ag::Var seg = ag::conv2d(h, p(seg_w_), p(seg_b_));
    ag::check_finite(seg, "seg_head");
    return {seg, cls};
  }

 private:
  struct Block {
    int ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  Tensor xavier(Shape shape) {
    Tensor t = kaiming(shape, 1);
    const double s = std::sqrt(2.0 / (shape[0] + shape[1])) / std::sqrt(2.0);
    for (double& v : t.values()) v *= s;
    return t;
  }

  int patch_ = 4, dim_ = 32;
  int embed_w_ = 0, embed_b_ = 0, norm_g_ = 0, norm_b_ = 0;
  std::vector<Block> blocks_;
  ConvBn dec_in_{};
  std::vector<ConvBn> dec_;
  int seg_w_ = 0, seg_b_ = 0, cls_w_ = 0, cls_b_ = 0;
};

}  // namespace

std::unique_ptr<Network> build_network(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind == BackboneKind::conv_unet) return std::make_unique<ConvUNet>(spec, seed);
  return std::make_unique<PatchAttentionNet>(spec, seed);
}

ParamGroups param_groups(Network& net) {
  ParamGroups g;
  for (auto& p : net.parameters()) (p.group == ParamGroup::backbone ? g.backbone : g.heads).push_back(&p);
  return g;
}

std::size_t conv_unet_parameter_count(int width, int depth, int c_seg, int k_cls) {
  auto block = [](std::size_t cin, std::size_t cout) { return 9 * cin * cout + 9 * cout * cout + 4 * cout; };
  std::size_t n = 0;
  for (int s = 0; s < depth; ++s) n += block(s == 0 ? 1 : width << (s - 1), width << s);
  for (int s = depth - 2; s >= 0; --s) n += block((width << (s + 1)) + (width << s), width << s);
  n += static_cast<std::size_t>(width) * c_seg + c_seg;
  n += static_cast<std::size_t>(width << (depth - 1)) * k_cls + k_cls;
  return n;
}

std::size_t import_weights(Network& net, const std::filesystem::path& archive, const std::filesystem::path& manifest) {
  const auto arrays = read_array_archive(archive);
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open weight manifest " + manifest.string());
  std::string line;
  std::size_t count = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string external, internal;
    if (!(ls >> external)) continue;
    if (!(ls >> internal)) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) + ": expected 'external internal'");
    }
    auto it = arrays.find(external);
    if (it == arrays.end()) throw std::runtime_error("weight archive has no array '" + external + "'");
    Parameter* param = net.find_parameter(internal);
    if (param != nullptr) {
      if (param->var.shape() != it->second.shape()) {
        throw std::runtime_error("shape mismatch importing " + external + " -> " + internal + ": " +
                                 shape_str(it->second.shape()) + " vs " + shape_str(param->var.shape()));
      }
      param->var.mutable_value() = it->second;
    } else {
      auto buf = std::find_if(net.buffers().begin(), net.buffers().end(), [&](const Buffer& b) { return b.name == internal; });
      if (buf == net.buffers().end()) throw std::runtime_error("network has no parameter or buffer '" + internal + "'");
      if (buf->value.shape() != it->second.shape()) throw std::runtime_error("shape mismatch importing " + external);
      buf->value = it->second;
    }
    ++count;
  }
  return count;
}

}  // namespace fmdacl::models
