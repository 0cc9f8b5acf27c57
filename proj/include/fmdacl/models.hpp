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
#include <memory>
#include <string>
#include <vector>

#include "fmdacl/autograd.hpp"
#include "fmdacl/losses.hpp"

namespace fmdacl::models {

using losses::DualHeadOutput;

enum class BackboneKind { conv_unet, patch_attention };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& s);

/// Architecture description.
///
/// conv_unet: `depth` resolution levels joined by 2x2 max pooling, channel
/// count width * 2^level, decoder with bilinear upsampling and skip
/// concatenation. Total downsampling 2^(depth - 1).
///
/// patch_attention: non-overlapping patch embedding of size 2^depth, a stack
/// of pre-norm self-attention blocks of width width * 2^(depth - 1), then a
/// pointwise decoder that upsamples 2x per stage. Total downsampling 2^depth.
struct BackboneSpec {
  BackboneKind kind = BackboneKind::conv_unet;
  int width = 16;
  int depth = 3;
  int c_seg = 15;
  int k_cls = 7;
  double dropout = 0.0;
  int heads = 2;
  int blocks = 2;

  int downsampling_factor() const;
  /// Structural checks (width, depth, head divisibility).
  void validate() const;
  /// Throws when an H x W input cannot pass through the network.
  void validate_input(int h, int w) const;
};

enum class ParamGroup { backbone, seg_head, cls_head };

struct Parameter {
  std::string name;
  ParamGroup group;
  ag::Var var;
};

struct Buffer {
  std::string name;
  Tensor value;
};

/// Two-headed network: per-pixel class logits and per-image label logits.
class Network {
 public:
  virtual ~Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const BackboneSpec& spec() const { return spec_; }

  /// x is [B, 1, H, W]. In training mode dropout is active and batch-norm
  /// uses and updates batch statistics. Throws NonFiniteError naming the
  /// first layer that produced NaN/Inf.
  DualHeadOutput forward(const ag::Var& x, bool train);
  DualHeadOutput forward(const Tensor& x, bool train) { return forward(ag::Var(x), train); }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }
  const Parameter* find_parameter(const std::string& name) const;
  Parameter* find_parameter(const std::string& name);

  std::size_t parameter_count() const;
  void zero_grad();

  /// Dropout stream.
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  /// Deep copy: parameters, buffers and RNG state.
  std::unique_ptr<Network> clone() const;
  /// Copies parameter values, buffers and RNG state from a network of identical topology.
  void copy_state_from(const Network& other);

 protected:
  Network(BackboneSpec spec, std::uint64_t seed);

  int add_param(const std::string& name, ParamGroup group, Tensor init);
  int add_buffer(const std::string& name, Tensor init);
  const ag::Var& p(int index) const { return params_[static_cast<std::size_t>(index)].var; }
  Tensor& buf(int index) { return buffers_[static_cast<std::size_t>(index)].value; }

  Tensor kaiming(Shape shape, int fan_in);

  struct ConvBn {
    int weight, gamma, beta, mean, var;
    int padding;
  };
  ConvBn add_conv_bn(const std::string& name, ParamGroup group, int cin, int cout, int k);
  ag::Var conv_bn_relu(const ag::Var& x, const ConvBn& layer, bool train, const std::string& name);

  virtual DualHeadOutput forward_impl(const ag::Var& x, bool train) = 0;

  BackboneSpec spec_;

 private:
  Rng init_rng_;
  Rng rng_;
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
};

/// Deterministic in (spec, seed).
std::unique_ptr<Network> build_network(const BackboneSpec& spec, std::uint64_t seed);

struct ParamGroups {
  std::vector<Parameter*> backbone;
  std::vector<Parameter*> heads;
};

/// Partition into backbone and task heads (segmentation + classification).
/// For patch_attention the pointwise decoder belongs to the segmentation head.
ParamGroups param_groups(Network& net);

/// Closed-form parameter count of a conv_unet with a single input channel.
std::size_t conv_unet_parameter_count(int width, int depth, int c_seg, int k_cls);

/// Loads external weights. `archive` is a named-array file (see
/// checkpoint.hpp); `manifest` has one `external_name internal_name` pair per
/// line, '#' comments allowed. Returns the number of tensors imported.
std::size_t import_weights(Network& net, const std::filesystem::path& archive, const std::filesystem::path& manifest);

}  // namespace fmdacl::models
