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

#include <string>

#include "fmdacl/autograd.hpp"

// Differentiable layers used by the backbones. Images are NCHW, token
// sequences are [B, N, D].
namespace fmdacl::ag {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// x [B, Ci, H, W], weight [Co, Ci, kh, kw], bias [Co] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt = {});

/// Batch normalization over (B, H, W) per channel. In training mode batch
/// statistics are used and the running buffers are updated in place
/// (momentum, unbiased variance); in evaluation mode the running buffers are used.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool train, double momentum = 0.1, double eps = 1e-5);

Var relu(const Var& x);
/// Exact (erf) GELU.
Var gelu(const Var& x);
/// 2x2 max pooling, stride 2. H and W must be even.
Var max_pool2(const Var& x);
/// Bilinear resize with half-pixel centers (align_corners = false).
Var upsample_bilinear(const Var& x, int out_h, int out_w);
Var concat_channels(const Var& a, const Var& b);
/// [B, C, H, W] -> [B, C].
Var global_avg_pool(const Var& x);
/// x [..., in], weight [out, in], bias [out] -> [..., out].
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Normalizes over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Scaled dot-product self-attention. qkv [B, N, 3D] packed as (q | k | v),
/// each split into `heads` contiguous chunks. Returns [B, N, D].
Var self_attention(const Var& qkv, int heads);
/// Inverted dropout; identity when !train or p == 0.
Var dropout(const Var& x, double p, Rng& rng, bool train);
/// [B, C, h, w] -> [B, h*w, C].
Var map_to_tokens(const Var& x);
/// [B, h*w, C] -> [B, C, h, w].
Var tokens_to_map(const Var& x, int h, int w);
/// Softmax along axis 1 of a [B, C, H, W] tensor.
Var softmax_channels(const Var& logits);

/// Throws NonFiniteError naming `layer` when x holds NaN/Inf.
const Var& check_finite(const Var& x, const std::string& layer);

}  // namespace fmdacl::ag
