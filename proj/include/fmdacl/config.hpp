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
#include <string>
#include <vector>

#include "fmdacl/losses.hpp"
#include "fmdacl/models.hpp"

// Run configuration: a flat `section.key=value` document. '#' starts a
// comment; blank lines are ignored; unknown keys are errors.
namespace fmdacl::config {

struct DataConfig {
  int size = 256;
  double hflip_prob = 0.5;
  double max_rotate_deg = 20.0;
  bool augment = true;
  int batch_labeled = 1;
  int batch_unlabeled = 4;
};

struct TrainConfig {
  int epochs = 300;
  std::uint64_t seed = 0;
  double lr_backbone_f1 = 1e-4;
  double lr_heads_f1 = 1e-3;
  double wd_f1 = 0.01;
  double lr_f2 = 1e-3;
  double wd_f2 = 1e-4;
  double ema_decay = 0.99;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Max global gradient norm per network; 0 disables clipping.
  double grad_clip = 0.0;
  bool cosine_lr = false;
  /// Consistency-weight ramp-up length in epochs; 0 disables it.
  int rampup_epochs = 0;
  /// "score" or "dsc".
  std::string select_metric = "score";
  /// Also keep ckpt/epoch_NNNN.ckpt every this many epochs; 0 disables.
  int checkpoint_every = 0;
};

struct LossConfig {
  losses::LossWeights weights;
  double cls_threshold = 0.5;
  double ict_sigma = 0.5;
  /// Draw the mix ratio from Beta(alpha, alpha) per step instead of the fixed value.
  bool ict_sample_sigma = false;
  double ict_beta_alpha = 1.0;
};

struct EvalConfig {
  double nsd_tol = 1.0;
  double s_time = 0.0;
  bool empty_as_perfect = false;
};

struct RunConfig {
  DataConfig data;
  TrainConfig train;
  LossConfig loss;
  models::BackboneSpec f1;
  models::BackboneSpec f2;
  EvalConfig eval;

  RunConfig();
  void validate() const;
};

/// Raised for malformed documents; the message names the key path or line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sets one key from its textual value.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Defaults overridden by the document, then validated.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Every key with its resolved value; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);
/// Key names in document order.
std::vector<std::string> known_keys();

}  // namespace fmdacl::config
