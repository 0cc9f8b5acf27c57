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
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmdacl/config.hpp"
#include "fmdacl/data.hpp"
#include "fmdacl/metrics.hpp"
#include "fmdacl/models.hpp"
#include "fmdacl/optim.hpp"
#include "fmdacl/png_io.hpp"
#include "fmdacl/teacher.hpp"

namespace fmdacl::trainer {

/// One logged epoch.
struct EpochRow {
  int epoch = 0;  // 1-based
  losses::LossReport loss;
  double val_dsc = 0.0;
  double val_nsd = 0.0;
  double val_f1 = 0.0;
  double val_score = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,sup1,sup2,cps,ict,dac_align,dac_conf,total,val_dsc,val_nsd,val_f1,val_score";
std::string metrics_csv_row(const EpochRow& row);

/// Everything that evolves during training.
struct TrainState {
  config::RunConfig config;
  std::unique_ptr<models::Network> f1;
  std::unique_ptr<models::Network> f2;
  teacher::EmaState teacher;
  std::unique_ptr<optim::AdamW> opt1;
  std::unique_ptr<optim::AdamW> opt2;
  /// Draws that are not tied to a sample (mix ratio when sampled).
  Rng rng;
  int epoch = 0;  // completed epochs
  std::int64_t global_step = 0;
  int best_epoch = 0;  // 0 = none yet
  double best_value = 0.0;
  std::vector<EpochRow> history;
};

/// Fresh networks, teacher and optimizers from a validated configuration.
TrainState make_state(const config::RunConfig& cfg);

/// Images and targets for one optimization step.
struct Batch {
  Tensor labeled_x;    // [Bl, 1, H, W]
  IndexMask labeled_y;  // [Bl, H, W]
  LabelMatrix labeled_c;  // [Bl, K]
  Tensor unlabeled_x;  // [Bu, 1, H, W]
};

/// Gathers and augments the records of a plan. Each sample draws from its own
/// stream derived from (seed, epoch, step, slot) so results do not depend on
/// assembly order.
Batch assemble_batch(const data::Dataset& ds, const data::BatchPlan& plan, const config::RunConfig& cfg);

struct StepResult {
  bool ok = false;
  losses::LossReport report;
  std::string diagnostic;
};

/// Weight multiplier and learning-rate multiplier at a given step.
struct Schedule {
  double consistency = 1.0;
  double lr = 1.0;
};
Schedule schedule_at(const config::RunConfig& cfg, int epoch, std::int64_t step_in_run, std::int64_t total_steps);

/// One optimization step of both networks on the full objective, then the
/// teacher update. Terms whose weight is zero are not evaluated and report 0.
/// On a non-finite input, loss or gradient nothing is updated and the
/// diagnostic names the failing term or layer.
StepResult train_step(TrainState& state, const Batch& batch, const Schedule& schedule = {});

/// Maps a [B, 1, H, W] image batch to hard predictions.
using Predictor = std::function<std::pair<IndexMask, LabelMatrix>(const Tensor& x, const std::vector<std::size_t>& indices)>;

/// f1 in evaluation mode: argmax of the segmentation map and thresholded labels.
Predictor f1_predictor(models::Network& f1, double cls_threshold = 0.5);

/// Scores a predictor on one split, `chunk` records per call.
metrics::MetricsAccumulator evaluate(const data::Dataset& ds, data::Split split, int c_seg, const Predictor& predictor,
                                     const metrics::MetricOptions& options, std::size_t chunk = 8);

/// f1-only validation on the val split.
metrics::MetricsReport validate(TrainState& state, const data::Dataset& ds);

/// Checkpoint archive round trip. `load_state` rebuilds networks from the
/// stored configuration.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_state(const std::filesystem::path& path);
/// Only the configuration and f1 are restored; f2 and the teacher are never read.
std::pair<config::RunConfig, std::unique_ptr<models::Network>> load_inference_network(const std::filesystem::path& path);

struct FitOptions {
  std::filesystem::path data_root;
  std::filesystem::path out_dir;
  /// Continue from this checkpoint instead of starting fresh.
  std::optional<std::filesystem::path> resume;
  /// Stop after this many completed epochs (for interrupted-run tests); the
  /// configured epoch count still defines schedules.
  std::optional<int> stop_after_epoch;
  /// Progress and notices; the library never prints.
  std::function<void(const std::string&)> on_event;
};

struct FitResult {
  int best_epoch = 0;
  double best_value = 0.0;
  std::vector<EpochRow> history;
  std::size_t failed_steps = 0;
  std::size_t steps = 0;
  /// Mask reads per split during the run (audit).
  std::size_t unlabeled_mask_reads = 0;
};

/// Trains for config.train.epochs, validating after every epoch. Writes into
/// out_dir: config.txt, seed.txt, metrics.csv, ckpt/last.ckpt, ckpt/best.ckpt.
FitResult fit(const config::RunConfig& cfg, const FitOptions& options);

struct Prediction {
  IndexMask mask;  // [1, H, W] at the input image size
  std::vector<std::uint8_t> labels;
};

/// f1-only inference on raw images. Images whose size differs from the
/// configured one are resized in and the mask resized back; `on_notice`
/// receives one message per such image.
std::vector<Prediction> predict(models::Network& f1, const config::RunConfig& cfg, const std::vector<GrayImage>& images,
                                const std::function<void(std::size_t, const std::string&)>& on_notice = {});

}  // namespace fmdacl::trainer
