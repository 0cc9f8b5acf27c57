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

#include "fmdacl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "fmdacl/checkpoint.hpp"
#include "fmdacl/nn_ops.hpp"

namespace fmdacl::trainer {

namespace fs = std::filesystem;
using models::Network;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  const int h = images.front().dim(2), w = images.front().dim(3);
  Tensor out({static_cast<int>(images.size()), 1, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::copy(images[i].data(), images[i].data() + plane, out.data() + i * plane);
  }
  return out;
}

std::vector<models::Parameter*> all_params(Network& net) {
  std::vector<models::Parameter*> out;
  for (auto& p : net.parameters()) out.push_back(&p);
  return out;
}

struct Snapshot {
  std::vector<Tensor> buffers1, buffers2;
  std::string rng1, rng2, rng;
};

Snapshot take_snapshot(TrainState& s) {
  Snapshot snap;
  for (const auto& b : s.f1->buffers()) snap.buffers1.push_back(b.value);
  for (const auto& b : s.f2->buffers()) snap.buffers2.push_back(b.value);
  snap.rng1 = s.f1->rng().serialize();
  snap.rng2 = s.f2->rng().serialize();
  snap.rng = s.rng.serialize();
  return snap;
}

void restore_snapshot(TrainState& s, const Snapshot& snap) {
  for (std::size_t i = 0; i < snap.buffers1.size(); ++i) s.f1->buffers()[i].value = snap.buffers1[i];
  for (std::size_t i = 0; i < snap.buffers2.size(); ++i) s.f2->buffers()[i].value = snap.buffers2[i];
  s.f1->rng().deserialize(snap.rng1);
  s.f2->rng().deserialize(snap.rng2);
  s.rng.deserialize(snap.rng);
}

void check_gradients(Network& net, const char* role) {
  for (auto& p : net.parameters()) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.node()->grad.values()) {
      if (!std::isfinite(g)) throw NonFiniteError(std::string("gradient of ") + role + "." + p.name);
    }
  }
}

void store_network(Archive& a, const std::string& prefix, const Network& net) {
  for (const auto& p : net.parameters()) a.arrays.emplace_back(prefix + ".param." + p.name, p.var.value());
  for (const auto& b : net.buffers()) a.arrays.emplace_back(prefix + ".buffer." + b.name, b.value);
  a.header.emplace_back("rng." + prefix, net.rng().serialize());
}

void restore_network(const Archive& a, const std::string& prefix, Network& net) {
  auto copy_into = [](Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape()) {
      throw std::runtime_error("checkpoint array " + name + " has shape " + shape_str(src.shape()) + ", expected " +
                               shape_str(dst.shape()));
    }
    dst = src;
  };
  for (auto& p : net.parameters()) {
    const std::string name = prefix + ".param." + p.name;
    copy_into(p.var.mutable_value(), a.require_array(name), name);
  }
  for (auto& b : net.buffers()) {
    const std::string name = prefix + ".buffer." + b.name;
    copy_into(b.value, a.require_array(name), name);
  }
  net.rng().deserialize(a.require_header("rng." + prefix));
}

void store_optimizer(Archive& a, const std::string& prefix, optim::AdamW& opt) {
  a.header.emplace_back(prefix + ".steps", std::to_string(opt.steps()));
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    a.arrays.emplace_back(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
    a.arrays.emplace_back(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
  }
}

void restore_optimizer(const Archive& a, const std::string& prefix, optim::AdamW& opt) {
  opt.set_steps(std::stoll(a.require_header(prefix + ".steps")));
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    const Tensor& m = a.require_array(prefix + ".m." + std::to_string(i));
    const Tensor& v = a.require_array(prefix + ".v." + std::to_string(i));
    if (m.shape() != opt.first_moments()[i].shape() || v.shape() != opt.second_moments()[i].shape()) {
      throw std::runtime_error("checkpoint optimizer state " + prefix + " does not match the network");
    }
    opt.first_moments()[i] = m;
    opt.second_moments()[i] = v;
  }
}

constexpr int kHistoryColumns = 12;

Tensor history_to_tensor(const std::vector<EpochRow>& rows) {
  Tensor t({static_cast<int>(rows.size()), kHistoryColumns});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const EpochRow& e = rows[r];
    const double v[kHistoryColumns] = {static_cast<double>(e.epoch), e.loss.sup1, e.loss.sup2, e.loss.cps,
                                       e.loss.ict, e.loss.dac_align, e.loss.dac_conf, e.loss.total,
                                       e.val_dsc, e.val_nsd, e.val_f1, e.val_score};
    std::copy(v, v + kHistoryColumns, t.data() + r * kHistoryColumns);
  }
  return t;
}

std::vector<EpochRow> history_from_tensor(const Tensor& t) {
  std::vector<EpochRow> rows;
  if (t.rank() != 2 || t.dim(1) != kHistoryColumns) throw std::runtime_error("malformed checkpoint history");
  for (int r = 0; r < t.dim(0); ++r) {
    const double* v = t.data() + static_cast<std::size_t>(r) * kHistoryColumns;
    EpochRow e;
    e.epoch = static_cast<int>(v[0]);
    e.loss = {v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
    e.val_dsc = v[8];
    e.val_nsd = v[9];
    e.val_f1 = v[10];
    e.val_score = v[11];
    rows.push_back(e);
  }
  return rows;
}

config::RunConfig config_from_archive(const Archive& a) {
  std::string text;
  for (const auto& [k, v] : a.header) {
    if (k.rfind("config.", 0) == 0) text += k.substr(7) + "=" + v + "\n";
  }
  if (text.empty()) throw std::runtime_error("checkpoint carries no configuration");
  return config::parse_config(text);
}

void check_kind(const Archive& a, const fs::path& path) {
  const std::string* kind = a.header_value("format");
  if (kind == nullptr || *kind != "fmdacl-checkpoint") throw std::runtime_error(path.string() + " is not a training checkpoint");
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string metrics_csv_row(const EpochRow& r) {
  std::string s = std::to_string(r.epoch);
  for (double v : {r.loss.sup1, r.loss.sup2, r.loss.cps, r.loss.ict, r.loss.dac_align, r.loss.dac_conf, r.loss.total,
                   r.val_dsc, r.val_nsd, r.val_f1, r.val_score}) {
    s += "," + fmt(v);
  }
  return s;
}

TrainState make_state(const config::RunConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  const std::uint64_t seed = cfg.train.seed;
  s.f1 = models::build_network(cfg.f1, mix_seed(seed, 0xF1));
  s.f2 = models::build_network(cfg.f2, mix_seed(seed, 0xF2));
  s.teacher = teacher::ema_init(*s.f2, cfg.train.ema_decay);
  const optim::AdamWOptions adam{cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_eps};
  auto groups = models::param_groups(*s.f1);
  s.opt1 = std::make_unique<optim::AdamW>(
      std::vector<optim::ParamGroupConfig>{{groups.backbone, cfg.train.lr_backbone_f1, cfg.train.wd_f1},
                                           {groups.heads, cfg.train.lr_heads_f1, cfg.train.wd_f1}},
      adam);
  s.opt2 = std::make_unique<optim::AdamW>(
      std::vector<optim::ParamGroupConfig>{{all_params(*s.f2), cfg.train.lr_f2, cfg.train.wd_f2}}, adam);
  s.rng = Rng(mix_seed(seed, 0x7261));
  return s;
}

Batch assemble_batch(const data::Dataset& ds, const data::BatchPlan& plan, const config::RunConfig& cfg) {
  const data::AugmentPolicy policy{cfg.data.hflip_prob, cfg.data.max_rotate_deg, ds.height(), ds.width()};
  auto stream = [&](std::size_t slot, std::uint64_t kind) {
    return Rng(mix_seed({cfg.train.seed, static_cast<std::uint64_t>(plan.epoch), static_cast<std::uint64_t>(plan.step),
                         static_cast<std::uint64_t>(slot), kind}));
  };
  Batch b;
  std::vector<Tensor> images;
  std::vector<IndexMask> masks;
  std::vector<LabelMatrix> labels;
  for (std::size_t k = 0; k < plan.labeled.size(); ++k) {
    const std::size_t idx = plan.labeled[k];
    if (cfg.data.augment) {
      Rng rng = stream(k, 0);
      auto [img, mask] = data::augment(ds.image(idx), ds.mask(idx), policy, rng);
      images.push_back(std::move(img));
      masks.push_back(std::move(*mask));
    } else {
      images.push_back(ds.image(idx));
      masks.push_back(ds.mask(idx));
    }
    labels.push_back(ds.labels(idx));
  }
  b.labeled_x = stack_images(images);
  b.labeled_y = concat_masks(masks);
  b.labeled_c = concat_labels(labels);

  images.clear();
  for (std::size_t k = 0; k < plan.unlabeled.size(); ++k) {
    const std::size_t idx = plan.unlabeled[k];
    if (cfg.data.augment) {
      Rng rng = stream(k, 1);
      images.push_back(data::augment(ds.image(idx), std::nullopt, policy, rng).first);
    } else {
      images.push_back(ds.image(idx));
    }
  }
  b.unlabeled_x = stack_images(images);
  return b;
}

Schedule schedule_at(const config::RunConfig& cfg, int epoch, std::int64_t step_in_run, std::int64_t total_steps) {
  Schedule s;
  if (cfg.train.rampup_epochs > 0) {
    const double t = std::min(1.0, static_cast<double>(epoch) / cfg.train.rampup_epochs);
    s.consistency = std::exp(-5.0 * (1.0 - t) * (1.0 - t));
  }
  if (cfg.train.cosine_lr && total_steps > 0) {
    s.lr = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step_in_run) / static_cast<double>(total_steps)));
  }
  return s;
}

StepResult train_step(TrainState& state, const Batch& batch, const Schedule& schedule) {
  const config::RunConfig& cfg = state.config;
  const losses::LossWeights w{cfg.loss.weights.lambda_cps * schedule.consistency,
                              cfg.loss.weights.tau_ict * schedule.consistency,
                              cfg.loss.weights.beta_dac * schedule.consistency, cfg.loss.weights.conf_sign};
  const int bu = batch.unlabeled_x.dim(0);
  if (bu < 2 || bu % 2 != 0) throw std::invalid_argument("unlabeled batch size must be even, got " + std::to_string(bu));
  batch.labeled_y.validate(cfg.f1.c_seg);

  StepResult result;
  const Snapshot snap = take_snapshot(state);
  try {
    losses::LossReport& r = result.report;
    const auto out1_l = state.f1->forward(batch.labeled_x, true);
    const auto out2_l = state.f2->forward(batch.labeled_x, true);
    const ag::Var sup1 = losses::sup_loss(out1_l, batch.labeled_y, batch.labeled_c);
    const ag::Var sup2 = losses::sup_loss(out2_l, batch.labeled_y, batch.labeled_c);
    std::vector<ag::Var> terms{sup1, sup2};
    std::vector<double> weights{1.0, 1.0};
    r.sup1 = sup1.item();
    r.sup2 = sup2.item();

    if (w.lambda_cps > 0.0 || w.beta_dac > 0.0) {
      const auto out1_u = state.f1->forward(batch.unlabeled_x, true);
      const auto out2_u = state.f2->forward(batch.unlabeled_x, true);
      if (w.lambda_cps > 0.0) {
        const ag::Var cps = losses::cps_loss(out1_u, out2_u, cfg.loss.cls_threshold);
        terms.push_back(cps);
        weights.push_back(w.lambda_cps);
        r.cps = cps.item();
      }
      if (w.beta_dac > 0.0) {
        const auto [align, conf] =
            losses::dac_loss(ag::softmax_channels(out1_u.seg), ag::softmax_channels(out2_u.seg));
        terms.push_back(align);
        weights.push_back(w.beta_dac);
        terms.push_back(conf);
        weights.push_back(w.beta_dac * w.conf_sign);
        r.dac_align = align.item();
        r.dac_conf = conf.item();
      }
    }

    if (w.tau_ict > 0.0) {
      const int half = bu / 2;
      const Tensor xi = batch.unlabeled_x.slice_batch(0, half);
      const Tensor xj = batch.unlabeled_x.slice_batch(half, bu);
      const Tensor ti = teacher::teacher_predict(state.teacher, xi).first;
      const Tensor tj = teacher::teacher_predict(state.teacher, xj).first;
      const double sigma = cfg.loss.ict_sample_sigma
                               ? state.rng.beta(cfg.loss.ict_beta_alpha, cfg.loss.ict_beta_alpha)
                               : cfg.loss.ict_sigma;
      const auto student = state.f2->forward(mix(xi, xj, sigma), true);
      const ag::Var ict = losses::ict_loss(student.seg, ti, tj, sigma);
      terms.push_back(ict);
      weights.push_back(w.tau_ict);
      r.ict = ict.item();
    }

    r.total = losses::total_loss(r, w);
    ag::Var total = ag::weighted_sum(terms, weights);
    total.backward();
    check_gradients(*state.f1, "f1");
    check_gradients(*state.f2, "f2");
    if (cfg.train.grad_clip > 0.0) {
      optim::clip_grad_norm(all_params(*state.f1), cfg.train.grad_clip);
      optim::clip_grad_norm(all_params(*state.f2), cfg.train.grad_clip);
    }
    state.opt1->step(schedule.lr);
    state.opt2->step(schedule.lr);
    state.opt1->zero_grad();
    state.opt2->zero_grad();
    teacher::ema_update(state.teacher, *state.f2);
    ++state.global_step;
    result.ok = true;
  } catch (const NonFiniteError& e) {
    state.f1->zero_grad();
    state.f2->zero_grad();
    restore_snapshot(state, snap);
    result.ok = false;
    result.diagnostic = std::string("non-finite value: ") + e.what();
  }
  return result;
}

Predictor f1_predictor(Network& f1, double cls_threshold) {
  return [&f1, cls_threshold](const Tensor& x, const std::vector<std::size_t>&) {
    ag::NoGradGuard guard;
    const auto out = f1.forward(x, false);
    return std::make_pair(argmax_mask(softmax_seg(out.seg.value())), binarize_cls(out.cls.value(), cls_threshold));
  };
}

metrics::MetricsAccumulator evaluate(const data::Dataset& ds, data::Split split, int c_seg, const Predictor& predictor,
                                     const metrics::MetricOptions& options, std::size_t chunk) {
  metrics::MetricsAccumulator acc(c_seg, ds.k_cls(), options);
  const std::vector<std::size_t> indices = ds.indices(split);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
    const std::size_t end = std::min(indices.size(), begin + chunk);
    const std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                        indices.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<Tensor> images;
    std::vector<IndexMask> masks;
    std::vector<LabelMatrix> labels;
    std::vector<std::string> ids;
    for (std::size_t idx : part) {
      images.push_back(ds.image(idx));
      masks.push_back(ds.mask(idx));
      labels.push_back(ds.labels(idx));
      ids.push_back(ds.records()[idx].id);
    }
    const auto [pred_mask, pred_labels] = predictor(stack_images(images), part);
    acc.add(pred_mask, concat_masks(masks), pred_labels, concat_labels(labels), ids);
  }
  return acc;
}

metrics::MetricsReport validate(TrainState& state, const data::Dataset& ds) {
  const config::RunConfig& cfg = state.config;
  const metrics::MetricOptions options{cfg.eval.nsd_tol, cfg.eval.empty_as_perfect};
  return evaluate(ds, data::Split::val, cfg.f1.c_seg, f1_predictor(*state.f1, 0.5), options).finalize(cfg.eval.s_time);
}

void save_checkpoint(const fs::path& path, const TrainState& state) {
  Archive a;
  a.header.emplace_back("format", "fmdacl-checkpoint");
  a.header.emplace_back("epoch", std::to_string(state.epoch));
  a.header.emplace_back("global_step", std::to_string(state.global_step));
  a.header.emplace_back("best_epoch", std::to_string(state.best_epoch));
  a.header.emplace_back("best_value", hex(state.best_value));
  a.header.emplace_back("teacher.step", std::to_string(state.teacher.step));
  a.header.emplace_back("teacher.decay", hex(state.teacher.decay));
  a.header.emplace_back("rng.train", state.rng.serialize());
  if (!state.history.empty()) {
    const EpochRow& last = state.history.back();
    a.header.emplace_back("metrics.val_dsc", fmt(last.val_dsc));
    a.header.emplace_back("metrics.val_nsd", fmt(last.val_nsd));
    a.header.emplace_back("metrics.val_f1", fmt(last.val_f1));
    a.header.emplace_back("metrics.val_score", fmt(last.val_score));
    a.header.emplace_back("metrics.nsd_tolerance", fmt(state.config.eval.nsd_tol));
  }
  std::istringstream cfg_lines(config::to_text(state.config));
  for (std::string line; std::getline(cfg_lines, line);) {
    const auto eq = line.find('=');
    a.header.emplace_back("config." + line.substr(0, eq), line.substr(eq + 1));
  }
  store_network(a, "f1", *state.f1);
  store_network(a, "f2", *state.f2);
  store_network(a, "teacher", *state.teacher.shadow);
  store_optimizer(a, "opt1", *state.opt1);
  store_optimizer(a, "opt2", *state.opt2);
  a.arrays.emplace_back("history", history_to_tensor(state.history));
  write_archive(path, a);
}

TrainState load_state(const fs::path& path) {
  const Archive a = read_archive(path);
  check_kind(a, path);
  TrainState s = make_state(config_from_archive(a));
  restore_network(a, "f1", *s.f1);
  restore_network(a, "f2", *s.f2);
  restore_network(a, "teacher", *s.teacher.shadow);
  s.teacher.step = std::stoll(a.require_header("teacher.step"));
  s.teacher.decay = std::strtod(a.require_header("teacher.decay").c_str(), nullptr);
  restore_optimizer(a, "opt1", *s.opt1);
  restore_optimizer(a, "opt2", *s.opt2);
  s.rng.deserialize(a.require_header("rng.train"));
  s.epoch = std::stoi(a.require_header("epoch"));
  s.global_step = std::stoll(a.require_header("global_step"));
  s.best_epoch = std::stoi(a.require_header("best_epoch"));
  s.best_value = std::strtod(a.require_header("best_value").c_str(), nullptr);
  s.history = history_from_tensor(a.require_array("history"));
  return s;
}

std::pair<config::RunConfig, std::unique_ptr<Network>> load_inference_network(const fs::path& path) {
  const Archive a = read_archive(path);
  check_kind(a, path);
  config::RunConfig cfg = config_from_archive(a);
  auto f1 = models::build_network(cfg.f1, 0);
  restore_network(a, "f1", *f1);
  return {std::move(cfg), std::move(f1)};
}

FitResult fit(const config::RunConfig& cfg_in, const FitOptions& options) {
  auto emit = [&](const std::string& msg) {
    if (options.on_event) options.on_event(msg);
  };
  TrainState state = options.resume ? load_state(*options.resume) : make_state(cfg_in);
  if (options.resume && config::to_text(state.config) != config::to_text(cfg_in)) {
    emit("resume: using the configuration stored in " + options.resume->string());
  }
  const config::RunConfig& cfg = state.config;

  auto records = data::load_manifest(options.data_root, cfg.f1.k_cls);
  const data::Dataset ds(std::move(records), cfg.data.size, cfg.data.size, cfg.f1.k_cls);
  if (ds.resized_count() > 0) {
    emit("resized " + std::to_string(ds.resized_count()) + " images to " + std::to_string(cfg.data.size) + "x" +
         std::to_string(cfg.data.size));
  }
  if (ds.indices(data::Split::val).empty()) throw std::runtime_error("dataset has no val records");

  fs::create_directories(options.out_dir / "ckpt");
  write_text_atomic(options.out_dir / "config.txt", config::to_text(cfg));
  write_text_atomic(options.out_dir / "seed.txt", std::to_string(cfg.train.seed) + "\n");

  const data::BatchStream stream(ds.indices(data::Split::labeled), ds.indices(data::Split::unlabeled),
                                 cfg.data.batch_labeled, cfg.data.batch_unlabeled, cfg.train.seed);
  const std::int64_t per_epoch = stream.steps_per_epoch();
  const std::int64_t total_steps = per_epoch * cfg.train.epochs;

  FitResult result;
  for (int e = state.epoch; e < cfg.train.epochs; ++e) {
    if (options.stop_after_epoch && e >= *options.stop_after_epoch) break;
    const auto started = std::chrono::steady_clock::now();
    EpochRow row;
    row.epoch = e + 1;
    int ok = 0;
    for (const auto& plan : stream.epoch(e)) {
      const Batch batch = assemble_batch(ds, plan, cfg);
      const StepResult r = train_step(state, batch, schedule_at(cfg, e, e * per_epoch + plan.step, total_steps));
      ++result.steps;
      if (!r.ok) {
        ++result.failed_steps;
        emit("epoch " + std::to_string(e + 1) + " step " + std::to_string(plan.step) + " skipped: " + r.diagnostic);
        continue;
      }
      ++ok;
      row.loss.sup1 += r.report.sup1;
      row.loss.sup2 += r.report.sup2;
      row.loss.cps += r.report.cps;
      row.loss.ict += r.report.ict;
      row.loss.dac_align += r.report.dac_align;
      row.loss.dac_conf += r.report.dac_conf;
      row.loss.total += r.report.total;
    }
    if (ok > 0) {
      for (double* v : {&row.loss.sup1, &row.loss.sup2, &row.loss.cps, &row.loss.ict, &row.loss.dac_align,
                        &row.loss.dac_conf, &row.loss.total}) {
        *v /= ok;
      }
    }
    const metrics::MetricsReport rep = validate(state, ds);
    row.val_dsc = rep.dsc;
    row.val_nsd = rep.nsd;
    row.val_f1 = rep.f1;
    row.val_score = rep.score;
    state.history.push_back(row);
    state.epoch = e + 1;

    const double value = cfg.train.select_metric == "dsc" ? rep.dsc : rep.score;
    const bool improved = state.best_epoch == 0 || value > state.best_value;
    if (improved) {
      state.best_epoch = e + 1;
      state.best_value = value;
    }

    std::string csv = std::string(kMetricsHeader) + "\n";
    for (const auto& h : state.history) csv += metrics_csv_row(h) + "\n";
    write_text_atomic(options.out_dir / "metrics.csv", csv);
    if (improved) save_checkpoint(options.out_dir / "ckpt" / "best.ckpt", state);
    save_checkpoint(options.out_dir / "ckpt" / "last.ckpt", state);
    if (cfg.train.checkpoint_every > 0 && (e + 1) % cfg.train.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", e + 1);
      save_checkpoint(options.out_dir / "ckpt" / name, state);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    char line[256];
    std::snprintf(line, sizeof line,
                  "epoch %d/%d loss %.4f val dsc %.2f nsd %.2f f1 %.2f score %.2f (nsd tol %g) %.1fs%s", e + 1,
                  cfg.train.epochs, row.loss.total, rep.dsc, rep.nsd, rep.f1, rep.score, rep.nsd_tolerance, seconds,
                  improved ? " *" : "");
    emit(line);
  }
  result.best_epoch = state.best_epoch;
  result.best_value = state.best_value;
  result.history = state.history;
  result.unlabeled_mask_reads = ds.mask_reads(data::Split::unlabeled);
  return result;
}

std::vector<Prediction> predict(Network& f1, const config::RunConfig& cfg, const std::vector<GrayImage>& images,
                                const std::function<void(std::size_t, const std::string&)>& on_notice) {
  std::vector<Prediction> out;
  const int size = cfg.data.size;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const GrayImage& img = images[i];
    const bool resized = img.height != size || img.width != size;
    if (resized && on_notice) {
      on_notice(i, "image " + std::to_string(img.height) + "x" + std::to_string(img.width) + " resized to " +
                       std::to_string(size) + "x" + std::to_string(size));
    }
    const Tensor x = data::image_to_tensor(img.pixels, img.height, img.width, size, size);
    ag::NoGradGuard guard;
    const auto res = f1.forward(x, false);
    Prediction p;
    p.mask = argmax_mask(softmax_seg(res.seg.value()));
    if (resized) p.mask = data::resize_mask(p.mask, img.height, img.width);
    p.labels = binarize_cls(res.cls.value(), 0.5).data;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fmdacl::trainer
