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

// fmdacl command-line entry point: gen-data, train, eval, predict, ablate.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fmdacl/config.hpp"
#include "fmdacl/data.hpp"
#include "fmdacl/metrics.hpp"
#include "fmdacl/png_io.hpp"
#include "fmdacl/synthetic.hpp"
#include "fmdacl/trainer.hpp"

namespace fs = std::filesystem;
using namespace fmdacl;

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

config::RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw config::ConfigError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  for (const auto& o : overrides) text += "\n" + o;
  if (const char* env = std::getenv("FMDACL_SEED"); env != nullptr && *env != '\0') {
    text += std::string("\ntrain.seed=") + env;
  }
  return config::parse_config(text);
}

void write_labels_csv(const fs::path& path, int k, const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id";
  for (int i = 0; i < k; ++i) out << ",c" << i;
  out << "\n";
  for (const auto& [id, bits] : rows) {
    out << id;
    for (auto b : bits) out << "," << static_cast<int>(b);
    out << "\n";
  }
}

std::map<std::string, std::vector<std::uint8_t>> read_labels_csv(const fs::path& path, int k) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::map<std::string, std::vector<std::uint8_t>> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, cell;
    std::getline(ls, id, ',');
    std::vector<std::uint8_t> bits;
    while (std::getline(ls, cell, ',')) bits.push_back(cell == "1" ? 1 : 0);
    if (static_cast<int>(bits.size()) != k) throw std::runtime_error(path.string() + ": row '" + id + "' has wrong width");
    out[id] = bits;
  }
  return out;
}

int cmd_gen_data(int n, int size, std::uint64_t seed, double labeled_frac, double val_frac, const std::string& out) {
  synthetic::SyntheticOptions opt;
  opt.n = n;
  opt.height = opt.width = size;
  opt.seed = seed;
  opt.labeled_frac = labeled_frac;
  opt.val_frac = val_frac;
  const auto c = synthetic::gen_synthetic(out, opt);
  std::cout << "wrote " << n << " images (" << size << "x" << size << ") to " << out << "\n"
            << "labeled " << c.labeled << "  unlabeled " << c.unlabeled << "  val " << c.val << "  test " << c.test
            << "\n";
  return 0;
}

int cmd_train(const config::RunConfig& cfg, const std::string& data, const std::string& out, const std::string& resume,
              int stop_after) {
  trainer::FitOptions opt;
  opt.data_root = data;
  opt.out_dir = out;
  if (!resume.empty()) opt.resume = resume;
  if (stop_after > 0) opt.stop_after_epoch = stop_after;
  opt.on_event = [](const std::string& msg) { std::cout << msg << std::endl; };
  const auto r = trainer::fit(cfg, opt);
  std::cout << "best epoch " << r.best_epoch << " (" << cfg.train.select_metric << " " << fmt("%.2f", r.best_value)
            << "), " << r.steps << " steps, " << r.failed_steps << " skipped; checkpoints in " << out << "/ckpt\n";
  return 0;
}

void print_report(const metrics::MetricsReport& rep, std::ostream& os) {
  os << "DSC " << fmt("%.2f", rep.dsc) << "  NSD " << fmt("%.2f", rep.nsd) << " (tolerance " << rep.nsd_tolerance
     << " px)  F1 " << fmt("%.2f", rep.f1) << "\n"
     << "score_with_time " << fmt("%.2f", rep.score) << " (s_time " << rep.s_time << ")  score_no_time "
     << fmt("%.2f", rep.score_no_time) << "\n";
  os << "per-class DSC:";
  for (double v : rep.per_class_dsc) os << " " << fmt("%.1f", v);
  os << "\nper-class NSD:";
  for (double v : rep.per_class_nsd) os << " " << fmt("%.1f", v);
  os << "\n";
}

int cmd_eval(const std::string& checkpoint, const std::string& predictions, const std::string& data,
             const std::string& split_name, double nsd_tol, double s_time, bool empty_as_perfect,
             const std::string& out) {
  if (checkpoint.empty() == predictions.empty()) {
    throw std::invalid_argument("eval needs exactly one of --checkpoint or --predictions");
  }
  const data::Split split = data::parse_split(split_name);
  if (split == data::Split::unlabeled) throw std::invalid_argument("the unlabeled split has no ground truth");

  int c_seg = kDefaultSegClasses, k_cls = kDefaultClsLabels, size = 0;
  std::unique_ptr<models::Network> net;
  if (!checkpoint.empty()) {
    auto [cfg, f1] = trainer::load_inference_network(checkpoint);
    c_seg = cfg.f1.c_seg;
    k_cls = cfg.f1.k_cls;
    size = cfg.data.size;
    net = std::move(f1);
  }
  auto records = data::load_manifest(data, k_cls);
  if (size == 0 && !records.empty()) size = read_png_gray(records.front().image_path).height;
  const data::Dataset ds(std::move(records), size, size, k_cls);

  trainer::Predictor predictor;
  std::map<std::string, std::vector<std::uint8_t>> pred_labels;
  if (net) {
    predictor = trainer::f1_predictor(*net, 0.5);
  } else {
    pred_labels = read_labels_csv(fs::path(predictions) / "labels.csv", k_cls);
    predictor = [&](const Tensor&, const std::vector<std::size_t>& indices) {
      std::vector<IndexMask> masks;
      std::vector<LabelMatrix> labels;
      for (std::size_t idx : indices) {
        const std::string& id = ds.records()[idx].id;
        const GrayImage m = read_png_gray(fs::path(predictions) / "masks" / (id + ".png"));
        IndexMask mask(1, m.height, m.width);
        mask.data = m.pixels;
        masks.push_back(data::resize_mask(mask, size, size));
        auto it = pred_labels.find(id);
        if (it == pred_labels.end()) throw std::runtime_error("predictions lack labels for '" + id + "'");
        LabelMatrix l(1, k_cls);
        l.data = it->second;
        labels.push_back(l);
      }
      return std::make_pair(concat_masks(masks), concat_labels(labels));
    };
  }
  const metrics::MetricOptions mopt{nsd_tol, empty_as_perfect};
  const auto acc = trainer::evaluate(ds, split, c_seg, predictor, mopt);
  const auto rep = acc.finalize(s_time);

  std::ostringstream csv;
  csv << "id,dsc,nsd,f1,score_with_time,score_no_time,s_time,nsd_tol\n";
  for (const auto& row : acc.rows()) {
    csv << row.id << "," << (row.included ? fmt("%.6f", row.dsc) : "") << "," << (row.included ? fmt("%.6f", row.nsd) : "")
        << ",,,,," << nsd_tol << "\n";
  }
  csv << "aggregate," << fmt("%.6f", rep.dsc) << "," << fmt("%.6f", rep.nsd) << "," << fmt("%.6f", rep.f1) << ","
      << fmt("%.6f", rep.score) << "," << fmt("%.6f", rep.score_no_time) << "," << s_time << "," << nsd_tol << "\n";
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << csv.str();
  } else {
    std::cout << csv.str();
  }
  std::cout << "split " << split_name << ", " << acc.images() << " images\n";
  print_report(rep, std::cout);
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& images, const std::string& out) {
  auto [cfg, f1] = trainer::load_inference_network(checkpoint);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw std::runtime_error("no .png images in " + images);
  std::vector<GrayImage> imgs;
  for (const auto& p : paths) imgs.push_back(read_png_gray(p));

  const auto preds = trainer::predict(*f1, cfg, imgs, [&](std::size_t i, const std::string& msg) {
    std::cout << "notice: " << paths[i].filename().string() << ": " << msg << "\n";
  });
  fs::create_directories(fs::path(out) / "masks");
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> rows;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string id = paths[i].stem().string();
    write_png_gray(fs::path(out) / "masks" / (id + ".png"),
                   GrayImage{preds[i].mask.height, preds[i].mask.width, preds[i].mask.data});
    rows.emplace_back(id, preds[i].labels);
  }
  write_labels_csv(fs::path(out) / "labels.csv", cfg.f1.k_cls, rows);
  std::cout << "predicted " << preds.size() << " images into " << out << "\n";
  return 0;
}

int cmd_ablate(const config::RunConfig& cfg, const std::string& data, const std::string& out) {
  struct Run {
    std::string name;
    config::RunConfig cfg;
    trainer::FitResult result;
  };
  std::vector<Run> runs{{"full", cfg, {}}, {"supervised", cfg, {}}};
  runs[1].cfg.loss.weights.lambda_cps = 0;
  runs[1].cfg.loss.weights.tau_ict = 0;
  runs[1].cfg.loss.weights.beta_dac = 0;
  for (auto& r : runs) {
    std::cout << "== " << r.name << "\n";
    trainer::FitOptions opt;
    opt.data_root = data;
    opt.out_dir = fs::path(out) / r.name;
    opt.on_event = [](const std::string& msg) { std::cout << msg << std::endl; };
    r.result = trainer::fit(r.cfg, opt);
  }
  std::ostringstream table;
  table << "run,best_epoch,best_val_dsc,epoch1_val_dsc,best_val_score,epoch1_total,last_total\n";
  for (const auto& r : runs) {
    const auto& h = r.result.history;
    const auto& best = h[static_cast<std::size_t>(r.result.best_epoch - 1)];
    double best_dsc = 0;
    for (const auto& row : h) best_dsc = std::max(best_dsc, row.val_dsc);
    table << r.name << "," << r.result.best_epoch << "," << fmt("%.4f", best_dsc) << "," << fmt("%.4f", h.front().val_dsc)
          << "," << fmt("%.4f", best.val_score) << "," << fmt("%.6f", h.front().loss.total) << ","
          << fmt("%.6f", h.back().loss.total) << "\n";
  }
  std::ofstream f(fs::path(out) / "comparison.csv", std::ios::binary);
  f << table.str();
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmdacl: dual-network semi-supervised segmentation and classification"};
  app.require_subcommand(1);

  int n = 200, size = 64;
  std::uint64_t seed = 0;
  double labeled_frac = 0.2, val_frac = 0.2;
  std::string out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--n", n, "number of images")->capture_default_str();
  gen->add_option("--size", size, "image side length")->capture_default_str();
  gen->add_option("--seed", seed, "generator seed")->capture_default_str();
  gen->add_option("--labeled-frac", labeled_frac, "fraction of labeled records")->capture_default_str();
  gen->add_option("--val-frac", val_frac, "fraction of validation records")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  std::string config_path, data_dir, resume;
  int stop_after = 0;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "train both networks");
  train->add_option("--config", config_path, "run configuration file");
  train->add_option("--data", data_dir, "dataset root")->required();
  train->add_option("--out", out, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--stop-after", stop_after, "stop after this many completed epochs")->check(CLI::PositiveNumber);
  train->add_option("--set", overrides, "key=value override, repeatable");

  std::string checkpoint, predictions, split = "val", images;
  double nsd_tol = 1.0, s_time = 0.0;
  bool empty_as_perfect = false;
  auto* eval = app.add_subcommand("eval", "score f1 predictions or a prediction directory");
  eval->add_option("--checkpoint", checkpoint, "training checkpoint");
  eval->add_option("--predictions", predictions, "directory with masks/ and labels.csv");
  eval->add_option("--data", data_dir, "dataset root")->required();
  eval->add_option("--split", split, "val or test")->capture_default_str();
  eval->add_option("--nsd-tol", nsd_tol, "NSD tolerance in pixels")->capture_default_str();
  eval->add_option("--s-time", s_time, "time score in [0, 100]")->capture_default_str();
  eval->add_flag("--empty-as-perfect", empty_as_perfect, "score classes absent from both masks as 100");
  eval->add_option("--out", out, "CSV report path (stdout when omitted)");

  auto* pred = app.add_subcommand("predict", "f1 inference on a directory of PNG images");
  pred->add_option("--checkpoint", checkpoint, "training checkpoint")->required();
  pred->add_option("--images", images, "directory of .png images")->required();
  pred->add_option("--out", out, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "full objective vs supervised-only on the same seed");
  ablate->add_option("--config", config_path, "run configuration file");
  ablate->add_option("--data", data_dir, "dataset root")->required();
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_option("--set", overrides, "key=value override, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(n, size, seed, labeled_frac, val_frac, out);
    if (*train) return cmd_train(resolve_config(config_path, overrides), data_dir, out, resume, stop_after);
    if (*eval) return cmd_eval(checkpoint, predictions, data_dir, split, nsd_tol, s_time, empty_as_perfect, out);
    if (*pred) return cmd_predict(checkpoint, images, out);
    if (*ablate) return cmd_ablate(resolve_config(config_path, overrides), data_dir, out);
  } catch (const config::ConfigError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
