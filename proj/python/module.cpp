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

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "fmdacl/config.hpp"
#include "fmdacl/core.hpp"
#include "fmdacl/losses.hpp"
#include "fmdacl/metrics.hpp"
#include "fmdacl/synthetic.hpp"
#include "fmdacl/trainer.hpp"

namespace py = pybind11;
using namespace fmdacl;

namespace {

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

IndexMask to_mask(const U8& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("mask must be [H, W] or [B, H, W]");
  const bool single = a.ndim() == 2;
  IndexMask m(single ? 1 : static_cast<int>(a.shape(0)), static_cast<int>(a.shape(single ? 0 : 1)),
              static_cast<int>(a.shape(single ? 1 : 2)));
  std::memcpy(m.data.data(), a.data(), m.data.size());
  return m;
}

LabelMatrix to_labels(const U8& a) {
  if (a.ndim() != 1 && a.ndim() != 2) throw std::invalid_argument("labels must be [K] or [B, K]");
  const bool single = a.ndim() == 1;
  LabelMatrix l(single ? 1 : static_cast<int>(a.shape(0)), static_cast<int>(a.shape(single ? 0 : 1)));
  std::memcpy(l.data.data(), a.data(), l.data.size());
  return l;
}

U8 from_bytes(const std::vector<std::uint8_t>& v, std::vector<py::ssize_t> shape) {
  U8 out(shape);
  std::memcpy(out.mutable_data(), v.data(), v.size());
  return out;
}

Tensor to_tensor(const F64& a) {
  Shape s;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) s.push_back(static_cast<int>(a.shape(i)));
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

config::RunConfig make_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
  config::RunConfig cfg = config::parse_config(text);
  for (const auto& [k, v] : overrides) config::set_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

py::dict loss_dict(const losses::LossReport& r) {
  py::dict d;
  d["sup1"] = r.sup1;
  d["sup2"] = r.sup2;
  d["cps"] = r.cps;
  d["ict"] = r.ict;
  d["dac_align"] = r.dac_align;
  d["dac_conf"] = r.dac_conf;
  d["total"] = r.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fmdacl, m) {
  m.doc() = "Semi-supervised dual-network segmentation and classification";

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "dice",
      [](const U8& pred, const U8& gt, int c_seg, bool empty_as_perfect) {
        const auto s = metrics::dice_metric(to_mask(pred), to_mask(gt), c_seg, empty_as_perfect);
        return py::make_tuple(s.mean, s.per_class);
      },
      py::arg("pred"), py::arg("gt"), py::arg("c_seg") = kDefaultSegClasses, py::arg("empty_as_perfect") = false,
      "Dice in percent: (mean over images, per-class means).");
  m.def(
      "nsd",
      [](const U8& pred, const U8& gt, double tolerance, int c_seg, bool empty_as_perfect) {
        const auto s = metrics::nsd_metric(to_mask(pred), to_mask(gt), tolerance, c_seg, empty_as_perfect);
        return py::make_tuple(s.mean, s.per_class);
      },
      py::arg("pred"), py::arg("gt"), py::arg("tolerance") = 1.0, py::arg("c_seg") = kDefaultSegClasses,
      py::arg("empty_as_perfect") = false, "Normalized surface Dice in percent.");
  m.def(
      "f1", [](const U8& pred, const U8& gt) { return metrics::f1_metric(to_labels(pred), to_labels(gt)); },
      py::arg("pred"), py::arg("gt"), "Macro F1 over labels, in percent.");
  m.def("overall_score", &metrics::overall_score, py::arg("dsc"), py::arg("nsd"), py::arg("f1"), py::arg("s_time"));
  m.def("score_no_time", &metrics::score_no_time, py::arg("dsc"), py::arg("nsd"), py::arg("f1"));

  m.def(
      "dac_terms",
      [](const F64& p, const F64& q) {
        auto [align, conf] = losses::dac_loss(ag::Var(to_tensor(p)), ag::Var(to_tensor(q)));
        return py::make_tuple(align.value()[0], conf.value()[0]);
      },
      py::arg("p"), py::arg("q"), "(alignment, confidence) for [B, C, H, W] probability maps.");

  m.def(
      "render_sample",
      [](int height, int width, std::uint64_t seed) {
        const auto s = synthetic::render_sample(height, width, seed);
        return py::make_tuple(from_bytes(s.image.pixels, {height, width}), from_bytes(s.mask.data, {height, width}),
                              from_bytes(s.labels, {static_cast<py::ssize_t>(s.labels.size())}));
      },
      py::arg("height"), py::arg("width"), py::arg("seed"), "(image, mask, labels) as uint8 arrays.");
  m.def(
      "label_bits",
      [](const U8& mask) {
        const auto bits = synthetic::label_bits(to_mask(mask));
        return from_bytes(bits, {static_cast<py::ssize_t>(bits.size())});
      },
      py::arg("mask"));
  m.def(
      "gen_synthetic",
      [](const std::filesystem::path& root, int n, int size, std::uint64_t seed, double labeled_frac,
         double val_frac, double test_frac) {
        synthetic::SyntheticOptions o{n, size, size, seed, labeled_frac, val_frac, test_frac};
        const auto c = synthetic::gen_synthetic(root, o);
        py::dict d;
        d["labeled"] = c.labeled;
        d["unlabeled"] = c.unlabeled;
        d["val"] = c.val;
        d["test"] = c.test;
        return d;
      },
      py::arg("root"), py::arg("n") = 200, py::arg("size") = 64, py::arg("seed") = 0, py::arg("labeled_frac") = 0.2,
      py::arg("val_frac") = 0.2, py::arg("test_frac") = 0.0);

  m.def("default_config", [] { return config::to_text(config::RunConfig()); });
  m.def(
      "normalize_config",
      [](const std::string& text, const std::map<std::string, std::string>& overrides) {
        return config::to_text(make_config(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Parses, applies overrides, validates and re-serializes a config document.");
  m.def("config_keys", &config::known_keys);

  m.def(
      "fit",
      [](const std::filesystem::path& data_root, const std::filesystem::path& out_dir, const std::string& text,
         const std::map<std::string, std::string>& overrides, std::optional<std::filesystem::path> resume,
         std::optional<int> stop_after, std::function<void(const std::string&)> on_event) {
        const auto cfg = make_config(text, overrides);
        trainer::FitOptions opt{data_root, out_dir, resume, stop_after, on_event};
        trainer::FitResult r;
        {
          py::gil_scoped_release release;
          if (on_event) {
            opt.on_event = [&](const std::string& msg) {
              py::gil_scoped_acquire acquire;
              on_event(msg);
            };
          }
          r = trainer::fit(cfg, opt);
        }
        py::list history;
        for (const auto& row : r.history) {
          py::dict d;
          d["epoch"] = row.epoch;
          d["loss"] = loss_dict(row.loss);
          d["val_dsc"] = row.val_dsc;
          d["val_nsd"] = row.val_nsd;
          d["val_f1"] = row.val_f1;
          d["val_score"] = row.val_score;
          history.append(d);
        }
        py::dict d;
        d["best_epoch"] = r.best_epoch;
        d["best_value"] = r.best_value;
        d["steps"] = r.steps;
        d["failed_steps"] = r.failed_steps;
        d["history"] = history;
        return d;
      },
      py::arg("data_root"), py::arg("out_dir"), py::arg("config") = "",
      py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("resume") = py::none(),
      py::arg("stop_after") = py::none(), py::arg("on_event") = py::none(),
      "Trains both networks and writes metrics.csv and checkpoints under out_dir.");

  m.def(
      "predict",
      [](const std::filesystem::path& checkpoint, const std::vector<U8>& images) {
        auto [cfg, f1] = trainer::load_inference_network(checkpoint);
        std::vector<GrayImage> imgs;
        for (const auto& a : images) {
          if (a.ndim() != 2) throw std::invalid_argument("images must be [H, W] uint8");
          const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
          imgs.push_back(GrayImage{h, w, std::vector<std::uint8_t>(a.data(), a.data() + a.size())});
        }
        std::vector<trainer::Prediction> preds;
        {
          py::gil_scoped_release release;
          preds = trainer::predict(*f1, cfg, imgs);
        }
        py::list out;
        for (const auto& p : preds) {
          out.append(py::make_tuple(from_bytes(p.mask.data, {p.mask.height, p.mask.width}),
                                    from_bytes(p.labels, {static_cast<py::ssize_t>(p.labels.size())})));
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("images"), "First-network (mask, labels) per image.");
}
