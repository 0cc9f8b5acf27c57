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

// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Criteria 6-8 drive the command-line tool.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fmdacl/checkpoint.hpp"
#include "fmdacl/losses.hpp"
#include "fmdacl/metrics.hpp"
#include "fmdacl/nn_ops.hpp"
#include "fmdacl/teacher.hpp"
#include "oracles.hpp"

using namespace fmdacl;
using ag::Var;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int run(const std::string& cmd, const fs::path& log) {
  const std::string full = cmd + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(full.c_str());
  return rc == 0 ? 0 : (rc == -1 ? -1 : WEXITSTATUS(rc));
}

/// metrics.csv as rows of doubles, header skipped.
std::vector<std::vector<double>> read_metrics(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<double> r;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) r.push_back(std::stod(cell));
    rows.push_back(r);
  }
  return rows;
}

constexpr int kTotal = 7, kDsc = 8;

Outcome score_formula() {
  Outcome o;
  const double rows[4][4] = {{65.48, 45.55, 34.20, 40.37},
                             {42.90, 28.59, 31.76, 30.38},
                             {45.80, 30.22, 37.35, 33.91},
                             {59.66, 42.82, 30.62, 36.84}};
  for (const auto& r : rows) {
    const double s = metrics::overall_score(r[0], r[1], r[2], 0.0);
    o.check(std::fabs(s - r[3]) <= 0.01, fmt("%.4f", s) + " vs " + fmt("%.2f", r[3]));
  }
  if (o.pass) o.detail = "4/4 rows within 0.01";
  return o;
}

Outcome closed_forms() {
  Outcome o;
  Rng rng(1);
  const IndexMask y = oracle::random_mask(2, 4, 4, 4, rng);
  const Tensor uniform({2, 4, 4, 4}, 0.25);
  const double ce = losses::ce_seg(Var(uniform), y).item();
  o.check(std::fabs(ce - std::log(4.0)) <= 1e-6, "ce " + fmt("%.9f", ce));
  LabelMatrix c(3, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  const double bce = losses::bce_cls(Var(Tensor({3, 7}, 0.0)), c).item();
  o.check(std::fabs(bce - std::log(2.0)) <= 1e-6, "bce " + fmt("%.9f", bce));
  const double conf_u = losses::dac_loss(Var(uniform), Var(uniform)).second.item();
  o.check(std::fabs(conf_u - std::log(4.0)) <= 1e-6, "conf uniform " + fmt("%.9f", conf_u));
  Tensor a({1, 2, 1, 1}), b({1, 2, 1, 1});
  a[0] = 1.0;
  b[1] = 1.0;
  const double conf_d = losses::dac_loss(Var(a), Var(b)).second.item();
  o.check(std::fabs(conf_d + std::log(2.0)) <= 1e-6, "conf disjoint " + fmt("%.9f", conf_d));
  Tensor p({1, 2, 1, 1}), q({1, 2, 1, 1}, 0.5);
  p[0] = 0.75;
  p[1] = 0.25;
  const double kl = losses::dac_loss(Var(p), Var(q)).first.item();
  o.check(std::fabs(kl - 0.130812) <= 1e-6, "kl " + fmt("%.9f", kl));
  // One class over 4 pixels: prediction [1,1,0,0], target [1,0,0,0].
  const Tensor p0({1, 1, 1, 4}, {1, 1, 0, 0});
  const Tensor t0({1, 1, 1, 4}, {1, 0, 0, 0});
  const double dice = losses::dice_loss(Var(p0), t0).item();
  o.check(std::fabs(dice - 1.0 / 3.0) <= 1e-4, "dice " + fmt("%.9f", dice));
  if (o.pass) o.detail = "ce, bce, conf x2, kl, dice all within tolerance";
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  Rng rng(7);
  auto check = [&](const std::string& name, const std::function<Var(const Var&)>& f, const Tensor& x) {
    Var leaf(x, true);
    f(leaf).backward();
    const Tensor numeric = oracle::numeric_gradient(
        [&](const Tensor& t) {
          ag::NoGradGuard g;
          return f(Var(t)).item();
        },
        x);
    const double err = oracle::max_relative_error(leaf.grad(), numeric);
    o.check(err <= 1e-4, name + " rel err " + fmt("%.2e", err));
  };
  const Shape seg{2, 3, 4, 4};
  const IndexMask y = oracle::random_mask(2, 4, 4, 3, rng);
  LabelMatrix c(2, 7);
  for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.below(2));
  check("ce", [&](const Var& z) { return losses::ce_seg(ag::softmax_channels(z), y); }, oracle::random_tensor(seg, rng, -2, 2));
  check("dice", [&](const Var& z) { return losses::dice_loss(ag::softmax_channels(z), y); },
        oracle::random_tensor(seg, rng, -2, 2));
  check("bce", [&](const Var& z) { return losses::bce_cls(z, c); }, oracle::random_tensor({2, 7}, rng, -3, 3));
  const Tensor ti = oracle::random_tensor(seg, rng, -2, 2), tj = oracle::random_tensor(seg, rng, -2, 2);
  check("ict", [&](const Var& z) { return losses::ict_loss(z, ti, tj, 0.5); }, oracle::random_tensor(seg, rng, -2, 2));
  const Tensor other = oracle::random_tensor(seg, rng, -2, 2);
  for (int part = 0; part < 2; ++part) {
    auto pick = [part](const std::pair<Var, Var>& r) { return part == 0 ? r.first : r.second; };
    check(part == 0 ? "dac_align(p)" : "dac_conf(p)",
          [&](const Var& z) { return pick(losses::dac_loss(ag::softmax_channels(z), ag::softmax_channels(Var(other)))); },
          oracle::random_tensor(seg, rng, -2, 2));
    check(part == 0 ? "dac_align(q)" : "dac_conf(q)",
          [&](const Var& z) { return pick(losses::dac_loss(ag::softmax_channels(Var(other)), ag::softmax_channels(z))); },
          oracle::random_tensor(seg, rng, -2, 2));
  }

  // Pseudo-label branch: with both networks differentiable, each network's
  // gradient equals the gradient of the direction in which it is the student.
  const Tensor s1 = oracle::random_tensor(seg, rng, -2, 2), s2 = oracle::random_tensor(seg, rng, -2, 2);
  const Tensor k1 = oracle::random_tensor({2, 7}, rng, -2, 2), k2 = oracle::random_tensor({2, 7}, rng, -2, 2);
  Var a1(s1, true), b1(k1, true), a2(s2, true), b2(k2, true);
  losses::cps_loss({a1, b1}, {a2, b2}).backward();
  auto student_grad = [&](const Tensor& seg_s, const Tensor& cls_s, const Tensor& seg_t, const Tensor& cls_t) {
    Var z(seg_s, true), k(cls_s, true);
    const Var p = ag::softmax_channels(z);
    const Tensor target = one_hot_argmax(softmax_seg(seg_t));
    ag::weighted_sum({losses::ce_seg(p, target), losses::dice_loss(p, target), losses::bce_cls(k, binarize_cls(cls_t, 0.5))},
                     {1, 1, 1})
        .backward();
    return std::make_pair(z.grad(), k.grad());
  };
  double leak = 0.0;
  const auto [g1, h1] = student_grad(s1, k1, s2, k2);
  const auto [g2, h2] = student_grad(s2, k2, s1, k1);
  for (const auto& [x, r] : {std::pair{a1.grad(), g1}, {b1.grad(), h1}, {a2.grad(), g2}, {b2.grad(), h2}}) {
    for (std::size_t i = 0; i < x.numel(); ++i) leak = std::max(leak, std::fabs(x[i] - r[i]));
  }
  o.check(leak == 0.0, "cps pseudo-label leak " + fmt("%.2e", leak));
  if (o.pass) o.detail = "ce, dice, bce, ict, dac (2 parts x 2 inputs) within 1e-4; cps pseudo-label gradient exactly 0";
  return o;
}

Outcome ema_closed_form() {
  Outcome o;
  models::BackboneSpec spec;
  spec.width = 8;
  spec.depth = 2;
  auto student = models::build_network(spec, 5);
  auto state = teacher::ema_init(*student, 0.99);
  std::vector<Tensor> s0;
  for (const auto& p : state.shadow->parameters()) s0.push_back(p.var.value());
  for (auto& p : student->parameters()) p.var.mutable_value().fill(0.7);
  for (int i = 0; i < 10; ++i) teacher::ema_update(state, *student);
  double worst = 0.0;
  const double k = std::pow(0.99, 10);
  for (std::size_t i = 0; i < s0.size(); ++i) {
    const Tensor& sh = state.shadow->parameters()[i].var.value();
    for (std::size_t j = 0; j < sh.numel(); ++j) worst = std::max(worst, std::fabs(sh[j] - (0.7 + (s0[i][j] - 0.7) * k)));
  }
  o.check(worst <= 1e-10, "max error " + fmt("%.2e", worst));
  if (o.pass) o.detail = "max error " + fmt("%.2e", worst);
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  Rng rng(2024);
  int mismatches = 0, comparisons = 0;
  for (double tau : {0.0, 0.5, 1.0, 2.0}) {
    for (int t = 0; t < 100; ++t) {
      const IndexMask p = oracle::random_mask(1, 12, 12, 3, rng), g = oracle::random_mask(1, 12, 12, 3, rng);
      const auto od = oracle::dice(p, g, 3), on = oracle::nsd(p, g, tau, 3);
      const auto ld = metrics::dice_image(p, g, 3), ln = metrics::nsd_image(p, g, tau, 3);
      for (int k = 0; k < 2; ++k) {
        ++comparisons;
        if (ld.included[k] != od[k].has_value() || ln.included[k] != on[k].has_value()) ++mismatches;
        else if ((od[k] && ld.per_class[k] != od[k]->percent()) || (on[k] && ln.per_class[k] != on[k]->percent())) ++mismatches;
      }
      double sd = 0, sn = 0;
      int nd = 0, nn = 0;
      for (int k = 0; k < 2; ++k) {
        if (od[k]) sd += od[k]->percent(), ++nd;
        if (on[k]) sn += on[k]->percent(), ++nn;
      }
      if (nd && metrics::dice_metric(p, g, 3).mean != sd / nd) ++mismatches;
      if (nn && metrics::nsd_metric(p, g, tau, 3).mean != sn / nn) ++mismatches;
    }
  }
  o.check(mismatches == 0, std::to_string(mismatches) + " mismatches");
  if (o.pass) o.detail = "400 mask pairs, " + std::to_string(comparisons) + " per-class values, exact";
  return o;
}

struct Env {
  std::string cli;
  fs::path work;
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const char* kSmallSets =
    " --set data.size=16 --set f1.width=8 --set f2.width=8 --set f2.depth=2 --set train.seed=5";

Outcome determinism(const Env& env) {
  Outcome o;
  const fs::path root = env.work / "c6";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path ds = root / "data";
  o.check(run(env.cli + " gen-data --n 24 --size 16 --seed 3 --labeled-frac 0.25 --val-frac 0.25 --out " + q(ds),
              root / "gen.log") == 0,
          "gen-data failed");
  const std::string train = env.cli + " train --data " + q(ds) + kSmallSets;
  o.check(run(train + " --set train.epochs=3 --out " + q(root / "a"), root / "a.log") == 0, "run a failed");
  o.check(run(train + " --set train.epochs=3 --out " + q(root / "b"), root / "b.log") == 0, "run b failed");
  o.check(run(train + " --set train.epochs=3 --stop-after 1 --out " + q(root / "r"), root / "r1.log") == 0,
          "interrupted run failed");
  o.check(run(train + " --set train.epochs=3 --resume " + q(root / "r" / "ckpt" / "last.ckpt") + " --out " + q(root / "r"),
              root / "r2.log") == 0,
          "resumed run failed");
  if (!o.pass) return o;
  const std::string a = slurp(root / "a" / "metrics.csv");
  o.check(!a.empty() && a == slurp(root / "b" / "metrics.csv"), "repeat run metrics differ");
  o.check(a == slurp(root / "r" / "metrics.csv"), "resumed run metrics differ");
  o.check(read_metrics(root / "a" / "metrics.csv").size() == 3, "expected 3 epoch rows");
  if (o.pass) o.detail = "repeat and resumed metrics.csv byte-identical (3 epochs)";
  return o;
}

Outcome first_network_only(const Env& env) {
  Outcome o;
  const fs::path root = env.work / "c6";
  const fs::path ckpt = root / "a" / "ckpt" / "best.ckpt";
  if (!fs::exists(ckpt)) {
    o.check(false, "needs the checkpoint from criterion 6");
    return o;
  }
  const fs::path c8 = env.work / "c8";
  fs::remove_all(c8);
  fs::create_directories(c8);
  o.check(run(env.cli + " predict --checkpoint " + q(ckpt) + " --images " + q(root / "data" / "images") + " --out " +
                  q(c8 / "before"),
              c8 / "before.log") == 0,
          "predict failed");
  Archive arc = read_archive(ckpt);
  int touched = 0;
  for (auto& [name, t] : arc.arrays) {
    if (name.rfind("f2.", 0) == 0 || name.rfind("teacher.", 0) == 0 || name.rfind("opt2.", 0) == 0) {
      for (double& v : t.values()) v = -2.0 * v + 0.5;
      ++touched;
    }
  }
  const fs::path perturbed = c8 / "perturbed.ckpt";
  write_archive(perturbed, arc);
  o.check(run(env.cli + " predict --checkpoint " + q(perturbed) + " --images " + q(root / "data" / "images") + " --out " +
                  q(c8 / "after"),
              c8 / "after.log") == 0,
          "predict on perturbed checkpoint failed");
  if (!o.pass) return o;
  int files = 0, diff = 0;
  for (const auto& e : fs::directory_iterator(c8 / "before" / "masks")) {
    ++files;
    diff += slurp(e.path()) != slurp(c8 / "after" / "masks" / e.path().filename());
  }
  o.check(files == 24 && diff == 0, std::to_string(diff) + "/" + std::to_string(files) + " masks differ");
  o.check(slurp(c8 / "before" / "labels.csv") == slurp(c8 / "after" / "labels.csv"), "labels differ");
  if (o.pass) o.detail = std::to_string(touched) + " f2/teacher arrays perturbed; " + std::to_string(files) +
                         " masks and labels.csv bitwise unchanged";
  return o;
}

Outcome smoke_experiment(const Env& env) {
  Outcome o;
  const fs::path root = env.work / "c7";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path ds = root / "data";
  o.check(run(env.cli + " gen-data --n 200 --size 64 --seed 7 --labeled-frac 0.2 --val-frac 0.2 --out " + q(ds),
              root / "gen.log") == 0,
          "gen-data failed");
  o.check(run(env.cli + " ablate --data " + q(ds) +
                  " --set data.size=64 --set f1.width=16 --set f2.width=16 --set train.epochs=20 --set train.seed=7"
                  " --out " + q(root / "runs"),
              root / "ablate.log") == 0,
          "ablate failed");
  if (!o.pass) return o;
  const auto full = read_metrics(root / "runs" / "full" / "metrics.csv");
  const auto sup = read_metrics(root / "runs" / "supervised" / "metrics.csv");
  if (full.size() != 20 || sup.size() != 20) {
    o.check(false, "expected 20 epochs per run");
    return o;
  }
  auto best_dsc = [](const std::vector<std::vector<double>>& rows) {
    double b = 0;
    for (const auto& r : rows) b = std::max(b, r[kDsc]);
    return b;
  };
  const double f_first = full.front()[kTotal], f_last = full.back()[kTotal];
  const double f_dsc1 = full.front()[kDsc], f_best = best_dsc(full), s_best = best_dsc(sup);
  std::printf("  %-11s %12s %12s %12s %12s\n", "run", "loss ep1", "loss ep20", "dsc ep1", "best dsc");
  std::printf("  %-11s %12.4f %12.4f %12.2f %12.2f\n", "full", f_first, f_last, f_dsc1, f_best);
  std::printf("  %-11s %12.4f %12.4f %12.2f %12.2f\n", "supervised", sup.front()[kTotal], sup.back()[kTotal],
              sup.front()[kDsc], s_best);
  o.check(f_last < f_first, "(a) loss " + fmt("%.4f", f_last) + " !< " + fmt("%.4f", f_first));
  o.check(f_best >= f_dsc1 + 5.0, "(b) best dsc " + fmt("%.2f", f_best) + " < epoch-1 " + fmt("%.2f", f_dsc1) + " + 5");
  o.check(f_best >= s_best - 2.0, "(c) full " + fmt("%.2f", f_best) + " < supervised " + fmt("%.2f", s_best) + " - 2");
  if (o.pass) o.detail = "(a) (b) (c) hold";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Env env;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--cli") env.cli = "\"" + std::string(argv[i + 1]) + "\"";
    else if (a == "--work") env.work = argv[i + 1];
  }
  if (env.cli.empty() || env.work.empty()) {
    std::fprintf(stderr, "usage: fmdacl_acceptance --cli PATH --work DIR\n");
    return 2;
  }
  fs::create_directories(env.work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"score formula reproduces table rows", score_formula},
      {"loss closed forms", closed_forms},
      {"gradient suite", gradient_suite},
      {"EMA closed form", ema_closed_form},
      {"metric oracle equivalence", metric_oracle},
      {"determinism and resume", [&] { return determinism(env); }},
      {"semi-supervised smoke experiment", [&] { return smoke_experiment(env); }},
      {"f1-only inference", [&] { return first_network_only(env); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("criterion %zu: %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
