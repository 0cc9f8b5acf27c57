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

#include "fmdacl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace fmdacl::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  const long long x = to_integer(key, v);
  if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(key + ": integer out of range");
  return static_cast<int>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field real(std::string key, Member member) {
  return {std::move(key), [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); },
          [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field integer(std::string key, Member member) {
  return {std::move(key), [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_int(k, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field boolean(std::string key, Member member) {
  return {std::move(key), [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_bool(k, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Field backbone(std::string key, Member member) {
  return {std::move(key),
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              member(c) = models::parse_backbone_kind(v);
            } catch (const std::exception&) {
              throw ConfigError(k + ": expected conv_unet or patch_attention, got '" + v + "'");
            }
          },
          [member](const RunConfig& c) { return models::to_string(member(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(integer("data.size", [](RunConfig& c) -> int& { return c.data.size; }));
    f.push_back(real("data.hflip_prob", [](RunConfig& c) -> double& { return c.data.hflip_prob; }));
    f.push_back(real("data.max_rotate_deg", [](RunConfig& c) -> double& { return c.data.max_rotate_deg; }));
    f.push_back(boolean("data.augment", [](RunConfig& c) -> bool& { return c.data.augment; }));
    f.push_back(integer("data.batch_labeled", [](RunConfig& c) -> int& { return c.data.batch_labeled; }));
    f.push_back(integer("data.batch_unlabeled", [](RunConfig& c) -> int& { return c.data.batch_unlabeled; }));

    f.push_back(integer("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    f.push_back({"train.seed",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   const long long s = to_integer(k, v);
                   if (s < 0) throw ConfigError(k + ": seed must be non-negative");
                   c.train.seed = static_cast<std::uint64_t>(s);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    f.push_back(real("train.lr_backbone_f1", [](RunConfig& c) -> double& { return c.train.lr_backbone_f1; }));
    f.push_back(real("train.lr_heads_f1", [](RunConfig& c) -> double& { return c.train.lr_heads_f1; }));
    f.push_back(real("train.wd_f1", [](RunConfig& c) -> double& { return c.train.wd_f1; }));
    f.push_back(real("train.lr_f2", [](RunConfig& c) -> double& { return c.train.lr_f2; }));
    f.push_back(real("train.wd_f2", [](RunConfig& c) -> double& { return c.train.wd_f2; }));
    f.push_back(real("train.ema_decay", [](RunConfig& c) -> double& { return c.train.ema_decay; }));
    f.push_back(real("train.adam_beta1", [](RunConfig& c) -> double& { return c.train.adam_beta1; }));
    f.push_back(real("train.adam_beta2", [](RunConfig& c) -> double& { return c.train.adam_beta2; }));
    f.push_back(real("train.adam_eps", [](RunConfig& c) -> double& { return c.train.adam_eps; }));
    f.push_back(real("train.grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; }));
    f.push_back(boolean("train.cosine_lr", [](RunConfig& c) -> bool& { return c.train.cosine_lr; }));
    f.push_back(integer("train.rampup_epochs", [](RunConfig& c) -> int& { return c.train.rampup_epochs; }));
    f.push_back({"train.select_metric",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v != "score" && v != "dsc") throw ConfigError(k + ": expected score or dsc, got '" + v + "'");
                   c.train.select_metric = v;
                 },
                 [](const RunConfig& c) { return c.train.select_metric; }});
    f.push_back(integer("train.checkpoint_every", [](RunConfig& c) -> int& { return c.train.checkpoint_every; }));

    f.push_back(real("loss.lambda_cps", [](RunConfig& c) -> double& { return c.loss.weights.lambda_cps; }));
    f.push_back(real("loss.tau_ict", [](RunConfig& c) -> double& { return c.loss.weights.tau_ict; }));
    f.push_back(real("loss.beta_dac", [](RunConfig& c) -> double& { return c.loss.weights.beta_dac; }));
    f.push_back(real("loss.conf_sign", [](RunConfig& c) -> double& { return c.loss.weights.conf_sign; }));
    f.push_back(real("loss.cls_threshold", [](RunConfig& c) -> double& { return c.loss.cls_threshold; }));
    f.push_back(real("loss.ict_sigma", [](RunConfig& c) -> double& { return c.loss.ict_sigma; }));
    f.push_back(boolean("loss.ict_sample_sigma", [](RunConfig& c) -> bool& { return c.loss.ict_sample_sigma; }));
    f.push_back(real("loss.ict_beta_alpha", [](RunConfig& c) -> double& { return c.loss.ict_beta_alpha; }));

    for (const char* role : {"f1", "f2"}) {
      const bool first = std::string(role) == "f1";
      auto spec = [first](RunConfig& c) -> models::BackboneSpec& { return first ? c.f1 : c.f2; };
      const std::string p = std::string(role) + ".";
      f.push_back(backbone(p + "kind", [spec](RunConfig& c) -> models::BackboneKind& { return spec(c).kind; }));
      f.push_back(integer(p + "width", [spec](RunConfig& c) -> int& { return spec(c).width; }));
      f.push_back(integer(p + "depth", [spec](RunConfig& c) -> int& { return spec(c).depth; }));
      f.push_back(real(p + "dropout", [spec](RunConfig& c) -> double& { return spec(c).dropout; }));
      f.push_back(integer(p + "heads", [spec](RunConfig& c) -> int& { return spec(c).heads; }));
      f.push_back(integer(p + "blocks", [spec](RunConfig& c) -> int& { return spec(c).blocks; }));
    }
    f.push_back({"model.c_seg",
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.f1.c_seg = c.f2.c_seg = to_int(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.f1.c_seg); }});
    f.push_back({"model.k_cls",
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.f1.k_cls = c.f2.k_cls = to_int(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.f1.k_cls); }});

    f.push_back(real("eval.nsd_tol", [](RunConfig& c) -> double& { return c.eval.nsd_tol; }));
    f.push_back(real("eval.s_time", [](RunConfig& c) -> double& { return c.eval.s_time; }));
    f.push_back(boolean("eval.empty_as_perfect", [](RunConfig& c) -> bool& { return c.eval.empty_as_perfect; }));
    return f;
  }();
  return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

RunConfig::RunConfig() {
  f1.kind = models::BackboneKind::patch_attention;
  f1.depth = 2;
  f2.kind = models::BackboneKind::conv_unet;
  f2.depth = 3;
}

void RunConfig::validate() const {
  require(data.size >= 8, "data.size", "must be >= 8");
  require(data.hflip_prob >= 0 && data.hflip_prob <= 1, "data.hflip_prob", "must lie in [0, 1]");
  require(data.max_rotate_deg >= 0 && data.max_rotate_deg <= 180, "data.max_rotate_deg", "must lie in [0, 180]");
  require(data.batch_labeled >= 1, "data.batch_labeled", "must be >= 1");
  require(data.batch_unlabeled >= 2 && data.batch_unlabeled % 2 == 0, "data.batch_unlabeled",
          "must be even and >= 2");
  require(train.epochs >= 1, "train.epochs", "must be >= 1");
  require(train.lr_backbone_f1 > 0, "train.lr_backbone_f1", "must be > 0");
  require(train.lr_heads_f1 > 0, "train.lr_heads_f1", "must be > 0");
  require(train.lr_f2 > 0, "train.lr_f2", "must be > 0");
  require(train.wd_f1 >= 0, "train.wd_f1", "must be >= 0");
  require(train.wd_f2 >= 0, "train.wd_f2", "must be >= 0");
  require(train.ema_decay >= 0 && train.ema_decay <= 1, "train.ema_decay", "must lie in [0, 1]");
  require(train.adam_beta1 >= 0 && train.adam_beta1 < 1, "train.adam_beta1", "must lie in [0, 1)");
  require(train.adam_beta2 >= 0 && train.adam_beta2 < 1, "train.adam_beta2", "must lie in [0, 1)");
  require(train.adam_eps > 0, "train.adam_eps", "must be > 0");
  require(train.grad_clip >= 0, "train.grad_clip", "must be >= 0");
  require(train.rampup_epochs >= 0, "train.rampup_epochs", "must be >= 0");
  require(train.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0");
  require(loss.weights.lambda_cps >= 0, "loss.lambda_cps", "must be >= 0");
  require(loss.weights.tau_ict >= 0, "loss.tau_ict", "must be >= 0");
  require(loss.weights.beta_dac >= 0, "loss.beta_dac", "must be >= 0");
  require(loss.weights.conf_sign == 1.0 || loss.weights.conf_sign == -1.0, "loss.conf_sign", "must be 1 or -1");
  require(loss.cls_threshold > 0 && loss.cls_threshold < 1, "loss.cls_threshold", "must lie in (0, 1)");
  require(loss.ict_sigma >= 0 && loss.ict_sigma <= 1, "loss.ict_sigma", "must lie in [0, 1]");
  require(loss.ict_beta_alpha > 0, "loss.ict_beta_alpha", "must be > 0");
  require(f1.c_seg >= 2 && f1.c_seg <= 256, "model.c_seg", "must lie in [2, 256]");
  require(f1.k_cls >= 1, "model.k_cls", "must be >= 1");
  require(eval.nsd_tol >= 0, "eval.nsd_tol", "must be >= 0");
  require(eval.s_time >= 0 && eval.s_time <= 100, "eval.s_time", "must lie in [0, 100]");
  for (const auto& [role, spec] : {std::pair<const char*, const models::BackboneSpec*>{"f1", &f1}, {"f2", &f2}}) {
    try {
      spec->validate();
      spec->validate_input(data.size, data.size);
    } catch (const std::exception& e) {
      throw ConfigError(std::string(role) + ": " + e.what());
    }
  }
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError(key + ": unknown key");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace fmdacl::config
