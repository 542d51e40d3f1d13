// SPDX-License-Identifier: Apache-2.0

#include "backflow/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace backflow {

namespace {

using nlohmann::json;

// A JSON object with its path; every key must be consumed exactly once so
// typos surface as errors instead of silently falling back to defaults.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  std::string at(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json* find(const std::string& key) {
    const auto it = node_.find(key);
    if (it == node_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    try {
      out = v->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(at(key) + ": wrong type");
    }
  }

  template <class T>
  void read_positive(const std::string& key, T& out) {
    read(key, out);
    if (!(out > T{})) throw ConfigError(at(key) + ": must be > 0");
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!used_.count(key)) throw ConfigError(at(key) + ": unknown field");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

template <class E, class Parse>
E read_enum(Section& s, const std::string& key, E fallback, Parse parse) {
  std::string text;
  s.read(key, text);
  if (text.empty()) return fallback;
  try {
    return parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(s.at(key) + ": " + e.what());
  }
}

DatasetSource parse_dataset(const json& node) {
  Section s(node, "dataset");
  DatasetSource d;
  s.read("kind", d.kind);
  if (d.kind != "synthetic" && d.kind != "csv" && d.kind != "idx") {
    throw ConfigError("dataset.kind: expected synthetic, csv or idx, got '" + d.kind + "'");
  }
  s.read_positive("dim", d.dim);
  s.read_positive("classes", d.classes);
  s.read_positive("per_class", d.per_class);
  s.read_positive("spread", d.spread);
  s.read("seed", d.seed);
  std::string path, labels;
  s.read("path", path);
  s.read("labels_path", labels);
  d.path = path;
  d.labels_path = labels;
  s.read("image_mode", d.image_mode);
  s.read_positive("probe_size", d.probe_size);
  s.read("probe_seed", d.probe_seed);
  s.finish();
  if (d.kind != "synthetic" && d.path.empty()) throw ConfigError("dataset.path: required");
  if (d.kind == "idx" && d.labels_path.empty()) {
    throw ConfigError("dataset.labels_path: required for idx data");
  }
  return d;
}

ModelSpec parse_model(const json& node, ModelSpec m) {
  Section s(node, "model");
  m.kind = read_enum(s, "kind", m.kind, parse_model_kind);
  s.read("hidden_dim", m.hidden_dim);
  m.activation = read_enum(s, "activation", m.activation, parse_activation);
  s.finish();
  if (m.kind == ModelKind::softmax_linear) m.hidden_dim = 0;
  if (m.kind == ModelKind::mlp1 && m.hidden_dim == 0) {
    throw ConfigError("model.hidden_dim: must be > 0 for mlp1");
  }
  return m;
}

Regime parse_regime(const json& node, const std::string& path) {
  if (node.is_string()) {
    try {
      return regime_preset(node.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  Section s(node, path);
  Regime r;
  if (const json* p = s.find("preset")) {
    if (!p->is_string()) throw ConfigError(s.at("preset") + ": wrong type");
    try {
      r = regime_preset(p->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(s.at("preset") + ": " + e.what());
    }
  } else if (!s.has("name")) {
    throw ConfigError(path + ": needs either 'preset' or 'name'");
  }
  s.read("name", r.name);
  s.read("k", r.k);
  s.read("lr", r.lr);
  s.read("momentum", r.momentum);
  r.aug_a = read_enum(s, "aug_a", r.aug_a, parse_aug_kind);
  r.aug_aprime = read_enum(s, "aug_aprime", r.aug_aprime, parse_aug_kind);
  r.aug_b = read_enum(s, "aug_b", r.aug_b, parse_aug_kind);
  s.read("overlap", r.overlap);
  s.read("same_classes", r.same_classes);
  s.finish();
  try {
    r.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return r;
}

}  // namespace

std::string to_string(BaseStage stage) { return stage == BaseStage::init ? "init" : "early"; }

std::size_t default_workers() {
  if (const char* env = std::getenv("BACKFLOW_WORKERS")) {
    char* end = nullptr;
    const unsigned long n = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section s(root, "");
  RunConfig c;

  if (const json* d = s.find("dataset")) c.dataset = parse_dataset(*d);
  if (const json* m = s.find("model")) c.model = parse_model(*m, c.model);
  c.base_stage = read_enum(s, "base_stage", c.base_stage, [](const std::string& t) {
    if (t == "init") return BaseStage::init;
    if (t == "early") return BaseStage::early;
    throw std::invalid_argument("expected init or early, got '" + t + "'");
  });

  if (const json* b = s.find("base_training")) {
    Section bs(*b, "base_training");
    bs.read("passes", c.base_training.passes);
    bs.read_positive("lr", c.base_training.lr);
    bs.read("momentum", c.base_training.momentum);
    bs.read("weight_decay", c.base_training.weight_decay);
    bs.read_positive("batch_size", c.base_training.batch_size);
    bs.finish();
  }

  if (const json* m = s.find("micro")) {
    Section ms(*m, "micro");
    ms.read_positive("batch_size", c.micro.batch_size);
    ms.read("weight_decay", c.micro.weight_decay);
    if (const json* clip = ms.find("clip_norm")) {
      if (clip->is_null()) {
        c.micro.clip_norm.reset();
      } else if (clip->is_number() && clip->get<double>() > 0.0) {
        c.micro.clip_norm = clip->get<double>();
      } else {
        throw ConfigError("micro.clip_norm: must be a positive number or null");
      }
    }
    ms.finish();
    if (c.micro.weight_decay < 0.0) throw ConfigError("micro.weight_decay: must be >= 0");
  }

  if (const json* rs = s.find("regimes")) {
    if (!rs->is_array() || rs->empty()) throw ConfigError("regimes: expected a non-empty list");
    c.regimes.clear();
    for (std::size_t i = 0; i < rs->size(); ++i) {
      c.regimes.push_back(parse_regime((*rs)[i], "regimes[" + std::to_string(i) + "]"));
    }
  }

  if (const json* bf = s.find("break_flags")) {
    if (!bf->is_array() || bf->empty()) {
      throw ConfigError("break_flags: expected a non-empty list of \"no\" / \"break\"");
    }
    c.break_flags.clear();
    for (const auto& f : *bf) {
      const std::string t = f.is_string() ? f.get<std::string>() : "";
      if (t == "no") {
        c.break_flags.push_back(false);
      } else if (t == "break") {
        c.break_flags.push_back(true);
      } else {
        throw ConfigError("break_flags: entries must be \"no\" or \"break\"");
      }
    }
  }

  s.read("global_seed", c.global_seed);
  s.read("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("seeds: must not be empty");
  s.read_positive("repeats", c.repeats);

  if (const json* e = s.find("early_stop")) {
    Section es(*e, "early_stop");
    es.read_positive("floor", c.early_stop.floor);
    es.read_positive("stride", c.early_stop.stride);
    es.read("half_width", c.early_stop.half_width);
    es.finish();
  }
  if (const json* st = s.find("stats")) {
    Section ss(*st, "stats");
    ss.read_positive("bootstrap_B", c.stats.bootstrap_resamples);
    ss.read_positive("tost_epsilon", c.stats.tost_epsilon);
    ss.read_positive("bh_q", c.stats.bh_q);
    ss.finish();
  }
  if (const json* dg = s.find("diagnostics")) {
    Section ds(*dg, "diagnostics");
    ds.read("enabled", c.diagnostics.enabled);
    ds.read_positive("k_max", c.diagnostics.k_max);
    ds.read_positive("probe_subset", c.diagnostics.probe_subset);
    ds.finish();
    if (c.diagnostics.probe_subset > 512) {
      throw ConfigError("diagnostics.probe_subset: at most 512");
    }
  }
  s.read("workers", c.workers);
  std::string out;
  s.read("output_dir", out);
  if (!out.empty()) c.output_dir = out;
  s.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig c = parse_run_config(text.str());
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  if (!c.dataset.path.empty() && c.dataset.path.is_relative()) c.dataset.path = base / c.dataset.path;
  if (!c.dataset.labels_path.empty() && c.dataset.labels_path.is_relative()) {
    c.dataset.labels_path = base / c.dataset.labels_path;
  }
  return c;
}

}  // namespace backflow
