#pragma once

// Ablation runner. A spec file is key=value text with optional `[variant]`
// sections. Keys before the first section are shared by every variant; keys
// inside a section override them for that variant only.
//
//   seeds = 1,2,3
//   data.count = 16          # or data.train = DIR / data.eval = DIR
//   train.epochs = 2
//   teacher.train.epochs = 4 # or teacher = PATH to a checkpoint
//
//   [full]
//   [no-qkv-kd]
//   [tau-0.18]
//   preset = full
//   distill.tau = 0.18
//
// A section named after a preset uses it; otherwise `preset` defaults to
// `full`. One teacher is trained (or loaded) and shared by all runs.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "loretrack/evaluate.hpp"
#include "loretrack/train.hpp"

namespace loretrack {

inline const std::vector<std::string>& ablation_presets() {
  static const std::vector<std::string> names{
      "full", "baseline", "no-qkv-kd", "no-disc-kd", "with-template", "feature-distillation"};
  return names;
}

inline DistillConfig preset_distill(const std::string& name) {
  DistillConfig d;
  if (name == "full") return d;
  if (name == "baseline") {
    d.beta1 = d.beta2 = 0.0;
  } else if (name == "no-qkv-kd") {
    d.enable_qkv_kd = false;
  } else if (name == "no-disc-kd") {
    d.enable_disc_kd = false;
  } else if (name == "with-template") {
    d.include_template = true;
  } else if (name == "feature-distillation") {
    d.mode = KdMode::kFeature;
  } else {
    std::string valid;
    for (const auto& n : ablation_presets()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (valid: " + valid + ")");
  }
  return d;
}

struct AblationVariant {
  std::string name;
  KeyValues overrides;
};

struct AblationSpec {
  KeyValues base;
  std::vector<AblationVariant> variants;
};

// Keys a spec may contain. Per-variant sections accept the same set minus the
// shared-only ones.
inline std::set<std::string> ablation_valid_keys(bool in_variant) {
  std::set<std::string> keys;
  for (auto& [k, v] : TrainConfig{}.to_key_values()) {
    keys.insert(k);
    if (!in_variant) keys.insert("teacher." + k);
  }
  keys.insert("train.log_every");
  for (auto& [k, v] : DistillConfig{}.to_key_values()) keys.insert(k);
  for (auto& [k, v] : ModelConfig{}.to_key_values()) {
    keys.insert(k);
    if (!in_variant) keys.insert("teacher." + k);
  }
  keys.insert("preset");
  keys.insert("eval.window");
  keys.insert("init_from_teacher");
  if (!in_variant) {
    for (const char* k : {"seeds", "teacher", "data.train", "data.eval", "data.seed",
                          "data.count", "data.length", "data.size", "data.eval_seed",
                          "data.eval_count"})
      keys.insert(k);
  }
  return keys;
}

inline void check_keys(const KeyValues& kv, bool in_variant, const std::string& where) {
  const auto valid = ablation_valid_keys(in_variant);
  for (const auto& [k, v] : kv) {
    if (valid.count(k)) continue;
    std::string list;
    for (const auto& n : valid) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown key '" + k + "' in " + where + " (valid keys: " + list + ")");
  }
}

inline AblationSpec parse_ablation_spec(std::string_view text) {
  AblationSpec spec;
  std::string block;
  std::optional<std::string> section;
  auto flush = [&] {
    KeyValues kv = parse_key_values(block);
    if (section) {
      check_keys(kv, true, "variant [" + *section + "]");
      spec.variants.push_back({*section, std::move(kv)});
    } else {
      check_keys(kv, false, "spec header");
      spec.base = std::move(kv);
    }
    block.clear();
  };
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    const auto t = trim(line.substr(0, line.find('#')));
    if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
      flush();
      section = std::string(trim(t.substr(1, t.size() - 2)));
      if (section->empty()) throw ConfigError("ablation spec: empty section name");
      for (const auto& v : spec.variants)
        if (v.name == *section) throw ConfigError("ablation spec: duplicate variant [" + *section + "]");
    } else {
      block.append(line);
      block.push_back('\n');
    }
  }
  flush();
  if (spec.variants.empty()) throw ConfigError("ablation spec: no [variant] sections");
  return spec;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  EvalReport report;
  double final_loss = 0;
  StepRecord first_step;
  StepRecord last_epoch;
  DistillConfig distill;
  ModelConfig model;
  TrainConfig train;
};

inline std::string ablation_csv_header() {
  return "variant,seed,suc,pre,mean_iou,final_loss,kd_qkv_first,kd_qkv_last,kd_disc_first,"
         "kd_disc_last,tau,alpha1,alpha2,beta1,beta2,qkv_kd,disc_kd,mode,layers,"
         "include_template,search_resolution,epochs,steps_per_epoch,batch_size,learning_rate\n";
}

inline std::string ablation_csv_row(const AblationRow& r) {
  const auto& d = r.distill;
  std::string layers;
  for (std::size_t i = 0; i < d.layers.size(); ++i)
    layers += (i ? ";" : "") + std::to_string(d.layers[i]);
  if (layers.empty()) layers = "last";
  const auto f = [](double v) { return format_double(v); };
  return r.variant + "," + std::to_string(r.seed) + "," + f(r.report.suc) + "," +
         f(r.report.pre) + "," + f(r.report.mean_iou) + "," + f(r.final_loss) + "," +
         f(r.first_step.kd_qkv) + "," + f(r.last_epoch.kd_qkv) + "," + f(r.first_step.kd_disc) +
         "," + f(r.last_epoch.kd_disc) + "," + f(d.tau) + "," + f(d.alpha1) + "," + f(d.alpha2) +
         "," + f(d.beta1) + "," + f(d.beta2) + "," + (d.enable_qkv_kd ? "1" : "0") + "," +
         (d.enable_disc_kd ? "1" : "0") + "," + to_string(d.mode) + "," + layers + "," +
         (d.include_template ? "1" : "0") + "," + std::to_string(r.model.search_resolution) +
         "," + std::to_string(r.train.epochs) + "," + std::to_string(r.train.steps_per_epoch) +
         "," + std::to_string(r.train.batch_size) + "," + f(r.train.learning_rate) + "\n";
}

namespace ablation_detail {

// Keys under `prefix`, with the prefix removed.
inline KeyValues strip_prefix(const KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv)
    if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
  return out;
}

inline std::size_t get_count(const KeyValues& kv, const char* key, std::size_t dflt) {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  const auto v = parse_int(it->second, key);
  if (v <= 0) throw ConfigError(std::string(key) + " must be positive");
  return static_cast<std::size_t>(v);
}

inline std::pair<std::vector<SyntheticSequence>, std::vector<SyntheticSequence>> datasets(
    const KeyValues& kv) {
  std::vector<SyntheticSequence> train, eval;
  if (auto it = kv.find("data.train"); it != kv.end()) {
    train = load_dataset(it->second);
  } else {
    DatasetSpec s;
    s.seed = get_count(kv, "data.seed", 1);
    s.count = get_count(kv, "data.count", s.count);
    s.length = get_count(kv, "data.length", s.length);
    s.height = s.width = get_count(kv, "data.size", s.height);
    train = gen_dataset(s);
  }
  if (auto it = kv.find("data.eval"); it != kv.end()) {
    eval = load_dataset(it->second);
  } else {
    DatasetSpec s;
    s.seed = get_count(kv, "data.eval_seed", 1000);
    s.count = get_count(kv, "data.eval_count", 16);
    s.length = get_count(kv, "data.length", s.length);
    s.height = s.width = get_count(kv, "data.size", s.height);
    eval = gen_dataset(s);
  }
  if (train.empty() || eval.empty()) throw ConfigError("ablation: empty dataset");
  return {std::move(train), std::move(eval)};
}

}  // namespace ablation_detail

// Trains and evaluates every (variant, seed) pair. Rows come out in spec
// order, seeds in listed order.
inline std::vector<AblationRow> run_ablation(const AblationSpec& spec, const LogSink& log = {}) {
  using namespace ablation_detail;
  std::vector<std::uint64_t> seeds{1};
  if (auto it = spec.base.find("seeds"); it != spec.base.end()) {
    seeds.clear();
    for (const auto& s : split_list(it->second)) {
      const auto v = parse_int(s, "seeds");
      if (v < 0) throw ConfigError("seeds must be non-negative");
      seeds.push_back(static_cast<std::uint64_t>(v));
    }
    if (seeds.empty()) throw ConfigError("seeds: empty list");
  }

  struct Resolved {
    std::string name;
    TrainConfig train;
    ModelConfig model;
    DistillConfig distill;
    double window = kDefaultWindowPenalty;
    bool init_from_teacher = false;
  };
  std::vector<Resolved> runs;
  bool need_teacher = false;
  for (const auto& v : spec.variants) {
    KeyValues kv = spec.base;
    for (const auto& [k, val] : v.overrides) kv[k] = val;
    const auto& names = ablation_presets();
    std::string preset = "full";
    if (auto it = v.overrides.find("preset"); it != v.overrides.end())
      preset = it->second;
    else if (std::find(names.begin(), names.end(), v.name) != names.end())
      preset = v.name;
    else if (auto b = spec.base.find("preset"); b != spec.base.end())
      preset = b->second;
    Resolved r;
    r.name = v.name;
    r.distill = preset_distill(preset);
    r.distill.apply(kv);
    r.distill.validate();
    r.model = ModelConfig::toy_student();
    r.model.apply(kv);
    r.model.validate();
    r.train.apply(kv);
    r.train.validate();
    if (auto it = kv.find("eval.window"); it != kv.end())
      r.window = parse_double(it->second, "eval.window");
    if (auto it = kv.find("init_from_teacher"); it != kv.end())
      r.init_from_teacher = parse_bool(it->second, "init_from_teacher");
    need_teacher = need_teacher || r.distill.active() || r.init_from_teacher;
    runs.push_back(std::move(r));
  }

  auto [train_data, eval_data] = datasets(spec.base);

  std::optional<TrackerParams> teacher;
  if (need_teacher) {
    if (auto it = spec.base.find("teacher"); it != spec.base.end()) {
      teacher = load_frozen(it->second);
    } else {
      TrainConfig tc;
      tc.apply(strip_prefix(spec.base, "teacher."));
      ModelConfig tm = ModelConfig::toy_teacher();
      tm.apply(strip_prefix(spec.base, "teacher."));
      auto res = train_teacher(tc, tm, train_data, log);
      teacher = std::move(res.params);
      teacher->freeze();
    }
  }

  std::vector<AblationRow> rows;
  for (const auto& r : runs) {
    for (auto seed : seeds) {
      TrainConfig tc = r.train;
      tc.seed = seed;
      const bool uses_teacher = r.distill.active() || r.init_from_teacher;
      auto res = train_student(tc, r.model, uses_teacher ? &*teacher : nullptr, r.distill,
                               train_data, log, {r.init_from_teacher});
      AblationRow row;
      row.variant = r.name;
      row.seed = seed;
      row.report = evaluate_tracker(res.params, eval_data, r.window);
      row.final_loss = res.final_loss;
      row.first_step = res.history.steps.front();
      row.last_epoch = res.history.epoch_mean(tc.epochs - 1, tc.steps_per_epoch);
      row.distill = r.distill;
      row.model = r.model;
      row.train = tc;
      if (log)
        log({{"event", "ablation"}, {"variant", r.name}, {"seed", seed},
             {"suc", row.report.suc}, {"pre", row.report.pre},
             {"mean_iou", row.report.mean_iou}, {"final_loss", row.final_loss}});
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = ablation_csv_header();
  for (const auto& r : rows) out += ablation_csv_row(r);
  return out;
}

inline std::vector<AblationRow> run_ablation(const std::filesystem::path& spec_file,
                                             const std::filesystem::path& out_csv,
                                             const LogSink& log = {}) {
  const auto rows = run_ablation(parse_ablation_spec(read_text_file(spec_file.string())), log);
  if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
  std::ofstream out(out_csv, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + out_csv.string() + "' for writing");
  out << ablation_csv(rows);
  if (!out) throw std::runtime_error("write failed for '" + out_csv.string() + "'");
  return rows;
}

}  // namespace loretrack
