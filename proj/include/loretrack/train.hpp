#pragma once

// Two-stage training: a high-resolution teacher on the tracking objective,
// then a low-resolution student on the tracking objective plus distillation
// from the frozen teacher.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "loretrack/adam.hpp"
#include "loretrack/checkpoint.hpp"
#include "loretrack/distill.hpp"
#include "loretrack/synth.hpp"
#include "loretrack/track_loss.hpp"
#include "loretrack/vit_tracker.hpp"

namespace loretrack {

using LogSink = std::function<void(const nlohmann::json&)>;

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 200;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  LossWeights loss;
  JitterConfig jitter;
  std::size_t log_every = 0;  // per-step log lines every N steps; 0 = epochs only

  void validate() const {
    if (epochs == 0 || steps_per_epoch == 0 || batch_size == 0)
      throw ConfigError("train: epochs, steps_per_epoch and batch_size must be positive");
    if (!(learning_rate > 0) || !(adam_beta1 > 0 && adam_beta1 < 1) ||
        !(adam_beta2 > 0 && adam_beta2 < 1) || !(adam_eps > 0))
      throw ConfigError("train: optimizer settings out of range");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(loss.cls > 0 && loss.l1 > 0 && loss.giou > 0))
      throw ConfigError("train: loss weights must be positive");
  }

  AdamConfig adam() const {
    return {learning_rate, adam_beta1, adam_beta2, adam_eps, weight_decay};
  }

  KeyValues to_key_values() const {
    return {{"train.epochs", std::to_string(epochs)},
            {"train.steps_per_epoch", std::to_string(steps_per_epoch)},
            {"train.batch_size", std::to_string(batch_size)},
            {"train.learning_rate", format_double(learning_rate)},
            {"train.adam_beta1", format_double(adam_beta1)},
            {"train.adam_beta2", format_double(adam_beta2)},
            {"train.adam_eps", format_double(adam_eps)},
            {"train.weight_decay", format_double(weight_decay)},
            {"train.seed", std::to_string(seed)},
            {"train.lambda_cls", format_double(loss.cls)},
            {"train.lambda_l1", format_double(loss.l1)},
            {"train.lambda_giou", format_double(loss.giou)},
            {"train.jitter_center", format_double(jitter.center)},
            {"train.jitter_scale", format_double(jitter.scale)}};
  }

  void apply(const KeyValues& kv) {
    auto count = [&](const char* key, std::size_t& dst) {
      if (auto it = kv.find(key); it != kv.end()) {
        const auto v = parse_int(it->second, key);
        if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
        dst = static_cast<std::size_t>(v);
      }
    };
    auto num = [&](const char* key, double& dst) {
      if (auto it = kv.find(key); it != kv.end()) dst = parse_double(it->second, key);
    };
    count("train.epochs", epochs);
    count("train.steps_per_epoch", steps_per_epoch);
    count("train.batch_size", batch_size);
    count("train.log_every", log_every);
    num("train.learning_rate", learning_rate);
    num("train.adam_beta1", adam_beta1);
    num("train.adam_beta2", adam_beta2);
    num("train.adam_eps", adam_eps);
    num("train.weight_decay", weight_decay);
    num("train.lambda_cls", loss.cls);
    num("train.lambda_l1", loss.l1);
    num("train.lambda_giou", loss.giou);
    num("train.jitter_center", jitter.center);
    num("train.jitter_scale", jitter.scale);
    if (auto it = kv.find("train.seed"); it != kv.end())
      seed = static_cast<std::uint64_t>(parse_int(it->second, "train.seed"));
  }
};

// Per-step loss components (batch means).
struct StepRecord {
  double total = 0, cls = 0, reg = 0, kd_qkv = 0, kd_disc = 0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;

  StepRecord epoch_mean(std::size_t epoch, std::size_t steps_per_epoch) const {
    StepRecord m;
    const std::size_t b = epoch * steps_per_epoch;
    const std::size_t e = std::min(steps.size(), b + steps_per_epoch);
    for (std::size_t i = b; i < e; ++i) {
      m.total += steps[i].total;
      m.cls += steps[i].cls;
      m.reg += steps[i].reg;
      m.kd_qkv += steps[i].kd_qkv;
      m.kd_disc += steps[i].kd_disc;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, e - b));
    m.total /= n;
    m.cls /= n;
    m.reg /= n;
    m.kd_qkv /= n;
    m.kd_disc /= n;
    return m;
  }
};

struct TrainResult {
  TrackerParams params;
  TrainHistory history;
  double final_loss = 0;  // mean total loss over the last epoch
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"loss", r.total}, {"cls", r.cls}, {"reg", r.reg},
          {"kd_qkv", r.kd_qkv}, {"kd_disc", r.kd_disc}};
}

// Stream offsets so model init and data sampling never share draws.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kDataStream = 2;

struct TrainingPair {
  std::size_t sequence, template_frame, search_frame;
};

inline TrainingPair draw_pair(const std::vector<SyntheticSequence>& data, SplitMix64& rng) {
  const std::size_t s = rng.below(data.size());
  const std::size_t len = data[s].length();
  const std::size_t t0 = rng.below(len);
  const std::size_t t1 = rng.below(len);
  return {s, t0, t1};
}

namespace train_detail {

inline void check_finite(const StepRecord& r, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(r.total))
    throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + " (cls=" + std::to_string(r.cls) +
                             ", reg=" + std::to_string(r.reg) + ", kd_qkv=" +
                             std::to_string(r.kd_qkv) + ", kd_disc=" +
                             std::to_string(r.kd_disc) + ")");
}

inline double item_or_zero(const std::optional<Tensor>& t) { return t ? t->item() : 0.0; }

// Shared loop. `sample_loss` builds one sample's loss graph and returns its
// components with `total` as a tensor.
template <class SampleLoss>
TrainHistory run_loop(TrackerParams& params, const TrainConfig& cfg, const std::string& role,
                      const LogSink& log, SampleLoss&& sample_loss) {
  Adam opt(params.parameters(), cfg.adam());
  SplitMix64 rng(SplitMix64::derive(cfg.seed, kDataStream));
  TrainHistory hist;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step, ++global) {
      StepRecord rec;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        StepRecord part;
        Tensor loss = sample_loss(rng, part);
        backward(scale(loss, inv_b));
        rec.total += part.total * inv_b;
        rec.cls += part.cls * inv_b;
        rec.reg += part.reg * inv_b;
        rec.kd_qkv += part.kd_qkv * inv_b;
        rec.kd_disc += part.kd_disc * inv_b;
      }
      check_finite(rec, epoch, step);
      opt.step();
      opt.zero_grad();
      hist.steps.push_back(rec);
      if (log && cfg.log_every && global % cfg.log_every == 0) {
        auto j = to_json(rec);
        j["event"] = "step";
        j["role"] = role;
        j["epoch"] = epoch;
        j["step"] = global;
        log(j);
      }
    }
    if (log) {
      auto j = to_json(hist.epoch_mean(epoch, cfg.steps_per_epoch));
      j["event"] = "epoch";
      j["role"] = role;
      j["epoch"] = epoch;
      j["step"] = global;
      log(j);
    }
  }
  return hist;
}

}  // namespace train_detail

inline TrainResult train_teacher(const TrainConfig& cfg, const ModelConfig& model_cfg,
                                 const std::vector<SyntheticSequence>& data,
                                 const LogSink& log = {}) {
  cfg.validate();
  model_cfg.validate();
  if (data.empty()) throw ConfigError("train_teacher: empty dataset");
  TrainResult res;
  res.params = TrackerParams::init(model_cfg, SplitMix64::derive(cfg.seed, kInitStream));
  const std::size_t tr = model_cfg.template_resolution, sr = model_cfg.search_resolution;
  const std::size_t g = model_cfg.search_grid();
  auto& params = res.params;
  res.history = train_detail::run_loop(
      params, cfg, "teacher", log, [&](SplitMix64& rng, StepRecord& rec) {
        const auto pair = draw_pair(data, rng);
        const auto sample = make_crop_sample(data[pair.sequence], pair.template_frame,
                                             pair.search_frame, {tr}, {sr}, cfg.jitter, rng);
        const auto out = forward_backbone(sample.template_img.at(tr), sample.search_img.at(sr), params);
        const auto head = head_forward(out.f_s, params);
        const auto l = cls_reg_loss(head, make_targets(sample.gt_box_in_crop, g, g), cfg.loss);
        Tensor total = add(l.cls, l.reg);
        rec = {total.item(), l.cls.item(), l.reg.item(), 0.0, 0.0};
        return total;
      });
  res.final_loss = res.history.epoch_mean(cfg.epochs - 1, cfg.steps_per_epoch).total;
  return res;
}

// Copies teacher weights into a student of the same width and depth; position
// embeddings are bilinearly resized to the student's token grids.
inline TrackerParams init_student_from_teacher(const TrackerParams& teacher,
                                               const ModelConfig& student_cfg) {
  TrackerParams s = TrackerParams::init(student_cfg, 0);
  const auto src = teacher.named_parameters();
  const auto dst = s.named_parameters();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    Tensor from = src[k].second;
    Tensor to = dst[k].second;
    if (from.shape() != to.shape()) {
      const std::size_t d = from.cols();
      const std::size_t gs = square_side(from.rows(), "init_from_teacher");
      const std::size_t gd = square_side(to.rows(), "init_from_teacher");
      from = reshape(bilinear_resize(reshape(from.detach(), {gs, gs, d}), gd, gd), {gd * gd, d});
    }
    std::copy(from.data().begin(), from.data().end(), to.data().begin());
  }
  return s;
}

struct StudentOptions {
  bool init_from_teacher = false;  // experimental
};

// `teacher` may be null when distillation is inactive. When present it must be
// frozen; it is only ever read.
inline TrainResult train_student(const TrainConfig& cfg, const ModelConfig& student_cfg,
                                 const TrackerParams* teacher, const DistillConfig& dcfg,
                                 const std::vector<SyntheticSequence>& data,
                                 const LogSink& log = {}, const StudentOptions& opts = {}) {
  cfg.validate();
  student_cfg.validate();
  dcfg.validate();
  if (data.empty()) throw ConfigError("train_student: empty dataset");
  const bool kd = dcfg.active();
  if ((kd || opts.init_from_teacher) && !teacher)
    throw ConfigError("train_student: distillation enabled but no teacher given");
  if (teacher) {
    const auto& tc = teacher->config;
    if (tc.embed_dim != student_cfg.embed_dim)
      throw ConfigError("train_student: teacher width " + std::to_string(tc.embed_dim) +
                        " differs from student width " + std::to_string(student_cfg.embed_dim));
    if (tc.num_layers != student_cfg.num_layers)
      throw ConfigError("train_student: teacher depth " + std::to_string(tc.num_layers) +
                        " differs from student depth " + std::to_string(student_cfg.num_layers));
    if (!teacher->frozen()) throw ConfigError("train_student: teacher must be frozen");
    dcfg.resolved_layers(student_cfg.num_layers);
  }

  TrainResult res;
  res.params = opts.init_from_teacher
                   ? init_student_from_teacher(*teacher, student_cfg)
                   : TrackerParams::init(student_cfg, SplitMix64::derive(cfg.seed, kInitStream));
  auto& params = res.params;
  const std::size_t str = student_cfg.template_resolution, ssr = student_cfg.search_resolution;
  const std::size_t g = student_cfg.search_grid();
  std::vector<std::size_t> tres{str}, sres{ssr};
  std::size_t ttr = 0, tsr = 0;
  if (kd) {
    ttr = teacher->config.template_resolution;
    tsr = teacher->config.search_resolution;
    tres.push_back(ttr);
    sres.push_back(tsr);
  }
  res.history = train_detail::run_loop(
      params, cfg, "student", log, [&](SplitMix64& rng, StepRecord& rec) {
        const auto pair = draw_pair(data, rng);
        const auto sample = make_crop_sample(data[pair.sequence], pair.template_frame,
                                             pair.search_frame, tres, sres, cfg.jitter, rng);
        const auto out = forward_backbone(sample.template_img.at(str), sample.search_img.at(ssr), params);
        const auto head = head_forward(out.f_s, params);
        const auto l = cls_reg_loss(head, make_targets(sample.gt_box_in_crop, g, g), cfg.loss);
        KdTerms terms;
        if (kd) {
          const auto tout = forward_backbone(sample.template_img.at(ttr), sample.search_img.at(tsr), *teacher);
          terms = kd_terms(out, student_cfg, teacher_targets(tout, teacher->config, dcfg), dcfg);
        }
        Tensor total = total_loss(l.cls, l.reg, terms.first, terms.disc, dcfg);
        rec = {total.item(), l.cls.item(), l.reg.item(), train_detail::item_or_zero(terms.first),
               train_detail::item_or_zero(terms.disc)};
        return total;
      });
  res.final_loss = res.history.epoch_mean(cfg.epochs - 1, cfg.steps_per_epoch).total;
  return res;
}

// ---------------------------------------------------------------- checkpoint glue

inline KeyValues run_metadata(const std::string& role, const TrainConfig& cfg,
                              const DistillConfig* dcfg = nullptr) {
  KeyValues kv = cfg.to_key_values();
  kv["role"] = role;
  kv["seed"] = std::to_string(cfg.seed);
  if (dcfg)
    for (auto& [k, v] : dcfg->to_key_values()) kv[k] = v;
  return kv;
}

// Loads a checkpoint's parameters with the frozen flag set.
inline TrackerParams load_frozen(const std::filesystem::path& path) {
  TrackerParams p = params_from_checkpoint(load_checkpoint(path));
  p.freeze();
  return p;
}

}  // namespace loretrack
