// loretrack command-line front end. Logs go to stdout as JSON lines; errors
// go to stderr as one line. Exit codes: 0 success, 1 failure, 2 usage.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "loretrack/ablation.hpp"
#include "loretrack/checkpoint.hpp"
#include "loretrack/evaluate.hpp"
#include "loretrack/grad_suite.hpp"
#include "loretrack/synth.hpp"
#include "loretrack/train.hpp"
#include "loretrack/vit_tracker.hpp"

namespace fs = std::filesystem;
using namespace loretrack;
using nlohmann::json;

namespace {

void emit(const json& j) { std::cout << j.dump() << '\n' << std::flush; }

// Loads a key=value config and rejects keys outside `allowed` prefixes.
KeyValues load_config(const std::string& path, std::initializer_list<const char*> prefixes) {
  if (path.empty()) return {};
  KeyValues kv = load_key_values(path);
  for (const auto& [k, v] : kv) {
    bool ok = false;
    for (const char* p : prefixes) ok = ok || k.rfind(p, 0) == 0;
    if (!ok) {
      std::string list;
      for (const char* p : prefixes) list += (list.empty() ? "" : ", ") + std::string(p) + "*";
      throw ConfigError("config '" + path + "': unknown key '" + k + "' (expected " + list + ")");
    }
  }
  return kv;
}

// Flags shared by the two training commands.
struct TrainFlags {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> resolution, epochs, steps, batch, log_every;
  std::optional<double> lr;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "key=value config file");
    app->add_option("--data", data, "dataset directory (from gen-data)")->required();
    app->add_option("--out", out, "checkpoint path to write")->required();
    app->add_option("--seed", seed, "training seed");
    app->add_option("--resolution", resolution, "search resolution in pixels");
    app->add_option("--epochs", epochs);
    app->add_option("--steps", steps, "steps per epoch");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--log-every", log_every, "per-step log interval (0 = epochs only)");
  }

  void apply(TrainConfig& tc, ModelConfig& mc) const {
    if (seed) tc.seed = *seed;
    if (epochs) tc.epochs = *epochs;
    if (steps) tc.steps_per_epoch = *steps;
    if (batch) tc.batch_size = *batch;
    if (lr) tc.learning_rate = *lr;
    if (log_every) tc.log_every = *log_every;
    if (resolution) mc = mc.at_resolution(*resolution);
  }
};

int cmd_gen_data(const std::string& out, std::uint64_t seed, std::size_t count,
                 std::size_t length, std::size_t size, const std::string& difficulty) {
  DatasetSpec spec;
  spec.seed = seed;
  spec.count = count;
  spec.length = length;
  spec.height = spec.width = size;
  if (difficulty != "mixed") spec.difficulties = {parse_difficulty(difficulty)};
  const auto seqs = gen_dataset(spec);
  write_dataset(out, seqs);
  emit({{"event", "gen-data"}, {"out", out}, {"sequences", seqs.size()}, {"length", length},
        {"size", size}, {"seed", seed}, {"difficulty", difficulty}});
  return 0;
}

int cmd_train_teacher(const TrainFlags& f) {
  const KeyValues kv = load_config(f.config, {"train.", "model."});
  TrainConfig tc;
  tc.apply(kv);
  ModelConfig mc = ModelConfig::toy_teacher();
  mc.apply(kv);
  f.apply(tc, mc);
  const auto data = load_dataset(f.data);
  auto res = train_teacher(tc, mc, data, emit);
  save_checkpoint(make_checkpoint(res.params, run_metadata("teacher", tc)), f.out);
  emit({{"event", "done"}, {"role", "teacher"}, {"out", f.out}, {"final_loss", res.final_loss},
        {"parameters", res.params.parameter_count()}});
  return 0;
}

struct DistillFlags {
  bool no_qkv = false, no_disc = false, with_template = false, init_from_teacher = false;
  std::optional<double> tau, alpha1, alpha2, beta1, beta2;
  std::string mode, layers, teacher;

  void add_to(CLI::App* app) {
    app->add_option("--teacher", teacher, "frozen teacher checkpoint");
    app->add_flag("--no-qkv-kd", no_qkv, "disable QKV distillation");
    app->add_flag("--no-disc-kd", no_disc, "disable discrimination distillation");
    app->add_option("--tau", tau, "discrimination mask threshold");
    app->add_option("--alpha1", alpha1, "weight of the discriminative region");
    app->add_option("--alpha2", alpha2, "weight of the remaining region");
    app->add_option("--beta1", beta1, "weight of the QKV term");
    app->add_option("--beta2", beta2, "weight of the discrimination term");
    app->add_option("--mode", mode, "first term: qkv or feature");
    app->add_option("--layers", layers, "comma-separated 1-based layers to distill");
    app->add_flag("--with-template", with_template, "also distill template tokens");
    app->add_flag("--init-from-teacher", init_from_teacher,
                  "experimental: start from teacher weights");
  }

  void apply(DistillConfig& d) const {
    if (no_qkv) d.enable_qkv_kd = false;
    if (no_disc) d.enable_disc_kd = false;
    if (tau) d.tau = *tau;
    if (alpha1) d.alpha1 = *alpha1;
    if (alpha2) d.alpha2 = *alpha2;
    if (beta1) d.beta1 = *beta1;
    if (beta2) d.beta2 = *beta2;
    if (!mode.empty()) d.mode = parse_kd_mode(mode);
    if (!layers.empty()) d.apply({{"distill.layers", layers}});
    if (with_template) d.include_template = true;
  }
};

int cmd_train_student(const TrainFlags& f, const DistillFlags& df) {
  const KeyValues kv = load_config(f.config, {"train.", "model.", "distill."});
  TrainConfig tc;
  tc.apply(kv);
  ModelConfig mc = ModelConfig::toy_student();
  mc.apply(kv);
  f.apply(tc, mc);
  DistillConfig dc;
  dc.apply(kv);
  df.apply(dc);
  dc.validate();
  const bool needs_teacher = dc.active() || df.init_from_teacher;
  if (needs_teacher && df.teacher.empty())
    throw ConfigError("--teacher is required unless both distillation terms are disabled");
  std::optional<TrackerParams> teacher;
  if (needs_teacher) teacher = load_frozen(df.teacher);
  const auto data = load_dataset(f.data);
  const std::uint64_t before = teacher ? params_checksum(*teacher) : 0;
  auto res = train_student(tc, mc, teacher ? &*teacher : nullptr, dc, data, emit,
                           {df.init_from_teacher});
  KeyValues meta = run_metadata("student", tc, &dc);
  if (teacher) {
    meta["teacher.path"] = df.teacher;
    meta["teacher.checksum"] = std::to_string(params_checksum(*teacher));
    if (params_checksum(*teacher) != before)
      throw std::logic_error("teacher parameters changed during student training");
  }
  if (df.init_from_teacher) meta["init_from_teacher"] = "true";
  save_checkpoint(make_checkpoint(res.params, meta), f.out);
  emit({{"event", "done"}, {"role", "student"}, {"out", f.out}, {"final_loss", res.final_loss},
        {"distillation", dc.active()}});
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, double window,
             const std::string& trace) {
  const TrackerParams params = load_frozen(ckpt);
  const auto data = load_dataset(data_dir);
  const auto report = evaluate_tracker(params, data, window);
  for (std::size_t i = 0; i < report.sequences.size(); ++i) {
    const auto& s = report.sequences[i];
    emit({{"event", "sequence"}, {"sequence", i}, {"suc", s.suc}, {"pre", s.pre},
          {"mean_iou", s.mean_iou}});
  }
  if (!trace.empty()) {
    std::ofstream out(trace, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + trace + "' for writing");
    out << trace_csv(report);
  }
  emit({{"event", "eval"}, {"ckpt", ckpt}, {"sequences", data.size()}, {"suc", report.suc},
        {"pre", report.pre}, {"mean_iou", report.mean_iou}, {"window", window}});
  return 0;
}

int cmd_macs(const std::string& preset, std::optional<std::size_t> resolution,
             const std::string& config) {
  ModelConfig mc;
  if (preset == "vit-b") {
    mc = ModelConfig::vit_b();
  } else if (preset == "toy-teacher") {
    mc = ModelConfig::toy_teacher();
  } else if (preset == "toy-student") {
    mc = ModelConfig::toy_student();
  } else {
    throw ConfigError("unknown preset '" + preset + "' (valid: vit-b, toy-teacher, toy-student)");
  }
  mc.apply(load_config(config, {"model."}));
  if (resolution) mc = mc.at_resolution(*resolution);
  mc.validate();
  const double macs = estimate_macs(mc);
  emit({{"event", "macs"}, {"preset", preset}, {"search_resolution", mc.search_resolution},
        {"template_resolution", mc.template_resolution}, {"search_grid", mc.search_grid()},
        {"tokens", mc.num_tokens()}, {"macs", macs}, {"gmacs", macs / 1e9}});
  return 0;
}

int cmd_ablate(const std::string& spec, const std::string& out) {
  const auto rows = run_ablation(fs::path(spec), fs::path(out), emit);
  emit({{"event", "done"}, {"out", out}, {"rows", rows.size()}});
  return 0;
}

int cmd_grad_check(std::uint64_t seed, std::size_t configs, std::size_t probes) {
  if (configs == 0) throw ConfigError("--configs must be positive");
  const auto r = run_grad_check(seed, configs, probes);
  for (std::size_t i = 0; i < r.cases.size(); ++i) {
    const auto& c = r.cases[i];
    emit({{"event", "case"}, {"case", i}, {"max_rel_error", c.max_error},
          {"worst", c.worst_parameter}, {"probes", c.probes},
          {"max_abs_error_small", c.max_abs_small}, {"embed_dim", c.student.embed_dim},
          {"layers", c.student.num_layers}, {"student_grid", c.student.search_grid()},
          {"teacher_grid", c.teacher.search_grid()}, {"mode", to_string(c.distill.mode)},
          {"include_template", c.distill.include_template}});
  }
  const bool pass = r.max_error < 1e-4;
  emit({{"event", "grad-check"}, {"seed", seed}, {"configs", configs},
        {"max_rel_error", r.max_error}, {"probes", r.probes}, {"pass", pass}});
  if (!pass) {
    std::cerr << "error: max relative error " << r.max_error << " exceeds 1e-4\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-resolution distillation for a one-stream ViT tracker"};
  app.require_subcommand(1);

  std::string out, difficulty = "mixed";
  std::uint64_t seed = 1;
  std::size_t count = 64, length = 24, size = 128;
  auto* gen = app.add_subcommand("gen-data", "generate synthetic sequences");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--count", count, "number of sequences");
  gen->add_option("--length", length, "frames per sequence");
  gen->add_option("--size", size, "frame height and width");
  gen->add_option("--difficulty", difficulty, "easy|distractor|clutter|mixed");

  TrainFlags teacher_flags;
  auto* tt = app.add_subcommand("train-teacher", "train the high-resolution teacher");
  teacher_flags.add_to(tt);

  TrainFlags student_flags;
  DistillFlags distill_flags;
  auto* ts = app.add_subcommand("train-student", "train a low-resolution student");
  student_flags.add_to(ts);
  distill_flags.add_to(ts);

  std::string ckpt, data_dir, trace;
  double window = kDefaultWindowPenalty;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--window", window, "Hann window penalty in [0,1]");
  ev->add_option("--trace", trace, "write per-frame trace CSV here");

  std::string preset = "vit-b", macs_config;
  std::optional<std::size_t> macs_res;
  auto* mc = app.add_subcommand("macs", "analytic MAC count of one forward pass");
  mc->add_option("--preset", preset, "vit-b|toy-teacher|toy-student");
  mc->add_option("--resolution", macs_res, "search resolution (template = half)");
  mc->add_option("--config", macs_config, "key=value file with model.* overrides");

  std::string spec, csv;
  auto* ab = app.add_subcommand("ablate", "train and evaluate ablation variants");
  ab->add_option("--spec", spec, "ablation spec file")->required();
  ab->add_option("--out", csv, "output CSV")->required();

  std::uint64_t gc_seed = 7;
  std::size_t gc_configs = 10, gc_probes = 3;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full objective");
  gc->add_option("--seed", gc_seed);
  gc->add_option("--configs", gc_configs, "number of random configurations (>= 1)");
  gc->add_option("--probes", gc_probes, "coordinates probed per parameter tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(out, seed, count, length, size, difficulty);
    if (tt->parsed()) return cmd_train_teacher(teacher_flags);
    if (ts->parsed()) return cmd_train_student(student_flags, distill_flags);
    if (ev->parsed()) return cmd_eval(ckpt, data_dir, window, trace);
    if (mc->parsed()) return cmd_macs(preset, macs_res, macs_config);
    if (ab->parsed()) return cmd_ablate(spec, csv);
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_configs, gc_probes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
