#pragma once

// Cross-resolution dual distillation.
//
// QKV distillation matches the student's last-layer search-region
// query/key/value projections, bilinearly resized onto the teacher's token
// grid, against the teacher's. Discrimination distillation matches the final
// search features, split by a binary mask of tokens the teacher considers
// discriminative (mean squared activation above a threshold), with separate
// weights for the two regions.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "loretrack/keyvalue.hpp"
#include "loretrack/ops.hpp"
#include "loretrack/vit_tracker.hpp"

namespace loretrack {

// What the first distillation term matches.
enum class KdMode {
  kQkv,      // query/key/value projections
  kFeature,  // final search features only
};

inline std::string to_string(KdMode m) { return m == KdMode::kQkv ? "qkv" : "feature"; }

inline KdMode parse_kd_mode(std::string_view s) {
  if (s == "qkv") return KdMode::kQkv;
  if (s == "feature") return KdMode::kFeature;
  throw ConfigError("unknown kd mode '" + std::string(s) + "' (expected qkv|feature)");
}

struct DistillConfig {
  double tau = 0.2;
  double alpha1 = 0.6;  // discriminative region
  double alpha2 = 0.4;  // remaining region
  double beta1 = 0.01;  // QKV term
  double beta2 = 0.01;  // discrimination term
  bool enable_qkv_kd = true;
  bool enable_disc_kd = true;

  // Ablation axes. Defaults reproduce the method: last layer, search only.
  KdMode mode = KdMode::kQkv;
  std::vector<std::size_t> layers;  // 1-based encoder indices; empty = last
  bool include_template = false;

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("distill: tau must be in [0,1]");
    if (!(alpha1 >= 0 && alpha2 >= 0)) throw ConfigError("distill: alphas must be >= 0");
    if (!(beta1 >= 0 && beta2 >= 0)) throw ConfigError("distill: betas must be >= 0");
  }

  // True when at least one KD term contributes to the objective.
  bool active() const {
    return (enable_qkv_kd && beta1 != 0.0) || (enable_disc_kd && beta2 != 0.0);
  }

  std::vector<std::size_t> resolved_layers(std::size_t num_layers) const {
    if (layers.empty()) return {num_layers};
    for (auto m : layers)
      if (m == 0 || m > num_layers)
        throw ConfigError("distill: layer " + std::to_string(m) + " outside 1.." +
                          std::to_string(num_layers));
    std::set<std::size_t> uniq(layers.begin(), layers.end());
    return {uniq.begin(), uniq.end()};
  }

  KeyValues to_key_values() const {
    std::string ls;
    for (std::size_t i = 0; i < layers.size(); ++i)
      ls += (i ? "," : "") + std::to_string(layers[i]);
    return {{"distill.tau", format_double(tau)},
            {"distill.alpha1", format_double(alpha1)},
            {"distill.alpha2", format_double(alpha2)},
            {"distill.beta1", format_double(beta1)},
            {"distill.beta2", format_double(beta2)},
            {"distill.qkv_kd", enable_qkv_kd ? "true" : "false"},
            {"distill.disc_kd", enable_disc_kd ? "true" : "false"},
            {"distill.mode", to_string(mode)},
            {"distill.layers", ls},
            {"distill.include_template", include_template ? "true" : "false"}};
  }

  void apply(const KeyValues& kv) {
    auto num = [&](const char* key, double& dst) {
      if (auto it = kv.find(key); it != kv.end()) dst = parse_double(it->second, key);
    };
    auto flag = [&](const char* key, bool& dst) {
      if (auto it = kv.find(key); it != kv.end()) dst = parse_bool(it->second, key);
    };
    num("distill.tau", tau);
    num("distill.alpha1", alpha1);
    num("distill.alpha2", alpha2);
    num("distill.beta1", beta1);
    num("distill.beta2", beta2);
    flag("distill.qkv_kd", enable_qkv_kd);
    flag("distill.disc_kd", enable_disc_kd);
    flag("distill.include_template", include_template);
    if (auto it = kv.find("distill.mode"); it != kv.end()) mode = parse_kd_mode(it->second);
    if (auto it = kv.find("distill.layers"); it != kv.end()) {
      layers.clear();
      for (const auto& s : split_list(it->second)) {
        const auto v = parse_int(s, "distill.layers");
        if (v <= 0) throw ConfigError("distill.layers entries must be >= 1");
        layers.push_back(static_cast<std::size_t>(v));
      }
    }
  }

  bool operator==(const DistillConfig&) const = default;
};

// Binary mask over the teacher's search-token grid.
struct DiscMask {
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<unsigned char> cells;  // row-major, values 0/1

  std::size_t count() const {
    std::size_t n = 0;
    for (auto c : cells) n += c;
    return n;
  }
};

// Φ: resize a square token grid [N_l × D] onto the teacher grid → [N_h × D].
inline Tensor align_phi(const Tensor& student_tokens, std::size_t grid_h,
                        std::size_t grid_w) {
  if (student_tokens.rank() != 2)
    throw DimensionError("align_phi: expected [N x D], got " +
                         shape_str(student_tokens.shape()));
  const std::size_t n = student_tokens.rows(), d = student_tokens.cols();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n)
    throw ConfigError("align_phi: " + std::to_string(n) + " tokens do not form a square grid");
  Tensor grid = reshape(student_tokens, {side, side, d});
  return reshape(bilinear_resize(grid, grid_h, grid_w), {grid_h * grid_w, d});
}

inline void require_same_width(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": channel mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline std::size_t square_side(std::size_t n, const char* op) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n)
    throw ConfigError(std::string(op) + ": " + std::to_string(n) +
                      " tokens do not form a square grid");
  return side;
}

// Σ over q,k,v of mse(teacher, Φ(student)). Teacher tensors should carry no gradient.
inline Tensor qkv_kd_loss(const QKVTriple& teacher, const QKVTriple& student) {
  require_same_width(teacher.q, student.q, "qkv_kd_loss");
  require_same_width(teacher.k, student.k, "qkv_kd_loss");
  require_same_width(teacher.v, student.v, "qkv_kd_loss");
  const std::size_t g = square_side(teacher.q.rows(), "qkv_kd_loss");
  return add(add(mse(teacher.q, align_phi(student.q, g, g)),
                 mse(teacher.k, align_phi(student.k, g, g))),
             mse(teacher.v, align_phi(student.v, g, g)));
}

// Per-token mean of squared channel values. Gradient-free.
inline std::vector<double> disc_map(const Tensor& f_s) {
  if (f_s.rank() != 2) throw DimensionError("disc_map: expected [N x C]");
  const std::size_t n = f_s.rows(), c = f_s.cols();
  const auto d = f_s.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += d[i * c + j] * d[i * c + j];
    out[i] = s / static_cast<double>(c);
  }
  return out;
}

// Max-normalize, then mark cells with normalized value >= tau.
inline DiscMask disc_mask(const std::vector<double>& map, std::size_t grid_h,
                          std::size_t grid_w, double tau) {
  if (map.size() != grid_h * grid_w)
    throw DimensionError("disc_mask: map of " + std::to_string(map.size()) +
                         " values does not fill a " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w) + " grid");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("disc_mask: tau must be in [0,1]");
  DiscMask m{grid_h, grid_w, std::vector<unsigned char>(map.size(), 0)};
  double mx = 0.0;
  for (double v : map) mx = std::max(mx, v);
  if (!(mx > 0.0)) return m;
  for (std::size_t i = 0; i < map.size(); ++i) m.cells[i] = (map[i] / mx >= tau) ? 1 : 0;
  return m;
}

// α₁·mse(M⊗F_h, M⊗Φ(F_l)) + α₂·mse((1−M)⊗F_h, (1−M)⊗Φ(F_l)).
// Both terms average over all N_h×D elements.
inline Tensor disc_kd_loss(const Tensor& f_s_h, const Tensor& f_s_l, const DiscMask& mask,
                           double alpha1, double alpha2) {
  require_same_width(f_s_h, f_s_l, "disc_kd_loss");
  if (mask.grid_h * mask.grid_w != f_s_h.rows())
    throw DimensionError("disc_kd_loss: mask grid " + std::to_string(mask.grid_h) + "x" +
                         std::to_string(mask.grid_w) + " does not match " +
                         std::to_string(f_s_h.rows()) + " teacher tokens");
  const std::size_t d = f_s_h.cols();
  Tensor aligned = align_phi(f_s_l, mask.grid_h, mask.grid_w);
  Tensor inside(f_s_h.shape()), outside(f_s_h.shape());
  for (std::size_t i = 0; i < mask.cells.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      inside[i * d + j] = mask.cells[i] ? 1.0 : 0.0;
      outside[i * d + j] = mask.cells[i] ? 0.0 : 1.0;
    }
  Tensor t1 = mse(hadamard(f_s_h, inside), hadamard(aligned, inside));
  Tensor t2 = mse(hadamard(f_s_h, outside), hadamard(aligned, outside));
  return add(scale(t1, alpha1), scale(t2, alpha2));
}

// L_cls + L_reg + β₁·L_qkv·[qkv on] + β₂·L_disc·[disc on].
// Disabled terms are skipped entirely, so the result is the exact baseline sum.
inline Tensor total_loss(const Tensor& l_cls, const Tensor& l_reg,
                         const std::optional<Tensor>& l_qkv,
                         const std::optional<Tensor>& l_disc, const DistillConfig& cfg) {
  Tensor total = add(l_cls, l_reg);
  if (cfg.enable_qkv_kd && cfg.beta1 != 0.0 && l_qkv)
    total = add(total, scale(*l_qkv, cfg.beta1));
  if (cfg.enable_disc_kd && cfg.beta2 != 0.0 && l_disc)
    total = add(total, scale(*l_disc, cfg.beta2));
  return total;
}

// Teacher-side quantities for one sample (no gradient).
struct TeacherTargets {
  Tensor f_s;                   // [N_h × D]
  Tensor f_t;                   // [N_t,h × D]
  std::vector<QKVTriple> qkv_s;  // one per distilled layer
  std::vector<QKVTriple> qkv_t;  // template rows, when requested
  DiscMask mask;
};

inline TeacherTargets teacher_targets(const BackboneOutput& teacher,
                                      const ModelConfig& teacher_cfg,
                                      const DistillConfig& cfg) {
  TeacherTargets t;
  t.f_s = teacher.f_s.detach();
  t.f_t = teacher.f_t.detach();
  const std::size_t n_t = teacher_cfg.num_template_tokens();
  if (!teacher.layers.empty()) {
    for (auto m : cfg.resolved_layers(teacher.layers.size())) {
      auto s = teacher.qkv_search(m - 1, n_t);
      t.qkv_s.push_back({s.q.detach(), s.k.detach(), s.v.detach()});
      if (cfg.include_template) {
        auto tt = teacher.qkv_template(m - 1, n_t);
        t.qkv_t.push_back({tt.q.detach(), tt.k.detach(), tt.v.detach()});
      }
    }
  }
  const std::size_t g = teacher_cfg.search_grid();
  t.mask = disc_mask(disc_map(t.f_s), g, g, cfg.tau);
  return t;
}

struct KdTerms {
  std::optional<Tensor> first;  // QKV (or feature) distillation
  std::optional<Tensor> disc;
};

// Computes the enabled KD terms for a student forward against teacher targets.
inline KdTerms kd_terms(const BackboneOutput& student, const ModelConfig& student_cfg,
                        const TeacherTargets& teacher, const DistillConfig& cfg) {
  KdTerms out;
  if (cfg.enable_qkv_kd && cfg.beta1 != 0.0) {
    const std::size_t gh = square_side(teacher.f_s.rows(), "kd_terms");
    if (cfg.mode == KdMode::kFeature) {
      out.first = mse(teacher.f_s, align_phi(student.f_s, gh, gh));
      if (cfg.include_template) {
        const std::size_t gt = square_side(teacher.f_t.rows(), "kd_terms");
        out.first = add(*out.first, mse(teacher.f_t, align_phi(student.f_t, gt, gt)));
      }
    } else {
      const auto layers = cfg.resolved_layers(student.layers.size());
      const std::size_t n_t = student_cfg.num_template_tokens();
      for (std::size_t i = 0; i < layers.size(); ++i) {
        Tensor term = qkv_kd_loss(teacher.qkv_s.at(i), student.qkv_search(layers[i] - 1, n_t));
        if (cfg.include_template)
          term = add(term, qkv_kd_loss(teacher.qkv_t.at(i),
                                       student.qkv_template(layers[i] - 1, n_t)));
        out.first = out.first ? add(*out.first, term) : term;
      }
    }
  }
  if (cfg.enable_disc_kd && cfg.beta2 != 0.0)
    out.disc = disc_kd_loss(teacher.f_s, student.f_s, teacher.mask, cfg.alpha1, cfg.alpha2);
  return out;
}

}  // namespace loretrack
