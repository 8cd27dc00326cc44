#pragma once

// Gradient check of the complete training objective on random tiny models.
//
// Each case draws a teacher/student pair at different token grids, random
// images and a random target box, then compares backward() against central
// differences for a random subset of coordinates in every student parameter.
// Both distillation terms are always active.
//
// Central differences at eps = 1e-5 cannot resolve gradients much below the
// roundoff floor of the loss (about 1e-16·|f| / eps), so the relative check
// only uses coordinates with |gradient| >= kResolvableGradient. Coordinates
// under that floor are checked for absolute agreement instead.

#include <cmath>
#include <string>
#include <vector>

#include "loretrack/distill.hpp"
#include "loretrack/gradcheck.hpp"
#include "loretrack/random.hpp"
#include "loretrack/synth.hpp"
#include "loretrack/track_loss.hpp"
#include "loretrack/vit_tracker.hpp"

namespace loretrack {

inline constexpr double kResolvableGradient = 1e-6;

struct GradCheckCase {
  ModelConfig student, teacher;
  DistillConfig distill;
  double max_error = 0;        // relative, resolvable coordinates
  double max_abs_small = 0;    // absolute, coordinates under the floor
  std::string worst_parameter;
  std::size_t probes = 0;
  std::size_t small_probes = 0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double max_error = 0;
  double max_abs_small = 0;
  std::size_t probes = 0;
  std::size_t small_probes = 0;
};

namespace grad_detail {

inline Tensor random_image(std::size_t res, SplitMix64& rng) {
  Tensor t(Shape{res, res, 3});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

template <class T>
const T& pick(const std::vector<T>& v, SplitMix64& rng) {
  return v[rng.below(v.size())];
}

}  // namespace grad_detail

inline GradCheckCase grad_check_case(std::uint64_t seed, std::size_t probes_per_tensor,
                                     double eps) {
  using grad_detail::pick;
  SplitMix64 rng(seed);
  GradCheckCase c;
  ModelConfig s;
  s.patch_size = pick<std::size_t>({2, 4}, rng);
  s.num_heads = pick<std::size_t>({1, 2}, rng);
  s.embed_dim = s.num_heads * pick<std::size_t>({4, 8}, rng);
  s.num_layers = pick<std::size_t>({1, 2}, rng);
  s.mlp_ratio = pick<double>({1.0, 2.0}, rng);
  s.head_channels = pick<std::size_t>({3, 4}, rng);
  const std::size_t gs = pick<std::size_t>({2, 3}, rng);
  s.search_resolution = gs * s.patch_size;
  s.template_resolution = pick<std::size_t>({1, 2}, rng) * s.patch_size;
  ModelConfig t = s;
  t.search_resolution = (gs + pick<std::size_t>({1, 2}, rng)) * s.patch_size;
  t.template_resolution = s.template_resolution + s.patch_size;

  DistillConfig d;
  d.tau = rng.uniform(0.1, 0.6);
  d.alpha1 = rng.uniform(0.2, 1.0);
  d.alpha2 = rng.uniform(0.2, 1.0);
  // Weights large enough that the distillation gradients are not swamped.
  d.beta1 = rng.uniform(0.5, 2.0);
  d.beta2 = rng.uniform(0.5, 2.0);
  switch (rng.below(4)) {
    case 0: break;
    case 1: d.include_template = true; break;
    case 2: d.mode = KdMode::kFeature; break;
    default:
      if (s.num_layers > 1) d.layers = {1, s.num_layers};
      break;
  }
  c.student = s;
  c.teacher = t;
  c.distill = d;

  TrackerParams student = TrackerParams::init(s, rng.next());
  TrackerParams teacher = TrackerParams::init(t, rng.next());
  teacher.freeze();
  // Random offsets so LayerNorm and head parameters are not at symmetric points.
  for (auto& [name, p] : student.named_parameters())
    for (double& v : p.data()) v += 0.1 * rng.normal();

  const Tensor s_tmpl = grad_detail::random_image(s.template_resolution, rng);
  const Tensor s_srch = grad_detail::random_image(s.search_resolution, rng);
  const Tensor t_tmpl = grad_detail::random_image(t.template_resolution, rng);
  const Tensor t_srch = grad_detail::random_image(t.search_resolution, rng);
  const BBox gt{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.5),
                rng.uniform(0.2, 0.5)};
  const auto targets = make_targets(gt, s.search_grid(), s.search_grid());
  const auto teacher_out = forward_backbone(t_tmpl, t_srch, teacher);
  const auto tt = teacher_targets(teacher_out, t, d);

  auto objective = [&](const Tensor&) {
    const auto out = forward_backbone(s_tmpl, s_srch, student);
    const auto l = cls_reg_loss(head_forward(out.f_s, student), targets);
    const auto kd = kd_terms(out, s, tt, d);
    return total_loss(l.cls, l.reg, kd.first, kd.disc, d);
  };

  student.zero_grad();
  backward(objective(Tensor{}));
  std::vector<std::vector<double>> grads;
  for (auto& [name, p] : student.named_parameters())
    grads.emplace_back(p.grad().begin(), p.grad().end());
  std::size_t k = 0;
  for (auto& [name, p] : student.named_parameters()) {
    const auto& g = grads[k++];
    std::vector<std::size_t> big, small;
    for (std::size_t i = 0; i < g.size(); ++i)
      (std::abs(g[i]) >= kResolvableGradient ? big : small).push_back(i);
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < std::min(probes_per_tensor, big.size()); ++k)
      coords.push_back(big[rng.below(big.size())]);
    if (!small.empty()) {
      const std::size_t i = small[rng.below(small.size())];
      auto xd = p.data();
      const double saved = xd[i];
      xd[i] = saved + eps;
      const double fp = objective(Tensor{}).item();
      xd[i] = saved - eps;
      const double fm = objective(Tensor{}).item();
      xd[i] = saved;
      c.max_abs_small = std::max(c.max_abs_small, std::abs(g[i] - (fp - fm) / (2.0 * eps)));
      ++c.small_probes;
    }
    if (coords.empty()) continue;
    Tensor handle = p;
    const double err = finite_diff_check(objective, handle, eps, coords);
    c.probes += coords.size();
    if (err > c.max_error || c.worst_parameter.empty()) {
      c.max_error = std::max(c.max_error, err);
      c.worst_parameter = name;
    }
  }
  student.zero_grad();
  return c;
}

inline GradCheckReport run_grad_check(std::uint64_t seed, std::size_t n_configs = 10,
                                      std::size_t probes_per_tensor = 3, double eps = 1e-5) {
  GradCheckReport r;
  for (std::size_t i = 0; i < n_configs; ++i) {
    r.cases.push_back(grad_check_case(SplitMix64::derive(seed, i), probes_per_tensor, eps));
    const auto& c = r.cases.back();
    r.max_error = std::max(r.max_error, c.max_error);
    r.max_abs_small = std::max(r.max_abs_small, c.max_abs_small);
    r.probes += c.probes;
    r.small_probes += c.small_probes;
  }
  return r;
}

}  // namespace loretrack
