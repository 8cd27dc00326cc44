#pragma once

// Classification / regression objective for the centre-based head:
// penalty-reduced focal loss on the Gaussian heatmap, plus L1 and GIoU on
// the box read out at the ground-truth peak cell.

#include <utility>

#include "loretrack/ops.hpp"
#include "loretrack/synth.hpp"
#include "loretrack/vit_tracker.hpp"

namespace loretrack {

struct LossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
};

struct ClsRegLoss {
  Tensor cls;
  Tensor reg;
};

// CenterNet-style focal loss (focusing exponent 2, negative weight (1−t)^4),
// normalized by the single positive cell. Works on logits: log p and
// log(1−p) come from a stable log-sigmoid, so saturated scores keep a
// gradient.
inline Tensor focal_loss(const Tensor& score_logits, const Tensor& heatmap) {
  if (score_logits.shape() != heatmap.shape())
    throw DimensionError("focal_loss: " + shape_str(score_logits.shape()) + " vs " +
                         shape_str(heatmap.shape()));
  Tensor pos(score_logits.shape()), neg(score_logits.shape());
  const auto t = heatmap.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 1.0) {
      pos[i] = 1.0;
    } else {
      const double q = 1.0 - t[i];
      neg[i] = q * q * q * q;
    }
  }
  Tensor p = sigmoid(score_logits);
  Tensor pos_term = hadamard(hadamard(square(affine(p, -1.0, 1.0)), log_sigmoid(score_logits)), pos);
  Tensor neg_term =
      hadamard(hadamard(square(p), log_sigmoid(scale(score_logits, -1.0))), neg);
  double num_pos = 0.0;
  for (double v : pos.data()) num_pos += v;
  return scale(sum(add(pos_term, neg_term)), -1.0 / std::max(1.0, num_pos));
}

namespace loss_detail {

inline Tensor constant(double v) { return Tensor(Shape{1, 1}, std::vector<double>{v}); }

}  // namespace loss_detail

// GIoU between a predicted box given as four [1×1] tensors and a fixed box.
inline Tensor giou_tensor(const Tensor& cx, const Tensor& cy, const Tensor& w,
                          const Tensor& h, const BBox& gt) {
  using loss_detail::constant;
  Tensor px0 = sub(cx, scale(w, 0.5)), px1 = add(cx, scale(w, 0.5));
  Tensor py0 = sub(cy, scale(h, 0.5)), py1 = add(cy, scale(h, 0.5));
  Tensor gx0 = constant(gt.x0()), gx1 = constant(gt.x1());
  Tensor gy0 = constant(gt.y0()), gy1 = constant(gt.y1());
  Tensor iw = relu(sub(minimum(px1, gx1), maximum(px0, gx0)));
  Tensor ih = relu(sub(minimum(py1, gy1), maximum(py0, gy0)));
  Tensor inter = hadamard(iw, ih);
  Tensor uni = sub(affine(hadamard(w, h), 1.0, gt.area()), inter);
  Tensor cw = sub(maximum(px1, gx1), minimum(px0, gx0));
  Tensor ch = sub(maximum(py1, gy1), minimum(py0, gy0));
  Tensor enclose = hadamard(cw, ch);
  return sub(divide(inter, uni), divide(sub(enclose, uni), enclose));
}

inline ClsRegLoss cls_reg_loss(const HeadOutput& head, const HeadTargets& target,
                               const LossWeights& weights = {}) {
  const std::size_t gh = head.grid_h, gw = head.grid_w;
  if (target.heatmap.shape() != Shape{gh, gw})
    throw DimensionError("cls_reg_loss: target grid " + shape_str(target.heatmap.shape()) +
                         " vs head grid " + std::to_string(gh) + "x" + std::to_string(gw));
  ClsRegLoss out;
  out.cls = scale(focal_loss(head.score_logits, target.heatmap), weights.cls);

  const std::size_t cell = target.cell_i * gw + target.cell_j;
  Tensor off = slice_rows(reshape(head.offset_map, {gh * gw, 2}), cell, 1);
  Tensor size = slice_rows(reshape(head.size_map, {gh * gw, 2}), cell, 1);
  Tensor pred = concat_cols({off, size});
  Tensor want(Shape{1, 4},
              {target.offset_x, target.offset_y, target.size_w, target.size_h});
  Tensor l1 = mean(abs(sub(pred, want)));

  Tensor cx = affine(slice_cols(off, 0, 1), 1.0 / static_cast<double>(gw),
                     static_cast<double>(target.cell_j) / static_cast<double>(gw));
  Tensor cy = affine(slice_cols(off, 1, 1), 1.0 / static_cast<double>(gh),
                     static_cast<double>(target.cell_i) / static_cast<double>(gh));
  Tensor g = giou_tensor(cx, cy, slice_cols(size, 0, 1), slice_cols(size, 1, 1), target.box);
  out.reg = add(scale(l1, weights.l1), reshape(affine(g, -weights.giou, weights.giou), {1}));
  return out;
}

}  // namespace loretrack
