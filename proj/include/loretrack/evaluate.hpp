#pragma once

// One-pass evaluation. Frame 0 initializes the template from ground truth;
// every later frame is searched around the previous prediction.
//
// Metrics per sequence, then averaged over sequences:
//   SUC  area under the success curve, thresholds 0, 0.05, ..., 1 (success
//        means IoU >= threshold), scaled to [0, 100]
//   PRE  fraction of frames whose centre error, divided by the frame
//        diagonal, is at most 0.05

#include <algorithm>
#include <cmath>
#include <concepts>
#include <fstream>
#include <string>
#include <vector>

#include "loretrack/bbox.hpp"
#include "loretrack/keyvalue.hpp"
#include "loretrack/synth.hpp"
#include "loretrack/vit_tracker.hpp"

namespace loretrack {

inline constexpr double kDefaultWindowPenalty = 0.49;
inline constexpr double kPrecisionThreshold = 0.05;
inline constexpr std::size_t kSuccessThresholds = 21;

template <class P>
concept Predictor = requires(P p, const Tensor& frame, const BBox& box, std::size_t t) {
  p.init(frame, box);
  { p.track(frame, t) } -> std::convertible_to<BBox>;
};

struct TraceRow {
  std::size_t sequence = 0;
  std::size_t frame = 0;
  BBox box;
  double iou = 0;
  double center_error = 0;  // normalized by the frame diagonal
};

struct SequenceEval {
  double mean_iou = 0, suc = 0, pre = 0;
  std::vector<TraceRow> trace;
};

struct EvalReport {
  std::vector<SequenceEval> sequences;
  double suc = 0, pre = 0, mean_iou = 0;

  std::vector<TraceRow> trace() const {
    std::vector<TraceRow> all;
    for (const auto& s : sequences) all.insert(all.end(), s.trace.begin(), s.trace.end());
    return all;
  }
};

inline double success_threshold(std::size_t k) {
  return static_cast<double>(k) / static_cast<double>(kSuccessThresholds - 1);
}

// Fraction of frames with IoU >= threshold, one value per threshold.
inline std::vector<double> success_curve(const std::vector<double>& ious) {
  std::vector<double> curve(kSuccessThresholds, 0.0);
  if (ious.empty()) return curve;
  for (std::size_t k = 0; k < kSuccessThresholds; ++k) {
    const double th = success_threshold(k);
    std::size_t hits = 0;
    for (double v : ious) hits += v >= th ? 1 : 0;
    curve[k] = static_cast<double>(hits) / static_cast<double>(ious.size());
  }
  return curve;
}

inline double success_auc(const std::vector<double>& ious) {
  const auto curve = success_curve(ious);
  double s = 0.0;
  for (double v : curve) s += v;
  return 100.0 * s / static_cast<double>(curve.size());
}

inline double center_error(const BBox& a, const BBox& b, std::size_t frame_h, std::size_t frame_w) {
  const double fw = static_cast<double>(frame_w), fh = static_cast<double>(frame_h);
  return std::hypot((a.cx - b.cx) * fw, (a.cy - b.cy) * fh) / std::hypot(fw, fh);
}

inline void finalize(SequenceEval& s) {
  std::vector<double> ious;
  std::size_t precise = 0;
  double sum = 0.0;
  for (const auto& r : s.trace) {
    ious.push_back(r.iou);
    sum += r.iou;
    precise += r.center_error <= kPrecisionThreshold ? 1 : 0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, s.trace.size()));
  s.mean_iou = sum / n;
  s.suc = success_auc(ious);
  s.pre = static_cast<double>(precise) / n;
}

inline void finalize(EvalReport& r) {
  r.suc = r.pre = r.mean_iou = 0.0;
  for (const auto& s : r.sequences) {
    r.suc += s.suc;
    r.pre += s.pre;
    r.mean_iou += s.mean_iou;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, r.sequences.size()));
  r.suc /= n;
  r.pre /= n;
  r.mean_iou /= n;
}

template <Predictor P>
SequenceEval evaluate_sequence(P& predictor, const SyntheticSequence& seq, std::size_t index = 0) {
  if (seq.length() < 2) throw ConfigError("evaluate: sequences need at least 2 frames");
  SequenceEval out;
  predictor.init(seq.frames[0], seq.boxes[0]);
  for (std::size_t t = 1; t < seq.length(); ++t) {
    const BBox pred = predictor.track(seq.frames[t], t);
    out.trace.push_back({index, t, pred, iou(pred, seq.boxes[t]),
                         center_error(pred, seq.boxes[t], seq.height, seq.width)});
  }
  finalize(out);
  return out;
}

// `make` returns a fresh predictor for each sequence.
template <class Factory>
EvalReport evaluate_with(const std::vector<SyntheticSequence>& data, Factory&& make) {
  EvalReport report;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto p = make(data[i]);
    report.sequences.push_back(evaluate_sequence(p, data[i], i));
  }
  finalize(report);
  return report;
}

// Runs a trained tracker. Holds a gradient-free copy of the parameters.
class TrackerPredictor {
 public:
  TrackerPredictor(const TrackerParams& params, double window_penalty)
      : params_(frozen_copy(params)), window_(window_penalty) {}

  void init(const Tensor& frame, const BBox& box) {
    template_img_ = crop_region(frame, box, kTemplateContext, params_.config.template_resolution).first;
    prev_ = box;
  }

  BBox track(const Tensor& frame, std::size_t /*t*/) {
    auto [img, map] = crop_region(frame, prev_, kSearchContext, params_.config.search_resolution);
    const auto out = forward_backbone(template_img_, img, params_);
    const BBox in_crop = decode_box(head_forward(out.f_s, params_), window_);
    prev_ = sanitize(map.to_frame(in_crop), frame.dim(0), frame.dim(1));
    return prev_;
  }

  static TrackerParams frozen_copy(const TrackerParams& p) {
    TrackerParams c = TrackerParams::init(p.config, 0);
    const auto src = p.named_parameters();
    const auto dst = c.named_parameters();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      Tensor to = dst[k].second;
      std::copy(src[k].second.data().begin(), src[k].second.data().end(), to.data().begin());
    }
    c.freeze();
    return c;
  }

 private:
  // Keeps the centre inside the frame and the size between one pixel and the frame.
  static BBox sanitize(BBox b, std::size_t fh, std::size_t fw) {
    b.cx = std::clamp(b.cx, 0.0, 1.0);
    b.cy = std::clamp(b.cy, 0.0, 1.0);
    b.w = std::clamp(b.w, 1.0 / static_cast<double>(fw), 1.0);
    b.h = std::clamp(b.h, 1.0 / static_cast<double>(fh), 1.0);
    return b;
  }

  TrackerParams params_;
  double window_;
  Tensor template_img_;
  BBox prev_;
};

inline EvalReport evaluate_tracker(const TrackerParams& params,
                                   const std::vector<SyntheticSequence>& data,
                                   double window_penalty = kDefaultWindowPenalty) {
  if (window_penalty < 0.0 || window_penalty > 1.0)
    throw ConfigError("evaluate: window_penalty must be in [0,1]");
  const TrackerParams frozen = TrackerPredictor::frozen_copy(params);
  return evaluate_with(data, [&](const SyntheticSequence&) {
    return TrackerPredictor(frozen, window_penalty);
  });
}

inline std::string trace_csv(const EvalReport& r) {
  std::string out = "sequence,frame,cx,cy,w,h,iou,center_error\n";
  for (const auto& row : r.trace())
    out += std::to_string(row.sequence) + "," + std::to_string(row.frame) + "," +
           format_double(row.box.cx) + "," + format_double(row.box.cy) + "," +
           format_double(row.box.w) + "," + format_double(row.box.h) + "," +
           format_double(row.iou) + "," + format_double(row.center_error) + "\n";
  return out;
}

}  // namespace loretrack
