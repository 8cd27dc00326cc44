#pragma once

// Procedural tracking sequences, crop/resize pipeline and head targets.
//
// A sequence is fully determined by (seed, length, difficulty, H, W): every
// random quantity is drawn, in a fixed order, from one SplitMix64 stream.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "loretrack/bbox.hpp"
#include "loretrack/binio.hpp"
#include "loretrack/keyvalue.hpp"
#include "loretrack/ops.hpp"
#include "loretrack/random.hpp"

namespace loretrack {

enum class Difficulty { kEasy, kDistractor, kClutter };

inline std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kDistractor: return "distractor";
    case Difficulty::kClutter: return "clutter";
  }
  return "easy";
}

inline Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "distractor") return Difficulty::kDistractor;
  if (s == "clutter") return Difficulty::kClutter;
  throw ConfigError("unknown difficulty '" + std::string(s) +
                    "' (expected easy|distractor|clutter)");
}

enum class ShapeKind { kRectangle, kEllipse, kTriangle };

struct SyntheticSequence {
  std::uint64_t seed = 0;
  std::size_t height = 0, width = 0;
  Difficulty difficulty = Difficulty::kEasy;
  std::vector<Tensor> frames;  // [H × W × 3], values in [0,1]
  std::vector<BBox> boxes;     // target box per frame, frame-normalized
  std::size_t num_objects = 1;  // moving objects including the target

  std::size_t length() const { return frames.size(); }
};

namespace synth_detail {

using Color = std::array<double, 3>;

struct MovingObject {
  ShapeKind kind = ShapeKind::kRectangle;
  Color color{};
  double stripe_period = 4.0, stripe_angle = 0.0;
  double base_hw = 0, base_hh = 0;  // half extents in pixels at scale 1
  double x = 0, y = 0, vx = 0, vy = 0, s = 1.0;

  double hw() const { return base_hw * s; }
  double hh() const { return base_hh * s; }
};

inline bool inside(const MovingObject& o, double px, double py) {
  const double dx = px - o.x, dy = py - o.y, hw = o.hw(), hh = o.hh();
  switch (o.kind) {
    case ShapeKind::kRectangle: return std::abs(dx) <= hw && std::abs(dy) <= hh;
    case ShapeKind::kEllipse: return (dx * dx) / (hw * hw) + (dy * dy) / (hh * hh) <= 1.0;
    case ShapeKind::kTriangle:
      return dy >= -hh && dy <= hh && std::abs(dx) <= hw * (dy + hh) / (2.0 * hh);
  }
  return false;
}

inline Color random_color(SplitMix64& rng) {
  return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
}

inline double color_dist(const Color& a, const Color& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

inline void draw(std::vector<double>& img, std::size_t h, std::size_t w,
                 const MovingObject& o) {
  const auto lo_x = static_cast<long>(std::floor(o.x - o.hw() - 1));
  const auto hi_x = static_cast<long>(std::ceil(o.x + o.hw() + 1));
  const auto lo_y = static_cast<long>(std::floor(o.y - o.hh() - 1));
  const auto hi_y = static_cast<long>(std::ceil(o.y + o.hh() + 1));
  const double ca = std::cos(o.stripe_angle), sa = std::sin(o.stripe_angle);
  for (long y = std::max(0L, lo_y); y < std::min<long>(static_cast<long>(h), hi_y); ++y)
    for (long x = std::max(0L, lo_x); x < std::min<long>(static_cast<long>(w), hi_x); ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      if (!inside(o, px, py)) continue;
      const double u = ((px - o.x) * ca + (py - o.y) * sa) / o.stripe_period;
      const bool dark = static_cast<long>(std::floor(u)) % 2 != 0;
      double* p = img.data() + (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3;
      for (int c = 0; c < 3; ++c) p[c] = dark ? 0.55 * o.color[c] : o.color[c];
    }
}

// Smoothed random walk with reflection so the centre stays inside the frame.
inline void step(MovingObject& o, SplitMix64& rng, std::size_t h, std::size_t w) {
  const double size = std::sqrt(o.base_hw * o.base_hh) * 2.0;
  o.vx = 0.85 * o.vx + 0.12 * size * rng.normal();
  o.vy = 0.85 * o.vy + 0.12 * size * rng.normal();
  o.s = std::clamp(o.s * (1.0 + rng.uniform(-0.05, 0.05)), 0.75, 1.33);
  o.x += o.vx;
  o.y += o.vy;
  const double mx = std::min(o.hw() + 1.0, 0.5 * static_cast<double>(w));
  const double my = std::min(o.hh() + 1.0, 0.5 * static_cast<double>(h));
  if (o.x < mx) { o.x = 2 * mx - o.x; o.vx = std::abs(o.vx); }
  if (o.x > static_cast<double>(w) - mx) { o.x = 2 * (static_cast<double>(w) - mx) - o.x; o.vx = -std::abs(o.vx); }
  if (o.y < my) { o.y = 2 * my - o.y; o.vy = std::abs(o.vy); }
  if (o.y > static_cast<double>(h) - my) { o.y = 2 * (static_cast<double>(h) - my) - o.y; o.vy = -std::abs(o.vy); }
  o.x = std::clamp(o.x, mx, static_cast<double>(w) - mx);
  o.y = std::clamp(o.y, my, static_cast<double>(h) - my);
}

inline MovingObject spawn(SplitMix64& rng, std::size_t h, std::size_t w, ShapeKind kind,
                          const Color& color, double size_scale) {
  MovingObject o;
  o.kind = kind;
  o.color = color;
  const double side = size_scale * rng.uniform(0.10, 0.18) *
                      static_cast<double>(std::min(h, w));
  const double aspect = rng.uniform(0.65, 1.5);
  o.base_hw = 0.5 * side * std::sqrt(aspect);
  o.base_hh = 0.5 * side / std::sqrt(aspect);
  o.stripe_period = rng.uniform(3.0, 6.0);
  o.stripe_angle = rng.uniform(0.0, std::numbers::pi);
  o.x = rng.uniform(0.25, 0.75) * static_cast<double>(w);
  o.y = rng.uniform(0.25, 0.75) * static_cast<double>(h);
  return o;
}

}  // namespace synth_detail

inline SyntheticSequence gen_sequence(std::uint64_t seed, std::size_t length,
                                      Difficulty difficulty, std::size_t height,
                                      std::size_t width) {
  using namespace synth_detail;
  if (length < 2) throw ConfigError("gen_sequence: length must be >= 2");
  if (height < 64 || width < 64) throw ConfigError("gen_sequence: frames must be at least 64x64");

  SplitMix64 rng(seed);
  SyntheticSequence seq;
  seq.seed = seed;
  seq.height = height;
  seq.width = width;
  seq.difficulty = difficulty;

  // Static background.
  const Color bg = random_color(rng);
  const Color bg2 = random_color(rng);
  std::vector<double> background(height * width * 3);
  for (std::size_t y = 0; y < height; ++y) {
    const double t = 0.3 * static_cast<double>(y) / static_cast<double>(height);
    for (std::size_t x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        background[(y * width + x) * 3 + c] = (1 - t) * bg[c] + t * bg2[c];
  }
  if (difficulty == Difficulty::kClutter) {
    const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double v = 0.12 * std::sin(fx * static_cast<double>(x)) *
                         std::cos(fy * static_cast<double>(y));
        for (int c = 0; c < 3; ++c) background[(y * width + x) * 3 + c] += v;
      }
    for (int b = 0; b < 30; ++b) {
      MovingObject blob = spawn(rng, height, width,
                                static_cast<ShapeKind>(rng.below(3)), random_color(rng), 0.6);
      blob.x = rng.uniform(0.0, static_cast<double>(width));
      blob.y = rng.uniform(0.0, static_cast<double>(height));
      draw(background, height, width, blob);
    }
  }

  // Target: random shape, colour contrasting with the background.
  const auto kind = static_cast<ShapeKind>(rng.below(3));
  Color color = random_color(rng);
  for (int tries = 0; tries < 32 && color_dist(color, bg) < 0.6; ++tries)
    color = random_color(rng);
  std::vector<MovingObject> objects;
  objects.push_back(spawn(rng, height, width, kind, color, 1.0));

  if (difficulty == Difficulty::kDistractor) {
    for (int k = 0; k < 2; ++k) {
      Color c = color;
      for (auto& ch : c) ch = std::clamp(ch + rng.uniform(-0.12, 0.12), 0.0, 1.0);
      objects.push_back(spawn(rng, height, width, kind, c, rng.uniform(0.85, 1.15)));
    }
  }
  seq.num_objects = objects.size();

  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0)
      for (auto& o : objects) step(o, rng, height, width);
    std::vector<double> img = background;
    // Distractors first so the target is never occluded.
    for (std::size_t k = objects.size(); k-- > 1;) draw(img, height, width, objects[k]);
    draw(img, height, width, objects[0]);
    for (double& v : img) v = std::clamp(v + rng.uniform(-0.03, 0.03), 0.0, 1.0);
    seq.frames.emplace_back(Shape{height, width, 3}, std::move(img));
    const auto& o = objects[0];
    seq.boxes.push_back({o.x / static_cast<double>(width), o.y / static_cast<double>(height),
                         2 * o.hw() / static_cast<double>(width),
                         2 * o.hh() / static_cast<double>(height)});
  }
  return seq;
}

// ---------------------------------------------------------------- cropping

// Square window in frame pixel coordinates (x0, y0 = top-left corner).
struct CropWindow {
  double x0 = 0, y0 = 0, side = 1;
  bool operator==(const CropWindow&) const = default;
};

// Converts boxes between frame-normalized and crop-normalized coordinates.
struct CropMapping {
  CropWindow window;
  std::size_t frame_w = 1, frame_h = 1;

  BBox to_crop(const BBox& f) const {
    const double fw = static_cast<double>(frame_w), fh = static_cast<double>(frame_h);
    return {(f.cx * fw - window.x0) / window.side, (f.cy * fh - window.y0) / window.side,
            f.w * fw / window.side, f.h * fh / window.side};
  }
  BBox to_frame(const BBox& c) const {
    const double fw = static_cast<double>(frame_w), fh = static_cast<double>(frame_h);
    return {(window.x0 + c.cx * window.side) / fw, (window.y0 + c.cy * window.side) / fh,
            c.w * window.side / fw, c.h * window.side / fh};
  }
};

inline std::array<double, 3> channel_mean(const Tensor& frame) {
  std::array<double, 3> m{0, 0, 0};
  const auto d = frame.data();
  for (std::size_t i = 0; i < d.size(); ++i) m[i % 3] += d[i];
  const double n = static_cast<double>(d.size() / 3);
  for (auto& v : m) v /= n;
  return m;
}

// Window of side context·√(w·h·W·H) centred on the box.
inline CropWindow crop_window(const BBox& box, double context_factor, std::size_t frame_h,
                              std::size_t frame_w) {
  if (!(context_factor > 1.0)) throw ConfigError("crop_region: context_factor must exceed 1");
  if (!(box.w > 0 && box.h > 0) || !std::isfinite(box.w * box.h) ||
      !std::isfinite(box.cx + box.cy))
    throw ConfigError("crop_region: degenerate box");
  const double fw = static_cast<double>(frame_w), fh = static_cast<double>(frame_h);
  const double side = context_factor * std::sqrt(box.w * fw * box.h * fh);
  return {box.cx * fw - 0.5 * side, box.cy * fh - 0.5 * side, side};
}

// Bilinear resample of a window onto an out×out grid; outside pixels read as
// the frame's channel mean.
inline Tensor render_window(const Tensor& frame, const CropWindow& win, std::size_t out) {
  const std::size_t fh = frame.dim(0), fw = frame.dim(1);
  const auto pad = channel_mean(frame);
  const auto src = frame.data();
  std::vector<double> img(out * out * 3);
  const double step = win.side / static_cast<double>(out);
  for (std::size_t v = 0; v < out; ++v) {
    const double sy = win.y0 + (static_cast<double>(v) + 0.5) * step - 0.5;
    const double y0f = std::floor(sy);
    const double wy = sy - y0f;
    const auto y0 = static_cast<long>(y0f);
    for (std::size_t u = 0; u < out; ++u) {
      const double sx = win.x0 + (static_cast<double>(u) + 0.5) * step - 0.5;
      const double x0f = std::floor(sx);
      const double wx = sx - x0f;
      const auto x0 = static_cast<long>(x0f);
      double* o = img.data() + (v * out + u) * 3;
      for (int c = 0; c < 3; ++c) {
        auto px = [&](long y, long x) {
          if (y < 0 || x < 0 || y >= static_cast<long>(fh) || x >= static_cast<long>(fw))
            return pad[c];
          return src[(static_cast<std::size_t>(y) * fw + static_cast<std::size_t>(x)) * 3 + c];
        };
        double val = (1 - wy) * (1 - wx) * px(y0, x0);
        if (wx != 0) val += (1 - wy) * wx * px(y0, x0 + 1);
        if (wy != 0) val += wy * (1 - wx) * px(y0 + 1, x0);
        if (wx != 0 && wy != 0) val += wy * wx * px(y0 + 1, x0 + 1);
        o[c] = val;
      }
    }
  }
  return Tensor(Shape{out, out, 3}, std::move(img));
}

inline std::pair<Tensor, CropMapping> crop_region(const Tensor& frame, const BBox& box,
                                                  double context_factor,
                                                  std::size_t out_resolution) {
  if (frame.rank() != 3 || frame.dim(2) != 3)
    throw DimensionError("crop_region: expected [H x W x 3] frame");
  const CropMapping map{crop_window(box, context_factor, frame.dim(0), frame.dim(1)),
                        frame.dim(1), frame.dim(0)};
  return {render_window(frame, map.window, out_resolution), map};
}

// ---------------------------------------------------------------- targets

struct HeadTargets {
  Tensor heatmap;  // [Hs × Ws], Gaussian, exactly 1 at the peak cell
  std::size_t cell_i = 0, cell_j = 0;
  double offset_x = 0, offset_y = 0;  // fractional position in the peak cell
  double size_w = 0, size_h = 0;      // crop-normalized
  BBox box;                           // the ground truth in crop coordinates
};

inline HeadTargets make_targets(const BBox& gt, std::size_t grid_h, std::size_t grid_w) {
  HeadTargets t;
  t.box = gt;
  const double gx = gt.cx * static_cast<double>(grid_w);
  const double gy = gt.cy * static_cast<double>(grid_h);
  t.cell_j = static_cast<std::size_t>(std::clamp(std::floor(gx), 0.0, static_cast<double>(grid_w - 1)));
  t.cell_i = static_cast<std::size_t>(std::clamp(std::floor(gy), 0.0, static_cast<double>(grid_h - 1)));
  t.offset_x = std::clamp(gx - static_cast<double>(t.cell_j), 0.0, 1.0);
  t.offset_y = std::clamp(gy - static_cast<double>(t.cell_i), 0.0, 1.0);
  t.size_w = gt.w;
  t.size_h = gt.h;
  const double diag = std::hypot(gt.w * static_cast<double>(grid_w),
                                 gt.h * static_cast<double>(grid_h));
  const double sigma = std::max(1.0, diag / 6.0);
  t.heatmap = Tensor(Shape{grid_h, grid_w});
  for (std::size_t i = 0; i < grid_h; ++i)
    for (std::size_t j = 0; j < grid_w; ++j) {
      const double di = static_cast<double>(i) - static_cast<double>(t.cell_i);
      const double dj = static_cast<double>(j) - static_cast<double>(t.cell_j);
      t.heatmap[i * grid_w + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
    }
  return t;
}

// ---------------------------------------------------------------- training crops

inline constexpr double kTemplateContext = 2.0;
inline constexpr double kSearchContext = 4.0;

struct JitterConfig {
  double center = 0.8;  // max centre shift, in units of √(w·h)
  double scale = 0.15;  // log-normal window scale, clamped to [0.8, 1.25]
};

// One training example. All search images share `search_map.window`, so the
// teacher and student see identical content at different resolutions.
struct CropSample {
  CropMapping template_map, search_map;
  std::map<std::size_t, Tensor> template_img;  // keyed by resolution
  std::map<std::size_t, Tensor> search_img;
  BBox gt_box_in_crop;
};

inline BBox clip_unit(const BBox& b) {
  const double x0 = std::clamp(b.x0(), 0.0, 1.0), x1 = std::clamp(b.x1(), 0.0, 1.0);
  const double y0 = std::clamp(b.y0(), 0.0, 1.0), y1 = std::clamp(b.y1(), 0.0, 1.0);
  return {0.5 * (x0 + x1), 0.5 * (y0 + y1), std::max(x1 - x0, 1e-6), std::max(y1 - y0, 1e-6)};
}

inline CropSample make_crop_sample(const SyntheticSequence& seq, std::size_t template_frame,
                                   std::size_t search_frame,
                                   const std::vector<std::size_t>& template_res,
                                   const std::vector<std::size_t>& search_res,
                                   const JitterConfig& jitter, SplitMix64& rng) {
  CropSample s;
  const BBox& tb = seq.boxes.at(template_frame);
  const BBox& sb = seq.boxes.at(search_frame);
  const double fw = static_cast<double>(seq.width), fh = static_cast<double>(seq.height);

  // Draws happen regardless of which resolutions are rendered.
  const double dx = rng.uniform(-1.0, 1.0), dy = rng.uniform(-1.0, 1.0);
  const double ds = std::clamp(std::exp(jitter.scale * rng.normal()), 0.8, 1.25);
  const double extent = std::sqrt(sb.w * fw * sb.h * fh);
  BBox jittered = sb;
  jittered.cx += dx * jitter.center * extent / fw;
  jittered.cy += dy * jitter.center * extent / fh;
  jittered.w *= ds;
  jittered.h *= ds;

  const Tensor& tframe = seq.frames.at(template_frame);
  const Tensor& sframe = seq.frames.at(search_frame);
  s.template_map = {crop_window(tb, kTemplateContext, seq.height, seq.width), seq.width, seq.height};
  s.search_map = {crop_window(jittered, kSearchContext, seq.height, seq.width), seq.width, seq.height};
  for (auto r : template_res) s.template_img[r] = render_window(tframe, s.template_map.window, r);
  for (auto r : search_res) s.search_img[r] = render_window(sframe, s.search_map.window, r);
  s.gt_box_in_crop = clip_unit(s.search_map.to_crop(sb));
  return s;
}

// ---------------------------------------------------------------- on-disk layout
//
// <dir>/header.txt   key=value: seed, height, width, length, difficulty, num_objects
// <dir>/boxes.csv    frame,cx,cy,w,h
// <dir>/frame_NNNNN.f64  H·W·3 little-endian doubles, row-major (y, x, channel)

namespace fs = std::filesystem;

inline std::string frame_filename(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05zu.f64", t);
  return buf;
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

inline void write_sequence(const fs::path& dir, const SyntheticSequence& seq) {
  fs::create_directories(dir);
  KeyValues header{{"seed", std::to_string(seq.seed)},
                   {"height", std::to_string(seq.height)},
                   {"width", std::to_string(seq.width)},
                   {"length", std::to_string(seq.length())},
                   {"difficulty", to_string(seq.difficulty)},
                   {"num_objects", std::to_string(seq.num_objects)}};
  write_file(dir / "header.txt", format_key_values(header));
  std::string csv = "frame,cx,cy,w,h\n";
  for (std::size_t t = 0; t < seq.boxes.size(); ++t) {
    const auto& b = seq.boxes[t];
    csv += std::to_string(t) + "," + format_double(b.cx) + "," + format_double(b.cy) + "," +
           format_double(b.w) + "," + format_double(b.h) + "\n";
  }
  write_file(dir / "boxes.csv", csv);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    std::string bytes;
    binio::put_f64s(bytes, seq.frames[t].data());
    write_file(dir / frame_filename(t), bytes);
  }
}

inline SyntheticSequence read_sequence(const fs::path& dir) {
  const auto header = load_key_values((dir / "header.txt").string());
  auto need = [&](const char* k) -> const std::string& {
    auto it = header.find(k);
    if (it == header.end())
      throw ConfigError("'" + (dir / "header.txt").string() + "' lacks key '" + k + "'");
    return it->second;
  };
  SyntheticSequence seq;
  seq.seed = static_cast<std::uint64_t>(std::stoull(need("seed")));
  seq.height = static_cast<std::size_t>(parse_int(need("height")));
  seq.width = static_cast<std::size_t>(parse_int(need("width")));
  seq.difficulty = parse_difficulty(need("difficulty"));
  seq.num_objects = static_cast<std::size_t>(parse_int(need("num_objects")));
  const auto length = static_cast<std::size_t>(parse_int(need("length")));

  const std::string csv = read_text_file((dir / "boxes.csv").string());
  std::size_t pos = csv.find('\n');
  while (pos != std::string::npos && pos + 1 < csv.size()) {
    const auto next = csv.find('\n', pos + 1);
    const auto line = std::string_view(csv).substr(pos + 1, next - pos - 1);
    pos = next;
    if (trim(line).empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 5) throw ConfigError("boxes.csv: expected 5 fields in '" + std::string(line) + "'");
    seq.boxes.push_back({parse_double(f[1]), parse_double(f[2]), parse_double(f[3]),
                         parse_double(f[4])});
  }
  if (seq.boxes.size() != length)
    throw ConfigError("'" + dir.string() + "': header length " + std::to_string(length) +
                      " but " + std::to_string(seq.boxes.size()) + " boxes");
  const std::size_t expect = seq.height * seq.width * 3 * 8;
  for (std::size_t t = 0; t < length; ++t) {
    const auto path = (dir / frame_filename(t)).string();
    const std::string bytes = read_text_file(path);
    if (bytes.size() != expect)
      throw ConfigError("'" + path + "': expected " + std::to_string(expect) + " bytes, got " +
                        std::to_string(bytes.size()));
    seq.frames.emplace_back(Shape{seq.height, seq.width, 3}, binio::decode_f64s(bytes));
  }
  return seq;
}

// Sequence directories under `root`, sorted by name.
inline std::vector<fs::path> list_sequence_dirs(const fs::path& root) {
  if (!fs::is_directory(root))
    throw std::runtime_error("data directory '" + root.string() + "' does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "header.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no sequences found in '" + root.string() + "'");
  return dirs;
}

inline std::vector<SyntheticSequence> load_dataset(const fs::path& root) {
  std::vector<SyntheticSequence> out;
  for (const auto& d : list_sequence_dirs(root)) out.push_back(read_sequence(d));
  return out;
}

struct DatasetSpec {
  std::uint64_t seed = 1;
  std::size_t count = 64;
  std::size_t length = 24;
  std::size_t height = 128, width = 128;
  std::vector<Difficulty> difficulties{Difficulty::kEasy, Difficulty::kDistractor,
                                       Difficulty::kClutter};
};

// Sequence i uses seed derive(spec.seed, i) and difficulty cycling through the list.
inline std::vector<SyntheticSequence> gen_dataset(const DatasetSpec& spec) {
  if (spec.difficulties.empty()) throw ConfigError("gen_dataset: no difficulties");
  std::vector<SyntheticSequence> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i)
    out.push_back(gen_sequence(SplitMix64::derive(spec.seed, i), spec.length,
                               spec.difficulties[i % spec.difficulties.size()], spec.height,
                               spec.width));
  return out;
}

inline void write_dataset(const fs::path& root, const std::vector<SyntheticSequence>& seqs) {
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04zu", i);
    write_sequence(root / name, seqs[i]);
  }
}

}  // namespace loretrack
