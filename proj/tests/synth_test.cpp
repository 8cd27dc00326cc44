#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "loretrack/bbox.hpp"
#include "loretrack/ops.hpp"
#include "loretrack/synth.hpp"
#include "test_support.hpp"

using namespace loretrack;
using loretrack::testing::bitwise_equal;
using loretrack::testing::random_dim;

namespace {

bool same_sequence(const SyntheticSequence& a, const SyntheticSequence& b) {
  if (a.length() != b.length() || a.num_objects != b.num_objects) return false;
  for (std::size_t t = 0; t < a.length(); ++t) {
    if (!bitwise_equal(a.frames[t], b.frames[t])) return false;
    if (!(a.boxes[t] == b.boxes[t])) return false;
  }
  return true;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BBox random_box(SplitMix64& rng) {
  return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.4),
          rng.uniform(0.05, 0.4)};
}

}  // namespace

TEST(GenSequence, DeterministicFromSeed) {
  for (auto d : {Difficulty::kEasy, Difficulty::kDistractor, Difficulty::kClutter}) {
    auto a = gen_sequence(42, 6, d, 64, 80), b = gen_sequence(42, 6, d, 64, 80);
    EXPECT_TRUE(same_sequence(a, b)) << to_string(d);
    EXPECT_FALSE(same_sequence(a, gen_sequence(43, 6, d, 64, 80)));
  }
}

TEST(GenSequence, ObjectCounts) {
  EXPECT_EQ(gen_sequence(1, 3, Difficulty::kEasy, 64, 64).num_objects, 1u);
  EXPECT_GT(gen_sequence(1, 3, Difficulty::kDistractor, 64, 64).num_objects, 1u);
}

TEST(GenSequence, InvalidDimensions) {
  EXPECT_THROW(gen_sequence(1, 1, Difficulty::kEasy, 64, 64), ConfigError);
  EXPECT_THROW(gen_sequence(1, 4, Difficulty::kEasy, 32, 64), ConfigError);
  EXPECT_THROW(parse_difficulty("hard"), ConfigError);
}

TEST(GenSequence, BoxesStayInFrameAndPixelsInRange) {
  SplitMix64 rng(5);
  const BBox frame{0.5, 0.5, 1.0, 1.0};
  for (int trial = 0; trial < 12; ++trial) {
    const auto d = static_cast<Difficulty>(trial % 3);
    const std::size_t h = random_dim(rng, 64, 96), w = random_dim(rng, 64, 96);
    auto s = gen_sequence(rng.next(), 30, d, h, w);
    ASSERT_EQ(s.frames.size(), s.boxes.size());
    for (const auto& b : s.boxes) {
      EXPECT_GT(b.w, 0.0);
      EXPECT_GT(b.h, 0.0);
      EXPECT_GT(intersection_area(b, frame), 0.0);
    }
    for (std::size_t t = 1; t < s.length(); ++t) {
      const double ratio = s.boxes[t].w / s.boxes[t - 1].w;
      EXPECT_LE(std::abs(ratio - 1.0), 0.05 + 1e-12);
    }
    for (const auto& f : s.frames)
      for (double v : f.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(CropRegion, InsideWindowAtNativeSizeIsRawPixels) {
  auto seq = gen_sequence(7, 2, Difficulty::kClutter, 64, 64);
  const Tensor& frame = seq.frames[0];
  // Side 2·√(16·16) = 32 pixels starting at (16, 16).
  auto [crop, map] = crop_region(frame, BBox{0.5, 0.5, 0.25, 0.25}, 2.0, 32);
  EXPECT_EQ(map.window, (CropWindow{16, 16, 32}));
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        ASSERT_EQ(crop[(y * 32 + x) * 3 + c], frame[((y + 16) * 64 + x + 16) * 3 + c]);
}

TEST(CropRegion, MappingRoundTrip) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = random_dim(rng, 64, 200), w = random_dim(rng, 64, 200);
    const CropMapping m{crop_window(random_box(rng), rng.uniform(1.5, 5), h, w), w, h};
    const BBox b = random_box(rng);
    const BBox r = m.to_frame(m.to_crop(b));
    EXPECT_NEAR(r.cx, b.cx, 1e-9);
    EXPECT_NEAR(r.cy, b.cy, 1e-9);
    EXPECT_NEAR(r.w, b.w, 1e-9);
    EXPECT_NEAR(r.h, b.h, 1e-9);
  }
}

TEST(CropRegion, OutOfFramePadsWithChannelMean) {
  Tensor frame(Shape{64, 64, 3});
  for (std::size_t i = 0; i < frame.numel(); ++i) frame.data()[i] = (i % 3) * 0.25;
  auto [crop, map] = crop_region(frame, BBox{0.02, 0.02, 0.1, 0.1}, 4.0, 16);
  const auto mean = channel_mean(frame);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(crop[c], mean[c], 1e-12);
}

TEST(CropRegion, DegenerateInputs) {
  Tensor frame(Shape{64, 64, 3});
  EXPECT_THROW(crop_region(frame, BBox{0.5, 0.5, 0.0, 0.1}, 2.0, 16), ConfigError);
  EXPECT_THROW(crop_region(frame, BBox{0.5, 0.5, 0.1, 0.1}, 1.0, 16), ConfigError);
}

TEST(CropRegion, TwoResolutionsAgree) {
  auto seq = gen_sequence(9, 2, Difficulty::kEasy, 128, 128);
  const CropWindow win = crop_window(seq.boxes[0], kSearchContext, 128, 128);
  Tensor hi = render_window(seq.frames[0], win, 96);
  Tensor lo = render_window(seq.frames[0], win, 64);
  Tensor down = bilinear_resize(hi, 64, 64);
  double err = 0;
  for (std::size_t i = 0; i < lo.numel(); ++i) err += std::abs(lo[i] - down[i]);
  EXPECT_LT(err / static_cast<double>(lo.numel()), 0.02);
}

TEST(CropSample, SearchImagesShareOneWindow) {
  SplitMix64 rng(10);
  auto seq = gen_sequence(11, 8, Difficulty::kDistractor, 96, 96);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t frame = rng.below(8);
    auto s = make_crop_sample(seq, 0, frame, {48, 32}, {96, 64}, JitterConfig{}, rng);
    ASSERT_EQ(s.search_img.size(), 2u);
    // Each resolution is a resample of the single stored window.
    for (const auto& [res, img] : s.search_img)
      EXPECT_TRUE(bitwise_equal(img, render_window(seq.frames[frame], s.search_map.window, res)));
    const BBox& g = s.gt_box_in_crop;
    EXPECT_GE(g.x0(), 0.0);
    EXPECT_LE(g.x1(), 1.0);
    EXPECT_GE(g.y0(), 0.0);
    EXPECT_LE(g.y1(), 1.0);
  }
}

TEST(CropSample, ResolutionsRenderSameWindow) {
  SplitMix64 a(12), b(12);
  auto seq = gen_sequence(13, 6, Difficulty::kClutter, 96, 96);
  auto both = make_crop_sample(seq, 0, 4, {48, 32}, {96, 64}, JitterConfig{}, a);
  auto only_low = make_crop_sample(seq, 0, 4, {32}, {64}, JitterConfig{}, b);
  EXPECT_EQ(both.search_map.window, only_low.search_map.window);
  EXPECT_TRUE(bitwise_equal(both.search_img.at(64), only_low.search_img.at(64)));
  EXPECT_TRUE(bitwise_equal(both.search_img.at(96),
                            render_window(seq.frames[4], both.search_map.window, 96)));
  EXPECT_TRUE(bitwise_equal(both.template_img.at(32),
                            render_window(seq.frames[0], both.template_map.window, 32)));
  EXPECT_EQ(a.next(), b.next());
}

TEST(Targets, HandMappedCentre) {
  auto t = make_targets(BBox{0.5, 0.5, 0.25, 0.25}, 8, 8);
  EXPECT_EQ(t.cell_i, 4u);
  EXPECT_EQ(t.cell_j, 4u);
  EXPECT_EQ(t.offset_x, 0.0);
  EXPECT_EQ(t.offset_y, 0.0);
  EXPECT_EQ(t.size_w, 0.25);
  EXPECT_EQ(t.size_h, 0.25);
  EXPECT_EQ(t.heatmap[4 * 8 + 4], 1.0);
}

TEST(Targets, CentredBoxOnOddGridIsRotationSymmetric) {
  for (std::size_t g : {5u, 7u, 9u}) {
    auto t = make_targets(BBox{0.5, 0.5, 0.3, 0.2}, g, g);
    EXPECT_EQ(t.cell_i, g / 2);
    for (std::size_t i = 0; i < g * g; ++i) EXPECT_EQ(t.heatmap[i], t.heatmap[g * g - 1 - i]);
  }
}

TEST(Targets, SinglePeakInUnitRange) {
  SplitMix64 rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t g = random_dim(rng, 1, 16);
    BBox b{rng.uniform(), rng.uniform(), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
    auto t = make_targets(b, g, g);
    std::size_t peaks = 0;
    for (double v : t.heatmap.data()) {
      EXPECT_TRUE(v >= 0.0 && v <= 1.0);
      peaks += v == 1.0;
    }
    EXPECT_EQ(peaks, 1u);
    EXPECT_EQ(t.heatmap[t.cell_i * g + t.cell_j], 1.0);
    EXPECT_TRUE(t.offset_x >= 0 && t.offset_x <= 1);
  }
}

TEST(Iou, Examples) {
  const BBox a{0.5, 0.5, 0.2, 0.3};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BBox{0.9, 0.9, 0.1, 0.1}), 0.0);
  EXPECT_NEAR(iou(BBox{0.5, 0.5, 1, 1}, BBox{1.0, 0.5, 1, 1}), 1.0 / 3.0, 1e-15);
}

TEST(Iou, SymmetricBoundedAndShrinkMonotone) {
  SplitMix64 rng(15);
  for (int trial = 0; trial < 500; ++trial) {
    const BBox a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    BBox smaller = a;
    smaller.w *= rng.uniform(0.1, 1.0);
    smaller.h *= rng.uniform(0.1, 1.0);
    EXPECT_LE(intersection_area(smaller, b), intersection_area(a, b) + 1e-15);
    EXPECT_LE(giou(a, b), v + 1e-15);
  }
}

TEST(Dataset, WriteReadRoundTripIsBitwise) {
  const auto dir = std::filesystem::temp_directory_path() / "loretrack_synth_rt";
  std::filesystem::remove_all(dir);
  DatasetSpec spec;
  spec.count = 3;
  spec.length = 4;
  spec.height = spec.width = 64;
  auto seqs = gen_dataset(spec);
  write_dataset(dir, seqs);
  auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(same_sequence(seqs[i], back[i]));
    EXPECT_EQ(back[i].difficulty, seqs[i].difficulty);
    EXPECT_EQ(back[i].seed, seqs[i].seed);
  }
  const std::string csv = slurp(dir / "seq_0000" / "boxes.csv");
  EXPECT_EQ(csv.rfind("frame,cx,cy,w,h\n", 0), 0u);
  EXPECT_EQ(std::filesystem::file_size(dir / "seq_0000" / frame_filename(0)), 64u * 64 * 3 * 8);

  const auto dir2 = dir.string() + "_again";
  std::filesystem::remove_all(dir2);
  write_dataset(dir2, gen_dataset(spec));
  for (const char* f : {"header.txt", "boxes.csv", "frame_00003.f64"})
    EXPECT_EQ(slurp(dir / "seq_0002" / f), slurp(std::filesystem::path(dir2) / "seq_0002" / f)) << f;
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}
