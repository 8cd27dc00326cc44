#include <gtest/gtest.h>

#include <cmath>

#include "loretrack/distill.hpp"
#include "loretrack/gradcheck.hpp"
#include "loretrack/track_loss.hpp"
#include "test_support.hpp"

using namespace loretrack;
using loretrack::testing::bitwise_equal;
using loretrack::testing::random_dim;
using loretrack::testing::random_tensor;

namespace {

DiscMask random_mask(std::size_t g, SplitMix64& rng) {
  DiscMask m{g, g, std::vector<unsigned char>(g * g)};
  for (auto& c : m.cells) c = static_cast<unsigned char>(rng.below(2));
  return m;
}

QKVTriple random_triple(std::size_t n, std::size_t d, SplitMix64& rng, bool rg = false) {
  return {random_tensor({n, d}, rng, -1, 1, rg), random_tensor({n, d}, rng, -1, 1, rg),
          random_tensor({n, d}, rng, -1, 1, rg)};
}

QKVTriple aligned(const QKVTriple& s, std::size_t g) {
  return {align_phi(s.q, g, g).detach(), align_phi(s.k, g, g).detach(),
          align_phi(s.v, g, g).detach()};
}

Tensor scalar(double v) { return Tensor::scalar(v); }

// Channel-wise scalar bilinear reference on a [side × side × d] token grid.
double bilinear_ref(const Tensor& tokens, std::size_t side, std::size_t d, std::size_t ch,
                    std::size_t out, std::size_t oy, std::size_t ox) {
  auto src = [&](std::size_t o) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(side) /
                   static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(side - 1));
  };
  const double sy = src(oy), sx = src(ox);
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, side - 1), x1 = std::min(x0 + 1, side - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  auto v = [&](std::size_t y, std::size_t x) { return tokens[(y * side + x) * d + ch]; };
  return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) +
         fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1));
}

ModelConfig toy(std::size_t search, std::size_t layers = 2) {
  ModelConfig c;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_layers = layers;
  c.num_heads = 2;
  c.mlp_ratio = 2.0;
  c.search_resolution = search;
  c.template_resolution = 8;
  c.head_channels = 4;
  return c;
}

}  // namespace

TEST(AlignPhi, EqualGridsAreIdentity) {
  SplitMix64 rng(1);
  Tensor x = random_tensor({16, 5}, rng);
  EXPECT_TRUE(bitwise_equal(align_phi(x, 4, 4), x));
}

TEST(AlignPhi, ConstantFieldStaysConstant) {
  const Tensor y = align_phi(Tensor(Shape{64, 3}, -1.25), 12, 12);
  for (double v : y.data()) EXPECT_NEAR(v, -1.25, 1e-12);
}

TEST(AlignPhi, ToyRatioMatchesScalarOracle) {
  SplitMix64 rng(2);
  Tensor x = random_tensor({64, 6}, rng);
  Tensor y = align_phi(x, 12, 12);
  ASSERT_EQ(y.shape(), (Shape{144, 6}));
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      for (std::size_t c = 0; c < 6; ++c)
        EXPECT_NEAR(y[(i * 12 + j) * 6 + c], bilinear_ref(x, 8, 6, c, 12, i, j), 1e-14);
}

TEST(AlignPhi, Errors) {
  EXPECT_THROW(align_phi(Tensor(Shape{10, 3}), 4, 4), ConfigError);
  SplitMix64 rng(3);
  EXPECT_THROW(qkv_kd_loss(random_triple(16, 4, rng), random_triple(9, 3, rng)), DimensionError);
}

TEST(QkvKd, ZeroWhenTeacherIsAlignedStudent) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t gl = random_dim(rng, 1, 6), gh = gl + random_dim(rng, 0, 4);
    const std::size_t d = random_dim(rng, 1, 6);
    QKVTriple s = random_triple(gl * gl, d, rng);
    EXPECT_EQ(qkv_kd_loss(aligned(s, gh), s).item(), 0.0);
  }
}

TEST(QkvKd, SingleElementExample) {
  QKVTriple t{Tensor::matrix({{2}}), Tensor::matrix({{0}}), Tensor::matrix({{0}})};
  QKVTriple s{Tensor::matrix({{0}}), Tensor::matrix({{0}}), Tensor::matrix({{0}})};
  EXPECT_EQ(qkv_kd_loss(t, s).item(), 4.0);
}

TEST(QkvKd, QuadraticInResidual) {
  SplitMix64 rng(5);
  QKVTriple s = random_triple(16, 3, rng);
  QKVTriple a = aligned(s, 6);
  QKVTriple r = random_triple(36, 3, rng);
  QKVTriple t1{add(a.q, r.q), add(a.k, r.k), add(a.v, r.v)};
  QKVTriple t2{add(a.q, scale(r.q, 2)), add(a.k, scale(r.k, 2)), add(a.v, scale(r.v, 2))};
  EXPECT_NEAR(qkv_kd_loss(t2, s).item(), 4 * qkv_kd_loss(t1, s).item(), 1e-12);
}

TEST(QkvKd, NonNegativeAndGradientOnlyIntoStudent) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    QKVTriple s = random_triple(9, 4, rng, true), t = random_triple(16, 4, rng);
    Tensor l = qkv_kd_loss(t, s);
    EXPECT_GT(l.item(), 0.0);
    backward(l);
    EXPECT_TRUE(s.q.has_grad() && s.k.has_grad() && s.v.has_grad());
    EXPECT_FALSE(t.q.has_grad() || t.k.has_grad() || t.v.has_grad());
  }
}

TEST(DiscMap, Examples) {
  for (double v : disc_map(Tensor(Shape{4, 3}))) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(disc_map(Tensor(Shape{1, 5}, -3.0))[0], 9.0);
  const auto m = disc_map(Tensor::matrix({{1, 1}, {3, -1}}));
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 5.0);
}

TEST(DiscMap, InvariantUnderChannelSignFlip) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = random_dim(rng, 1, 10), c = random_dim(rng, 1, 6);
    Tensor f = random_tensor({n, c}, rng);
    Tensor flipped = f.detach();
    const std::size_t ch = rng.below(c);
    for (std::size_t i = 0; i < n; ++i) flipped.data()[i * c + ch] *= -1;
    EXPECT_EQ(disc_map(f), disc_map(flipped));
  }
}

TEST(DiscMask, Examples) {
  EXPECT_EQ(disc_mask({0, 0, 0, 0}, 2, 2, 0.2).count(), 0u);
  const auto m = disc_mask({1, 5}, 1, 2, 0.2);
  EXPECT_EQ(m.cells, (std::vector<unsigned char>{1, 1}));
  const auto b = disc_mask({0.19, 0.20, 0.21, 1.0}, 2, 2, 0.2);
  EXPECT_EQ(b.cells, (std::vector<unsigned char>{0, 1, 1, 1}));
  EXPECT_THROW(disc_mask({1, 2, 3}, 2, 2, 0.2), DimensionError);
  EXPECT_THROW(disc_mask({1, 2, 3, 4}, 2, 2, 1.5), ConfigError);
}

TEST(DiscMask, MonotoneInTau) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = random_dim(rng, 1, 12);
    std::vector<double> map(g * g);
    for (double& v : map) v = rng.uniform(0, 10);
    double lo = rng.uniform(), hi = rng.uniform();
    if (lo > hi) std::swap(lo, hi);
    const auto a = disc_mask(map, g, g, lo), b = disc_mask(map, g, g, hi);
    for (std::size_t i = 0; i < map.size(); ++i) EXPECT_LE(b.cells[i], a.cells[i]);
  }
}

TEST(DiscKd, ZeroWhenTeacherIsAlignedStudent) {
  SplitMix64 rng(9);
  Tensor fl = random_tensor({64, 5}, rng);
  Tensor fh = align_phi(fl, 12, 12).detach();
  EXPECT_EQ(disc_kd_loss(fh, fl, random_mask(12, rng), 0.6, 0.4).item(), 0.0);
}

TEST(DiscKd, ComplementaryMaskIdentity) {
  SplitMix64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t gl = random_dim(rng, 1, 6), gh = gl + random_dim(rng, 0, 5);
    const std::size_t d = random_dim(rng, 1, 6);
    Tensor fl = random_tensor({gl * gl, d}, rng), fh = random_tensor({gh * gh, d}, rng);
    const double a = rng.uniform(0, 3);
    const double full = mse(fh, align_phi(fl, gh, gh)).item();
    EXPECT_NEAR(disc_kd_loss(fh, fl, random_mask(gh, rng), a, a).item(), a * full, 1e-12);
  }
}

TEST(DiscKd, AllOnesMaskKeepsFirstTerm) {
  SplitMix64 rng(11);
  Tensor fl = random_tensor({16, 4}, rng), fh = random_tensor({36, 4}, rng);
  DiscMask ones{6, 6, std::vector<unsigned char>(36, 1)};
  EXPECT_NEAR(disc_kd_loss(fh, fl, ones, 0.7, 123.0).item(),
              0.7 * mse(fh, align_phi(fl, 6, 6)).item(), 1e-12);
  EXPECT_THROW(disc_kd_loss(fh, fl, DiscMask{5, 5, std::vector<unsigned char>(25)}, 1, 1),
               DimensionError);
}

TEST(TotalLoss, Examples) {
  DistillConfig cfg;
  EXPECT_DOUBLE_EQ(total_loss(scalar(1), scalar(2), scalar(100), scalar(200), cfg).item(), 6.0);
  cfg.beta1 = cfg.beta2 = 0;
  EXPECT_EQ(total_loss(scalar(1), scalar(2), scalar(100), scalar(200), cfg).item(), 3.0);
  DistillConfig off;
  off.enable_qkv_kd = off.enable_disc_kd = false;
  off.beta1 = off.beta2 = 7;
  EXPECT_FALSE(off.active());
  EXPECT_EQ(total_loss(scalar(1), scalar(2), scalar(100), scalar(200), off).item(), 3.0);
}

TEST(TotalLoss, ZeroBetasReduceToBaselineExactly) {
  SplitMix64 rng(12);
  DistillConfig cfg;
  cfg.beta1 = cfg.beta2 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double c = rng.uniform(0, 10), r = rng.uniform(0, 10);
    EXPECT_EQ(total_loss(scalar(c), scalar(r), scalar(rng.uniform(0, 1e6)),
                         scalar(rng.uniform(0, 1e6)), cfg).item(),
              c + r);
  }
}

TEST(Config, ValidationAndKeyRoundTrip) {
  DistillConfig d;
  d.tau = 1.2;
  EXPECT_THROW(d.validate(), ConfigError);
  d = DistillConfig{};
  d.alpha2 = -1;
  EXPECT_THROW(d.validate(), ConfigError);
  d = DistillConfig{};
  d.tau = 0.22;
  d.mode = KdMode::kFeature;
  d.layers = {1, 3};
  d.include_template = true;
  d.enable_disc_kd = false;
  DistillConfig back;
  back.apply(d.to_key_values());
  EXPECT_EQ(back, d);
  EXPECT_EQ(d.resolved_layers(4), (std::vector<std::size_t>{1, 3}));
  EXPECT_THROW(d.resolved_layers(2), ConfigError);
  EXPECT_EQ(DistillConfig{}.resolved_layers(4), (std::vector<std::size_t>{4}));
}

TEST(KdTerms, GradientsNeverReachFrozenTeacher) {
  SplitMix64 rng(13);
  const ModelConfig sc = toy(8), tc = toy(12);
  auto student = TrackerParams::init(sc, 1);
  auto teacher = TrackerParams::init(tc, 2);
  teacher.freeze();
  Tensor tmpl = random_tensor({8, 8, 3}, rng, 0, 1);
  auto t_out = forward_backbone(tmpl, random_tensor({12, 12, 3}, rng, 0, 1), teacher);
  DistillConfig cfg;
  cfg.beta1 = cfg.beta2 = 1.0;
  auto tt = teacher_targets(t_out, tc, cfg);
  auto s_out = forward_backbone(tmpl, random_tensor({8, 8, 3}, rng, 0, 1), student);
  auto kd = kd_terms(s_out, sc, tt, cfg);
  ASSERT_TRUE(kd.first && kd.disc);
  backward(add(*kd.first, *kd.disc));
  for (const auto& [name, t] : teacher.named_parameters()) EXPECT_FALSE(t.has_grad()) << name;
  EXPECT_TRUE(student.layers.back().w_q.has_grad());
}

TEST(KdTerms, DisabledTermsAreAbsent) {
  SplitMix64 rng(14);
  const ModelConfig sc = toy(8), tc = toy(12);
  auto student = TrackerParams::init(sc, 3);
  auto teacher = TrackerParams::init(tc, 4);
  teacher.freeze();
  Tensor tmpl = random_tensor({8, 8, 3}, rng, 0, 1);
  auto tt_out = forward_backbone(tmpl, random_tensor({12, 12, 3}, rng, 0, 1), teacher);
  auto s_out = forward_backbone(tmpl, random_tensor({8, 8, 3}, rng, 0, 1), student);
  DistillConfig cfg;
  cfg.enable_qkv_kd = false;
  auto kd = kd_terms(s_out, sc, teacher_targets(tt_out, tc, cfg), cfg);
  EXPECT_FALSE(kd.first);
  EXPECT_TRUE(kd.disc);
  cfg = DistillConfig{};
  cfg.beta2 = 0;
  kd = kd_terms(s_out, sc, teacher_targets(tt_out, tc, cfg), cfg);
  EXPECT_TRUE(kd.first);
  EXPECT_FALSE(kd.disc);
}

TEST(KdTerms, FiniteDifferencesOnToyModel) {
  SplitMix64 rng(15);
  const ModelConfig sc = toy(8, 1), tc = toy(12, 1);
  auto student = TrackerParams::init(sc, 5);
  auto teacher = TrackerParams::init(tc, 6);
  teacher.freeze();
  Tensor tmpl = random_tensor({8, 8, 3}, rng, 0, 1);
  Tensor s_img = random_tensor({8, 8, 3}, rng, 0, 1);
  DistillConfig cfg;
  cfg.beta1 = cfg.beta2 = 1.0;
  auto tt = teacher_targets(forward_backbone(tmpl, random_tensor({12, 12, 3}, rng, 0, 1), teacher),
                            tc, cfg);
  auto f = [&](const Tensor&) {
    auto kd = kd_terms(forward_backbone(tmpl, s_img, student), sc, tt, cfg);
    return add(*kd.first, *kd.disc);
  };
  for (Tensor* p : {&student.layers[0].w_q, &student.layers[0].w_v, &student.patch_w}) {
    std::vector<std::size_t> coords;
    for (int i = 0; i < 5; ++i) coords.push_back(rng.below(p->numel()));
    EXPECT_LE(finite_diff_check(f, *p, 1e-5, coords), 1e-4);
  }
}

TEST(FocalLoss, SaturatedLogitsStayFinite) {
  Tensor heat(Shape{2, 2}, std::vector<double>{1.0, 0.5, 0.0, 0.0});
  Tensor logits(Shape{2, 2}, std::vector<double>{-800.0, 900.0, 0.0, -3.0}, true);
  Tensor l = focal_loss(logits, heat);
  EXPECT_TRUE(std::isfinite(l.item()));
  backward(l);
  for (double g : logits.grad()) EXPECT_TRUE(std::isfinite(g));
  EXPECT_LT(logits.grad()[0], 0.0);  // pushes the positive cell up
}

TEST(FocalLoss, PerfectPredictionApproachesZero) {
  Tensor heat(Shape{1, 3}, std::vector<double>{0.0, 1.0, 0.0});
  Tensor logits(Shape{1, 3}, std::vector<double>{-40.0, 40.0, -40.0});
  EXPECT_LT(focal_loss(logits, heat).item(), 1e-15);
}
