#pragma once

// One-stream ViT tracker: template and search patches are embedded, given
// separate learnable position embeddings, concatenated and processed jointly
// by a stack of pre-norm encoder layers. The search-region slice of the final
// hidden state feeds a centre-based head (score / offset / size maps).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "loretrack/bbox.hpp"
#include "loretrack/keyvalue.hpp"
#include "loretrack/ops.hpp"
#include "loretrack/random.hpp"

namespace loretrack {

struct ModelConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t search_resolution = 96;
  std::size_t template_resolution = 48;
  std::size_t head_channels = 32;

  std::size_t search_grid() const { return search_resolution / patch_size; }
  std::size_t template_grid() const { return template_resolution / patch_size; }
  std::size_t num_search_tokens() const { return search_grid() * search_grid(); }
  std::size_t num_template_tokens() const { return template_grid() * template_grid(); }
  std::size_t num_tokens() const { return num_search_tokens() + num_template_tokens(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(embed_dim)));
  }

  void validate() const {
    if (patch_size == 0 || embed_dim == 0 || num_heads == 0 || head_channels == 0)
      throw ConfigError("model config: sizes must be positive");
    if (search_resolution == 0 || search_resolution % patch_size != 0)
      throw ConfigError("model config: search_resolution " +
                        std::to_string(search_resolution) +
                        " not divisible by patch_size " + std::to_string(patch_size));
    if (template_resolution == 0 || template_resolution % patch_size != 0)
      throw ConfigError("model config: template_resolution " +
                        std::to_string(template_resolution) +
                        " not divisible by patch_size " + std::to_string(patch_size));
    if (embed_dim % num_heads != 0)
      throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    if (!(mlp_ratio > 0) || mlp_hidden() == 0)
      throw ConfigError("model config: mlp_ratio must be positive");
  }

  // Same architecture at another input size; template stays at half the search.
  ModelConfig at_resolution(std::size_t search) const {
    ModelConfig c = *this;
    c.search_resolution = search;
    c.template_resolution = search / 2;
    return c;
  }

  // ViT-B/16 backbone (D=768, 12 layers, 12 heads).
  static ModelConfig vit_b(std::size_t search = 256) {
    ModelConfig c;
    c.patch_size = 16;
    c.embed_dim = 768;
    c.num_layers = 12;
    c.num_heads = 12;
    c.mlp_ratio = 4.0;
    c.head_channels = 256;
    return c.at_resolution(search);
  }

  // Desk-scale defaults: 96² teacher, 64² student.
  static ModelConfig toy_teacher() { return ModelConfig{}; }
  static ModelConfig toy_student() { return ModelConfig{}.at_resolution(64); }

  KeyValues to_key_values() const {
    return {{"model.patch_size", std::to_string(patch_size)},
            {"model.embed_dim", std::to_string(embed_dim)},
            {"model.num_layers", std::to_string(num_layers)},
            {"model.num_heads", std::to_string(num_heads)},
            {"model.mlp_ratio", format_double(mlp_ratio)},
            {"model.search_resolution", std::to_string(search_resolution)},
            {"model.template_resolution", std::to_string(template_resolution)},
            {"model.head_channels", std::to_string(head_channels)}};
  }

  // Reads the `model.*` keys that are present; others keep their values.
  void apply(const KeyValues& kv) {
    auto get = [&](const char* key, std::size_t& dst) {
      if (auto it = kv.find(key); it != kv.end()) {
        const auto v = parse_int(it->second, key);
        if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
        dst = static_cast<std::size_t>(v);
      }
    };
    get("model.patch_size", patch_size);
    get("model.embed_dim", embed_dim);
    get("model.num_layers", num_layers);
    get("model.num_heads", num_heads);
    get("model.search_resolution", search_resolution);
    get("model.template_resolution", template_resolution);
    get("model.head_channels", head_channels);
    if (auto it = kv.find("model.mlp_ratio"); it != kv.end())
      mlp_ratio = parse_double(it->second, "model.mlp_ratio");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_q, w_k, w_v;  // [D×D], no bias
  Tensor w_o, b_o;       // attention output projection
  Tensor ln2_gain, ln2_bias;
  Tensor w_mlp1, b_mlp1;  // D → hidden
  Tensor w_mlp2, b_mlp2;  // hidden → D
};

// Two-layer per-cell MLP: D → head_channels (GELU) → out (sigmoid).
struct HeadBranch {
  Tensor w1, b1, w2, b2;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class TrackerParams {
 public:
  ModelConfig config;
  Tensor patch_w, patch_b;  // [3·p² × D], [D]
  Tensor pos_template;      // [N_t × D]
  Tensor pos_search;        // [N_s × D]
  std::vector<LayerParams> layers;
  HeadBranch score_head, offset_head, size_head;

  static TrackerParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng(seed);
    const std::size_t d = cfg.embed_dim, hid = cfg.mlp_hidden(), hc = cfg.head_channels;
    const std::size_t patch_in = 3 * cfg.patch_size * cfg.patch_size;
    auto normal = [&rng](Shape s, double std) {
      Tensor t(std::move(s), 0.0, true);
      for (double& v : t.data()) v = std * rng.normal();
      return t;
    };
    auto fill = [](Shape s, double v) { return Tensor(std::move(s), v, true); };
    auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

    TrackerParams p;
    p.config = cfg;
    p.patch_w = normal({patch_in, d}, fan(patch_in));
    p.patch_b = fill({d}, 0.0);
    p.pos_template = normal({cfg.num_template_tokens(), d}, 0.02);
    p.pos_search = normal({cfg.num_search_tokens(), d}, 0.02);
    for (std::size_t m = 0; m < cfg.num_layers; ++m) {
      LayerParams l;
      l.ln1_gain = fill({d}, 1.0);
      l.ln1_bias = fill({d}, 0.0);
      l.w_q = normal({d, d}, fan(d));
      l.w_k = normal({d, d}, fan(d));
      l.w_v = normal({d, d}, fan(d));
      l.w_o = normal({d, d}, fan(d));
      l.b_o = fill({d}, 0.0);
      l.ln2_gain = fill({d}, 1.0);
      l.ln2_bias = fill({d}, 0.0);
      l.w_mlp1 = normal({d, hid}, fan(d));
      l.b_mlp1 = fill({hid}, 0.0);
      l.w_mlp2 = normal({hid, d}, fan(hid));
      l.b_mlp2 = fill({d}, 0.0);
      p.layers.push_back(std::move(l));
    }
    auto branch = [&](std::size_t out, double out_bias) {
      return HeadBranch{normal({d, hc}, fan(d)), fill({hc}, 0.0),
                        normal({hc, out}, fan(hc)), fill({out}, out_bias)};
    };
    // Score bias starts at a 0.1 foreground prior.
    p.score_head = branch(1, -2.1972245773362196);
    p.offset_head = branch(2, 0.0);
    p.size_head = branch(2, 0.0);
    return p;
  }

  // Ordered (name, handle) list; handles alias the stored tensors.
  NamedTensors named_parameters() const {
    NamedTensors out;
    out.emplace_back("patch.weight", patch_w);
    out.emplace_back("patch.bias", patch_b);
    out.emplace_back("pos.template", pos_template);
    out.emplace_back("pos.search", pos_search);
    for (std::size_t m = 0; m < layers.size(); ++m) {
      const auto& l = layers[m];
      const std::string pre = "layer" + std::to_string(m) + ".";
      out.emplace_back(pre + "ln1.gain", l.ln1_gain);
      out.emplace_back(pre + "ln1.bias", l.ln1_bias);
      out.emplace_back(pre + "attn.w_q", l.w_q);
      out.emplace_back(pre + "attn.w_k", l.w_k);
      out.emplace_back(pre + "attn.w_v", l.w_v);
      out.emplace_back(pre + "attn.w_o", l.w_o);
      out.emplace_back(pre + "attn.b_o", l.b_o);
      out.emplace_back(pre + "ln2.gain", l.ln2_gain);
      out.emplace_back(pre + "ln2.bias", l.ln2_bias);
      out.emplace_back(pre + "mlp.w1", l.w_mlp1);
      out.emplace_back(pre + "mlp.b1", l.b_mlp1);
      out.emplace_back(pre + "mlp.w2", l.w_mlp2);
      out.emplace_back(pre + "mlp.b2", l.b_mlp2);
    }
    auto head = [&out](const std::string& pre, const HeadBranch& b) {
      out.emplace_back(pre + ".w1", b.w1);
      out.emplace_back(pre + ".b1", b.b1);
      out.emplace_back(pre + ".w2", b.w2);
      out.emplace_back(pre + ".b2", b.b2);
    };
    head("head.score", score_head);
    head("head.offset", offset_head);
    head("head.size", size_head);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  // Frozen parameters carry no requires_grad, so no graph is recorded
  // through them and no gradient buffer is ever allocated.
  void freeze() {
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(false);
  }
  bool frozen() const {
    for (const auto& [name, t] : named_parameters())
      if (t.requires_grad()) return false;
    return true;
  }

  void zero_grad() {
    for (auto& [name, t] : named_parameters()) t.zero_grad();
  }
};

// ---------------------------------------------------------------- forward pieces

// Non-overlapping p×p patches of an [H×W×3] image, row-major patch order,
// each flattened over (y, x, channel): result [N × 3p²].
inline Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError("patchify: expected [H x W x 3], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw ConfigError("patchify: image " + shape_str(image.shape()) +
                      " not divisible by patch size " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch, row = 3 * patch;
  const std::size_t width = patch * row;
  std::vector<std::size_t> index(gh * gw * width);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t k = 0; k < row; ++k)
          index[(py * gw + px) * width + y * row + k] =
              ((py * patch + y) * w + px * patch) * 3 + k;
  const auto src = image.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = src[index[i]];
  return make_result({gh * gw, width}, std::move(out), {image},
                     [index = std::move(index)](Node& self) {
    if (double* g = detail::pgrad(self, 0))
      for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

// Patch partition + linear projection: [H×W×3] → [N×D].
inline Tensor tokenize(const Tensor& image, const TrackerParams& params) {
  return add(matmul(patchify(image, params.config.patch_size), params.patch_w),
             params.patch_b);
}

// concat(E_t + P_t, E_s + P_s), template rows first.
inline Tensor embed_inputs(const Tensor& template_img, const Tensor& search_img,
                           const TrackerParams& params) {
  const auto& c = params.config;
  if (template_img.rank() != 3 || template_img.dim(0) != c.template_resolution ||
      template_img.dim(1) != c.template_resolution)
    throw ConfigError("template image " + shape_str(template_img.shape()) +
                      " does not match template_resolution " +
                      std::to_string(c.template_resolution));
  if (search_img.rank() != 3 || search_img.dim(0) != c.search_resolution ||
      search_img.dim(1) != c.search_resolution)
    throw ConfigError("search image " + shape_str(search_img.shape()) +
                      " does not match search_resolution " +
                      std::to_string(c.search_resolution));
  Tensor t = add(tokenize(template_img, params), params.pos_template);
  Tensor s = add(tokenize(search_img, params), params.pos_search);
  return concat_rows(t, s);
}

struct EncoderLayerOutput {
  Tensor h;        // H_out [N×D]
  Tensor q, k, v;  // merged-head projections of LN(H_in), [N×D]
  std::vector<Tensor> attention;  // per head [N×N]
};

// Pre-norm block: H̃ = MSA(LN(H)) + H,  H' = MLP(LN(H̃)) + H̃.
inline EncoderLayerOutput encoder_layer(const Tensor& h_in, const LayerParams& lp,
                                        std::size_t num_heads) {
  const std::size_t d = h_in.cols();
  if (d % num_heads != 0) throw ConfigError("encoder_layer: D not divisible by heads");
  const std::size_t dh = d / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  EncoderLayerOutput out;
  Tensor hn = layer_norm(h_in, lp.ln1_gain, lp.ln1_bias);
  out.q = matmul(hn, lp.w_q);
  out.k = matmul(hn, lp.w_k);
  out.v = matmul(hn, lp.w_v);

  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (std::size_t hi = 0; hi < num_heads; ++hi) {
    Tensor qh = slice_cols(out.q, hi * dh, dh);
    Tensor kh = slice_cols(out.k, hi * dh, dh);
    Tensor vh = slice_cols(out.v, hi * dh, dh);
    Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    heads.push_back(matmul(attn, vh));
    out.attention.push_back(std::move(attn));
  }
  Tensor msa = add(matmul(concat_cols(heads), lp.w_o), lp.b_o);
  Tensor h_mid = add(h_in, msa);
  Tensor hidden = gelu(add(matmul(layer_norm(h_mid, lp.ln2_gain, lp.ln2_bias), lp.w_mlp1),
                           lp.b_mlp1));
  out.h = add(h_mid, add(matmul(hidden, lp.w_mlp2), lp.b_mlp2));
  return out;
}

// Search-region rows of the last layer's Q/K/V.
struct QKVTriple {
  Tensor q, k, v;  // [N_s × D]
};

struct BackboneOutput {
  Tensor h0;
  Tensor f_t;  // [N_t × D]
  Tensor f_s;  // [N_s × D]
  QKVTriple last_qkv_s;  // empty when num_layers == 0
  std::vector<EncoderLayerOutput> layers;

  // Search (or template) slice of layer m's projections.
  QKVTriple qkv_search(std::size_t m, std::size_t n_t) const {
    const auto& l = layers.at(m);
    const std::size_t n_s = l.q.rows() - n_t;
    return {slice_rows(l.q, n_t, n_s), slice_rows(l.k, n_t, n_s),
            slice_rows(l.v, n_t, n_s)};
  }
  QKVTriple qkv_template(std::size_t m, std::size_t n_t) const {
    const auto& l = layers.at(m);
    return {slice_rows(l.q, 0, n_t), slice_rows(l.k, 0, n_t), slice_rows(l.v, 0, n_t)};
  }
};

inline BackboneOutput forward_backbone(const Tensor& template_img,
                                       const Tensor& search_img,
                                       const TrackerParams& params) {
  const auto& c = params.config;
  BackboneOutput out;
  out.h0 = embed_inputs(template_img, search_img, params);
  Tensor h = out.h0;
  for (const auto& lp : params.layers) {
    out.layers.push_back(encoder_layer(h, lp, c.num_heads));
    h = out.layers.back().h;
  }
  auto [f_t, f_s] = split_rows(h, c.num_template_tokens());
  out.f_t = std::move(f_t);
  out.f_s = std::move(f_s);
  if (!out.layers.empty())
    out.last_qkv_s = out.qkv_search(out.layers.size() - 1, c.num_template_tokens());
  return out;
}

struct HeadOutput {
  Tensor score_logits;  // [Hs × Ws], before the sigmoid
  Tensor score_map;   // [Hs × Ws], sigmoid
  Tensor offset_map;  // [Hs × Ws × 2], (x, y) within cell, sigmoid
  Tensor size_map;    // [Hs × Ws × 2], (w, h) as crop fraction, sigmoid
  std::size_t grid_h = 0, grid_w = 0;
};

// Pre-sigmoid output of one head branch.
inline Tensor head_logits(const Tensor& f_s, const HeadBranch& b) {
  Tensor hidden = gelu(add(matmul(f_s, b.w1), b.b1));
  return add(matmul(hidden, b.w2), b.b2);
}

inline Tensor head_branch(const Tensor& f_s, const HeadBranch& b) {
  return sigmoid(head_logits(f_s, b));
}

inline HeadOutput head_forward(const Tensor& f_s, const TrackerParams& params) {
  const std::size_t g = params.config.search_grid();
  if (f_s.rank() != 2 || f_s.rows() != g * g || f_s.cols() != params.config.embed_dim)
    throw DimensionError("head_forward: expected [" + std::to_string(g * g) + " x " +
                         std::to_string(params.config.embed_dim) + "], got " +
                         shape_str(f_s.shape()));
  HeadOutput out;
  out.grid_h = out.grid_w = g;
  out.score_logits = reshape(head_logits(f_s, params.score_head), {g, g});
  out.score_map = sigmoid(out.score_logits);
  out.offset_map = reshape(head_branch(f_s, params.offset_head), {g, g, 2});
  out.size_map = reshape(head_branch(f_s, params.size_head), {g, g, 2});
  return out;
}

// Periodic Hann window; its peak sits exactly on index n/2.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  return w;
}

// Argmax of the (optionally Hann-weighted) score map; centre from cell +
// offset, size from the size map. Result is normalized to the search crop.
inline BBox decode_box(const HeadOutput& h, double window_penalty) {
  if (window_penalty < 0.0 || window_penalty > 1.0)
    throw ConfigError("decode_box: window_penalty must be in [0,1]");
  const std::size_t gh = h.grid_h, gw = h.grid_w;
  const auto score = h.score_map.data();
  const auto hy = hann_window(gh), hx = hann_window(gw);
  std::size_t best = 0;
  double best_v = -1.0;
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      double s = score[i * gw + j];
      if (window_penalty > 0)
        s *= (1.0 - window_penalty) + window_penalty * hy[i] * hx[j];
      if (s > best_v) {
        best_v = s;
        best = i * gw + j;
      }
    }
  const std::size_t bi = best / gw, bj = best % gw;
  const auto off = h.offset_map.data();
  const auto sz = h.size_map.data();
  BBox b;
  b.cx = (static_cast<double>(bj) + off[best * 2]) / static_cast<double>(gw);
  b.cy = (static_cast<double>(bi) + off[best * 2 + 1]) / static_cast<double>(gh);
  b.w = sz[best * 2];
  b.h = sz[best * 2 + 1];
  return b;
}

// Analytic multiply-accumulate count of one forward pass.
//   per layer: QKV 3ND² + output projection ND² + attention 2N²D + MLP 2·r·ND²
//   patch embedding: 3p²D per token; head: three per-cell 2-layer MLPs.
inline double estimate_macs(const ModelConfig& c) {
  c.validate();
  const double n = static_cast<double>(c.num_tokens());
  const double d = static_cast<double>(c.embed_dim);
  const double p = static_cast<double>(c.patch_size);
  const double per_layer = 3 * n * d * d + n * d * d + 2 * n * n * d +
                           2 * c.mlp_ratio * n * d * d;
  const double embed = 3 * p * p * d * n;
  const double hc = static_cast<double>(c.head_channels);
  const double head = static_cast<double>(c.num_search_tokens()) * (3 * d * hc + 5 * hc);
  return per_layer * static_cast<double>(c.num_layers) + embed + head;
}

}  // namespace loretrack
