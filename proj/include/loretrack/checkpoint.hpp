#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   "LRTK"                      4 bytes magic
//   version                     u32
//   config length, config       u32 + UTF-8 key=value lines
//   tensor count                u32
//   per tensor:
//     name length, name         u32 + UTF-8
//     rank                      u32
//     dims                      u64 × rank
//     values                    f64 × Π dims
//
// The config block carries the model architecture (`model.*`), training
// settings (`train.*`), distillation settings for students (`distill.*`) and
// anything else the writer records. Optimizer moments, when saved, are
// stored as tensors named `adam.m.<param>` / `adam.v.<param>`.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "loretrack/adam.hpp"
#include "loretrack/binio.hpp"
#include "loretrack/keyvalue.hpp"
#include "loretrack/vit_tracker.hpp"

namespace loretrack {

inline constexpr char kCheckpointMagic[4] = {'L', 'R', 'T', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersion, kTruncated, kFormat };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  KeyValues config;
  NamedTensors tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 4);
  binio::put_u32(out, kCheckpointVersion);
  const std::string cfg = format_key_values(ck.config);
  binio::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  binio::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    binio::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) binio::put_u64(out, d);
    binio::put_f64s(out, t.data());
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>") {
  using Kind = CheckpointError::Kind;
  auto truncated = [&](const std::string& what) {
    return CheckpointError(Kind::kTruncated,
                           "checkpoint '" + origin + "' truncated while reading " + what);
  };
  binio::Reader r(bytes);
  if (!r.has(4) || r.bytes(4) != std::string_view(kCheckpointMagic, 4))
    throw CheckpointError(Kind::kBadMagic, "checkpoint '" + origin + "' has bad magic (expected LRTK)");
  if (!r.has(4)) throw truncated("version");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::kVersion, "checkpoint '" + origin + "' has version " +
                                              std::to_string(version) + ", this build reads version " +
                                              std::to_string(kCheckpointVersion));
  if (!r.has(4)) throw truncated("config length");
  const auto cfg_len = r.u32();
  if (!r.has(cfg_len)) throw truncated("config block");
  Checkpoint ck;
  ck.config = parse_key_values(r.bytes(cfg_len));
  if (!r.has(4)) throw truncated("tensor count");
  const auto count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    if (!r.has(4)) throw truncated("tensor name length");
    const auto name_len = r.u32();
    if (!r.has(name_len)) throw truncated("tensor name");
    std::string name(r.bytes(name_len));
    if (!r.has(4)) throw truncated("rank of '" + name + "'");
    const auto rank = r.u32();
    if (rank == 0) throw CheckpointError(Kind::kFormat, "tensor '" + name + "' has rank 0");
    if (!r.has(8ull * rank)) throw truncated("dims of '" + name + "'");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0) throw CheckpointError(Kind::kFormat, "tensor '" + name + "' has a zero dimension");
      numel *= d;
    }
    if (numel > r.remaining() / 8) throw truncated("values of '" + name + "'");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.f64();
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0)
    throw CheckpointError(Kind::kFormat, "checkpoint '" + origin + "' has " +
                                             std::to_string(r.remaining()) + " trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed for '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::ostringstream oss;
  oss << in.rdbuf();
  return decode_checkpoint(oss.str(), path.string());
}

// ---------------------------------------------------------------- model bridge

inline Checkpoint make_checkpoint(const TrackerParams& params, KeyValues extra = {},
                                  const Adam* optimizer = nullptr) {
  Checkpoint ck;
  ck.config = std::move(extra);
  for (auto& [k, v] : params.config.to_key_values()) ck.config[k] = v;
  for (const auto& [name, t] : params.named_parameters()) ck.tensors.emplace_back(name, t.detach());
  if (optimizer) {
    ck.config["adam.step"] = std::to_string(optimizer->steps());
    const auto named = params.named_parameters();
    for (std::size_t k = 0; k < named.size(); ++k) {
      ck.tensors.emplace_back("adam.m." + named[k].first,
                              Tensor(named[k].second.shape(), optimizer->first_moments()[k]));
      ck.tensors.emplace_back("adam.v." + named[k].first,
                              Tensor(named[k].second.shape(), optimizer->second_moments()[k]));
    }
  }
  return ck;
}

// Rebuilds tracker parameters; every parameter must be present with the
// shape its config implies. Loaded parameters are trainable leaves.
inline TrackerParams params_from_checkpoint(const Checkpoint& ck) {
  ModelConfig cfg;
  cfg.apply(ck.config);
  TrackerParams p = TrackerParams::init(cfg, 0);
  for (auto& [name, t] : p.named_parameters()) {
    const Tensor* src = ck.find(name);
    if (!src)
      throw CheckpointError(CheckpointError::Kind::kFormat, "checkpoint lacks parameter '" + name + "'");
    if (src->shape() != t.shape())
      throw CheckpointError(CheckpointError::Kind::kFormat,
                            "parameter '" + name + "' has shape " + shape_str(src->shape()) +
                                ", config implies " + shape_str(t.shape()));
    std::copy(src->data().begin(), src->data().end(), t.data().begin());
  }
  return p;
}

inline void restore_optimizer(const Checkpoint& ck, const TrackerParams& params, Adam& opt) {
  auto it = ck.config.find("adam.step");
  if (it == ck.config.end()) return;
  opt.set_steps(static_cast<std::size_t>(parse_int(it->second)));
  const auto named = params.named_parameters();
  for (std::size_t k = 0; k < named.size(); ++k) {
    const Tensor* m = ck.find("adam.m." + named[k].first);
    const Tensor* v = ck.find("adam.v." + named[k].first);
    if (!m || !v) throw CheckpointError(CheckpointError::Kind::kFormat,
                                        "optimizer state for '" + named[k].first + "' missing");
    opt.first_moments()[k].assign(m->data().begin(), m->data().end());
    opt.second_moments()[k].assign(v->data().begin(), v->data().end());
  }
}

// FNV-1a over all parameter names and value bytes.
inline std::uint64_t params_checksum(const TrackerParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [name, t] : p.named_parameters()) {
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(bits >> (8 * i)));
    }
  }
  return h;
}

}  // namespace loretrack
