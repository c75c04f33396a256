#pragma once

/**
 * Versioned binary weight container. Layout (all integers and doubles
 * little-endian):
 *
 *   bytes 0..7   magic "PPMCKPT1"
 *   u32          format version (currently 1)
 *   u64          run seed
 *   u64          optimizer step count
 *   u64          config echo length, then that many UTF-8 bytes
 *   u32          tensor count
 *   per tensor:  u32 name length, name bytes,
 *                u32 rank, u64 dims[rank],
 *                f64 data[product(dims)]
 *
 * Writing is deterministic: same weights and metadata give identical
 * bytes. Loading validates the magic, version, and every length field.
 */

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ppm/errors.hpp"
#include "ppm/model.hpp"
#include "ppm/tensor.hpp"

namespace ppm {

inline constexpr char kCheckpointMagic[8] = {'P', 'P', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string config_echo;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("checkpoint: truncated reading " + what);
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw DataError("checkpoint: truncated reading " + what);
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& in, const std::string& what) {
  const std::uint64_t bits = get_u64(in, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ParamStore& params,
                            const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  out.write(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, meta.seed);
  detail::put_u64(out, meta.step);
  detail::put_u64(out, meta.config_echo.size());
  out.write(meta.config_echo.data(),
            static_cast<std::streamsize>(meta.config_echo.size()));

  std::uint32_t count = 0;
  params.for_each([&](const char*, Tensor&, Tensor&) { ++count; });
  detail::put_u32(out, count);
  params.for_each([&](const char* name, Tensor& t, Tensor&) {
    const std::string n(name);
    detail::put_u32(out, static_cast<std::uint32_t>(n.size()));
    out.write(n.data(), static_cast<std::streamsize>(n.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) detail::put_u64(out, d);
    for (double v : t.span()) detail::put_f64(out, v);
  });
  if (!out) throw DataError(path + ": write failed");
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError(path + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  }
  LoadedCheckpoint ck;
  ck.meta.seed = detail::get_u64(in, "seed");
  ck.meta.step = detail::get_u64(in, "step");
  const std::uint64_t cfg_len = detail::get_u64(in, "config length");
  if (cfg_len > (1ull << 24)) throw DataError(path + ": config echo too large");
  ck.meta.config_echo.resize(cfg_len);
  if (cfg_len && !in.read(ck.meta.config_echo.data(),
                          static_cast<std::streamsize>(cfg_len))) {
    throw DataError(path + ": truncated config echo");
  }
  const std::uint32_t count = detail::get_u32(in, "tensor count");
  if (count > 4096) throw DataError(path + ": implausible tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(in, "name length");
    if (name_len > 4096) throw DataError(path + ": implausible name length");
    std::string name(name_len, '\0');
    if (name_len && !in.read(name.data(), name_len)) {
      throw DataError(path + ": truncated tensor name");
    }
    const std::uint32_t rank = detail::get_u32(in, name + " rank");
    if (rank > 8) throw DataError(path + ": implausible rank for " + name);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(detail::get_u64(in, name + " dim"));
      numel *= shape[d];
    }
    if (numel > (1ull << 30)) throw DataError(path + ": implausible tensor size");
    Tensor t(shape);
    for (std::size_t j = 0; j < numel; ++j) {
      t[j] = detail::get_f64(in, name + " data");
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

/// Copies checkpoint tensors into a parameter store built from the target
/// configuration; any missing tensor or shape mismatch is a ConfigError.
inline void apply_checkpoint(const LoadedCheckpoint& ck, ParamStore& params) {
  params.for_each([&](const char* name, Tensor& t, Tensor&) {
    const Tensor* src = ck.find(name);
    if (!src) {
      throw ConfigError(std::string("checkpoint: missing tensor ") + name);
    }
    if (src->shape() != t.shape()) {
      throw ConfigError(std::string("checkpoint: shape mismatch for ") + name +
                        ": file has " + shape_to_string(src->shape()) +
                        ", config needs " + shape_to_string(t.shape()));
    }
    t = *src;
  });
}

}  // namespace ppm
