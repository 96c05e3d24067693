#pragma once

// Versioned binary checkpoint: config echo, named parameter/buffer arrays
// with shape and dtype descriptors, optimizer moments, counters, RNG state,
// and a trailing CRC-32 over the whole payload.

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cebsnet/config.hpp"
#include "cebsnet/optimizer.hpp"

namespace cebsnet {

namespace ckpt {

constexpr char kMagic[8] = {'C', 'E', 'B', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

enum EntryKind : std::uint8_t {
  kParam = 0,
  kBuffer = 1,
  kAdamM = 2,
  kAdamV = 3,
};

inline void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}
template <typename V>
void put_pod(std::string& buf, V v) {
  put_bytes(buf, &v, sizeof(V));
}
inline void put_str(std::string& buf, const std::string& s) {
  put_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  put_bytes(buf, s.data(), s.size());
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw IoError(std::string("checkpoint: truncated while reading ") +
                    what);
    }
  }
  template <typename V>
  V pod(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, buf.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    need(n, what);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckpt

struct CheckpointInfo {
  FullConfig config;
  std::uint64_t epoch = 0;
  std::uint64_t iteration = 0;
  long long adam_step = 0;
  std::string rng_state;
  int dtype_size = 4;
};

template <typename T>
void save_checkpoint(const std::string& path, const FullConfig& cfg,
                     const ParamStore<T>& params,
                     const AdamOptimizer<T>* opt, std::uint64_t epoch,
                     std::uint64_t iteration, const std::string& rng_state) {
  std::string buf;
  ckpt::put_bytes(buf, ckpt::kMagic, sizeof(ckpt::kMagic));
  ckpt::put_pod<std::uint32_t>(buf, ckpt::kVersion);
  ckpt::put_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(sizeof(T)));
  ckpt::put_str(buf, serialize_config(cfg));
  ckpt::put_pod<std::uint64_t>(buf, epoch);
  ckpt::put_pod<std::uint64_t>(buf, iteration);
  ckpt::put_pod<std::int64_t>(buf, opt ? opt->step_count() : 0);
  ckpt::put_str(buf, rng_state);

  std::uint64_t entries = params.params().size() + params.buffers().size();
  if (opt) entries += 2 * params.params().size();
  ckpt::put_pod<std::uint64_t>(buf, entries);

  const auto put_array = [&buf](std::uint8_t kind, const std::string& name,
                                const Shape& shape,
                                const std::vector<T>& data) {
    ckpt::put_pod<std::uint8_t>(buf, kind);
    ckpt::put_str(buf, name);
    for (int d = 0; d < 4; ++d) ckpt::put_pod<std::int64_t>(buf, shape[d]);
    ckpt::put_bytes(buf, data.data(), data.size() * sizeof(T));
  };
  for (const auto& [name, t] : params.params()) {
    put_array(ckpt::kParam, name, t.shape(), t.values());
  }
  for (const auto& [name, t] : params.buffers()) {
    put_array(ckpt::kBuffer, name, t.shape(), t.values());
  }
  if (opt) {
    for (size_t i = 0; i < params.params().size(); ++i) {
      const auto& [name, t] = params.params()[i];
      put_array(ckpt::kAdamM, name, t.shape(), opt->moments_m()[i]);
      put_array(ckpt::kAdamV, name, t.shape(), opt->moments_v()[i]);
    }
  }

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size())));
  ckpt::put_pod<std::uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

namespace ckpt {

inline std::string read_verified(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4) {
    throw IoError("checkpoint: '" + path + "' is too short");
  }
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  const auto computed = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size() - 4)));
  if (stored != computed) {
    throw IoError("checkpoint: checksum mismatch in '" + path +
                  "' (file corrupted or truncated)");
  }
  buf.resize(buf.size() - 4);
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: '" + path + "' has wrong magic");
  }
  return buf;
}

inline CheckpointInfo parse_info(Reader& r) {
  r.pos = sizeof(kMagic);
  CheckpointInfo info;
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kVersion) {
    throw ContractError("checkpoint: format version " +
                        std::to_string(version) + " unsupported (expected " +
                        std::to_string(kVersion) + ")");
  }
  info.dtype_size = static_cast<int>(r.pod<std::uint32_t>("dtype"));
  info.config = parse_config_text(r.str("config"));
  info.epoch = r.pod<std::uint64_t>("epoch");
  info.iteration = r.pod<std::uint64_t>("iteration");
  info.adam_step = r.pod<std::int64_t>("adam_step");
  info.rng_state = r.str("rng_state");
  return info;
}

}  // namespace ckpt

// Config and counters only; callers use this to build the model before
// loading arrays.
inline CheckpointInfo read_checkpoint_info(const std::string& path) {
  const std::string buf = ckpt::read_verified(path);
  ckpt::Reader r{buf};
  return ckpt::parse_info(r);
}

// Loads parameter/buffer arrays (and optimizer moments when `opt` is given)
// into an already-built model. Name or shape disagreements are reported per
// field.
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, ParamStore<T>& params,
                               AdamOptimizer<T>* opt = nullptr) {
  const std::string buf = ckpt::read_verified(path);
  ckpt::Reader r{buf};
  CheckpointInfo info = ckpt::parse_info(r);
  if (info.dtype_size != static_cast<int>(sizeof(T))) {
    throw ContractError(
        "checkpoint: dtype width " + std::to_string(info.dtype_size) +
        " does not match model precision " + std::to_string(sizeof(T)));
  }
  const auto entries = r.pod<std::uint64_t>("entry count");

  auto find_param = [&](const std::string& name) -> int {
    for (size_t i = 0; i < params.params().size(); ++i) {
      if (params.params()[i].first == name) return static_cast<int>(i);
    }
    return -1;
  };
  auto find_buffer = [&](const std::string& name) -> int {
    for (size_t i = 0; i < params.buffers().size(); ++i) {
      if (params.buffers()[i].first == name) return static_cast<int>(i);
    }
    return -1;
  };

  std::vector<bool> seen_param(params.params().size(), false);
  for (std::uint64_t e = 0; e < entries; ++e) {
    const auto kind = r.pod<std::uint8_t>("entry kind");
    const std::string name = r.str("entry name");
    Shape shape;
    shape.n = r.pod<std::int64_t>("shape");
    shape.c = r.pod<std::int64_t>("shape");
    shape.h = r.pod<std::int64_t>("shape");
    shape.w = r.pod<std::int64_t>("shape");
    const size_t count = static_cast<size_t>(shape.numel());
    r.need(count * sizeof(T), name.c_str());

    Tensor<T> target;
    if (kind == ckpt::kParam || kind == ckpt::kAdamM || kind == ckpt::kAdamV) {
      const int idx = find_param(name);
      if (idx < 0) {
        throw ContractError("checkpoint: parameter '" + name +
                            "' does not exist in this model configuration");
      }
      target = params.params()[static_cast<size_t>(idx)].second;
      if (target.shape() != shape) {
        throw ContractError("checkpoint: parameter '" + name + "' has shape " +
                            shape.str() + " but the model expects " +
                            target.shape().str());
      }
      if (kind == ckpt::kParam) {
        seen_param[static_cast<size_t>(idx)] = true;
        std::memcpy(target.values_mut().data(), buf.data() + r.pos,
                    count * sizeof(T));
      } else if (opt) {
        auto& mm = (kind == ckpt::kAdamM)
                       ? opt->moments_m()[static_cast<size_t>(idx)]
                       : opt->moments_v()[static_cast<size_t>(idx)];
        mm.resize(count);
        std::memcpy(mm.data(), buf.data() + r.pos, count * sizeof(T));
      }
    } else if (kind == ckpt::kBuffer) {
      const int idx = find_buffer(name);
      if (idx < 0) {
        throw ContractError("checkpoint: buffer '" + name +
                            "' does not exist in this model configuration");
      }
      target = params.buffers()[static_cast<size_t>(idx)].second;
      if (target.shape() != shape) {
        throw ContractError("checkpoint: buffer '" + name + "' has shape " +
                            shape.str() + " but the model expects " +
                            target.shape().str());
      }
      std::memcpy(target.values_mut().data(), buf.data() + r.pos,
                  count * sizeof(T));
    } else {
      throw ContractError("checkpoint: unknown entry kind " +
                          std::to_string(static_cast<int>(kind)));
    }
    r.pos += count * sizeof(T);
  }
  for (size_t i = 0; i < seen_param.size(); ++i) {
    if (!seen_param[i]) {
      throw ContractError("checkpoint: parameter '" +
                          params.params()[i].first +
                          "' missing from checkpoint");
    }
  }
  if (opt) opt->set_step_count(info.adam_step);
  return info;
}

}  // namespace cebsnet
