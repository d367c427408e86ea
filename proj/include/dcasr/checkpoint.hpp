#pragma once

// Single-file checkpoint container.
//
//   "DCKP" | u32 version | u64 epoch | u32 config length | config bytes
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims[rank], u64 byte offset into the data section
//   data section: f64 values, little-endian, in table order
//
// Writing is a pure function of the contents, so save -> load -> save
// reproduces the same bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcasr/layers.hpp"
#include "dcasr/optim.hpp"

namespace dcasr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::uint64_t epoch = 0;
  std::string config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "DCKP";
  detail::put<std::uint32_t>(out, ckpt.version);
  detail::put<std::uint64_t>(out, ckpt.epoch);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config.size()));
  out += ckpt.config;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(out, d);
    detail::put<std::uint64_t>(out, offset);
    offset += t.numel() * sizeof(double);
  }
  for (const auto& [name, t] : ckpt.tensors) {
    out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.get_string(4) != "DCKP") throw std::runtime_error("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != Checkpoint::kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ckpt.version));
  }
  ckpt.epoch = r.get<std::uint64_t>();
  ckpt.config = r.get_string(r.get<std::uint32_t>());
  const std::uint32_t n = r.get<std::uint32_t>();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> toc;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < n; ++i) {
    Entry e;
    e.name = r.get_string(r.get<std::uint32_t>());
    if (!names.insert(e.name).second) throw std::runtime_error("checkpoint: duplicate tensor " + e.name);
    const std::uint32_t rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>());
    e.offset = r.get<std::uint64_t>();
    toc.push_back(std::move(e));
  }
  const std::size_t data_start = r.pos();
  std::size_t expected_end = data_start;
  for (auto& e : toc) {
    Tensor t(e.shape);
    const std::size_t nbytes = t.numel() * sizeof(double);
    const std::size_t begin = data_start + e.offset;
    if (begin + nbytes > bytes.size()) throw std::runtime_error("checkpoint: tensor " + e.name + " truncated");
    std::memcpy(t.data(), bytes.data() + begin, nbytes);
    expected_end = std::max(expected_end, begin + nbytes);
    ckpt.tensors.emplace_back(e.name, std::move(t));
  }
  if (expected_end != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

// FNV-1a over the serialized bytes.
inline std::uint64_t checkpoint_hash(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline constexpr const char* kGradAccumPrefix = "opt.mean_sq_grad/";
inline constexpr const char* kDeltaAccumPrefix = "opt.mean_sq_delta/";

inline Checkpoint capture_checkpoint(const ParamSet& params, const AdaDelta* opt,
                                     const std::string& config, std::uint64_t epoch) {
  Checkpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.config = config;
  for (const auto& [name, v] : params.items()) ckpt.tensors.emplace_back(name, v.value());
  if (opt) {
    const auto& items = params.items();
    for (std::size_t k = 0; k < items.size(); ++k) {
      ckpt.tensors.emplace_back(kGradAccumPrefix + items[k].first, opt->slots()[k].mean_sq_grad);
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
      ckpt.tensors.emplace_back(kDeltaAccumPrefix + items[k].first, opt->slots()[k].mean_sq_delta);
    }
  }
  return ckpt;
}

// Strict load: every parameter must be present with its exact shape.
inline void restore_checkpoint(ParamSet& params, AdaDelta* opt, const Checkpoint& ckpt) {
  const auto& items = params.items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& [name, v] = items[k];
    const Tensor* t = ckpt.find(name);
    if (!t) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (t->shape() != v.shape()) {
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                               shape_string(t->shape()) + ", model expects " +
                               shape_string(v.shape()));
    }
    Var var = v;
    var.mutable_value() = *t;
    if (opt) {
      const Tensor* g = ckpt.find(kGradAccumPrefix + name);
      const Tensor* d = ckpt.find(kDeltaAccumPrefix + name);
      if (g && d) opt->slots()[k] = {*g, *d};
    }
  }
}

struct PartialLoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> initialized;
};

// Bootstrap load: parameters found in the checkpoint are copied, the rest
// keep their fresh initialization. A name match with a different shape is
// an error.
inline PartialLoadReport load_partial(ParamSet& params, const Checkpoint& ckpt) {
  PartialLoadReport report;
  for (const auto& [name, v] : params.items()) {
    const Tensor* t = ckpt.find(name);
    if (!t) {
      report.initialized.push_back(name);
      continue;
    }
    if (t->shape() != v.shape()) {
      throw std::runtime_error("bootstrap: tensor " + name + " has shape " +
                               shape_string(t->shape()) + ", model expects " +
                               shape_string(v.shape()));
    }
    Var var = v;
    var.mutable_value() = *t;
    report.loaded.push_back(name);
  }
  return report;
}

}  // namespace dcasr
