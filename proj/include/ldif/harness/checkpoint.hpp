#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "ldif/diffusion/ema.hpp"
#include "ldif/errors.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/numerics/autograd.hpp"

namespace ldif {

// Layout (all integers little-endian):
//   "LDIF" | u32 version | u32 len + config text | u64 iteration | u32 set count
//   per set:    u32 len + set name ("raw" or "ema") | u32 tensor count
//   per tensor: u32 len + UTF-8 name | u8 dtype (0 f64, 1 f32) | u32 rank | u64 dims[rank] | payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>);
  return std::is_same_v<T, double> ? DType::F64 : DType::F32;
}

inline std::size_t dtype_size(DType d) { return d == DType::F64 ? 8 : 4; }

struct TensorBlob {
  std::string name;
  DType dtype = DType::F64;
  Shape shape;
  std::string payload;  // little-endian element bytes
};

struct ParamSet {
  std::string name;
  std::vector<TensorBlob> tensors;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t iteration = 0;
  std::vector<ParamSet> sets;

  const ParamSet* find(const std::string& set) const {
    for (const auto& s : sets) {
      if (s.name == set) return &s;
    }
    return nullptr;
  }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_str(std::string& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

template <class T>
void put_values(std::string& out, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  for (T v : t.data()) put_le<Bits>(out, std::bit_cast<Bits>(v));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string str() { return bytes(le<std::uint32_t>()); }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

template <class T>
void put_set(std::string& out, const std::string& name, const std::vector<Var<T>>& params,
             const std::vector<Tensor<T>>* values) {
  put_str(out, name);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& v = values ? (*values)[i] : params[i]->value;
    put_str(out, params[i]->name);
    out.push_back(static_cast<char>(dtype_of<T>()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rank()));
    for (std::size_t d : v.shape()) put_le<std::uint64_t>(out, d);
    put_values(out, v);
  }
}

}  // namespace detail

template <class T>
std::string encode_checkpoint(const std::string& config_text, std::uint64_t iteration, const ParamStore<T>& store,
                              const Ema<T>* ema = nullptr) {
  std::string out = "LDIF";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_str(out, config_text);
  detail::put_le<std::uint64_t>(out, iteration);
  detail::put_le<std::uint32_t>(out, ema ? 2 : 1);
  detail::put_set(out, "raw", store.params(), static_cast<const std::vector<Tensor<T>>*>(nullptr));
  if (ema) detail::put_set(out, "ema", store.params(), &ema->values());
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != "LDIF") throw DataError("not a checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = r.str();
  ck.iteration = r.le<std::uint64_t>();
  const auto nsets = r.le<std::uint32_t>();
  for (std::uint32_t s = 0; s < nsets; ++s) {
    ParamSet set;
    set.name = r.str();
    const auto n = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      TensorBlob t;
      t.name = r.str();
      const auto tag = r.le<std::uint8_t>();
      if (tag > 1) throw DataError("checkpoint tensor " + t.name + " has unknown dtype tag " + std::to_string(tag));
      t.dtype = static_cast<DType>(tag);
      const auto rank = r.le<std::uint32_t>();
      if (rank > 8) throw DataError("checkpoint tensor " + t.name + " has implausible rank");
      std::size_t count = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        const auto e = r.le<std::uint64_t>();
        if (e == 0 || e > (std::uint64_t{1} << 32)) throw DataError("checkpoint tensor " + t.name + " has bad extent");
        t.shape.push_back(static_cast<std::size_t>(e));
        count *= static_cast<std::size_t>(e);
      }
      t.payload = r.bytes(count * dtype_size(t.dtype));
      set.tensors.push_back(std::move(t));
    }
    ck.sets.push_back(std::move(set));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

template <class T>
Tensor<T> blob_tensor(const TensorBlob& b) {
  Tensor<T> t(b.shape);
  const std::size_t w = dtype_size(b.dtype);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < w; ++k) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b.payload[i * w + k])) << (8 * k);
    t[i] = b.dtype == DType::F64 ? static_cast<T>(std::bit_cast<double>(bits))
                                 : static_cast<T>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
  }
  return t;
}

// Decodes a parameter set in store order. Names and shapes must match the
// store exactly.
template <class T>
std::vector<Tensor<T>> set_values(const ParamSet& set, const ParamStore<T>& store) {
  if (set.tensors.size() != store.params().size()) {
    throw DataError("checkpoint set '" + set.name + "' has " + std::to_string(set.tensors.size()) +
                    " tensors, model has " + std::to_string(store.params().size()));
  }
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < set.tensors.size(); ++i) {
    const auto& b = set.tensors[i];
    const auto& p = store.params()[i];
    if (b.name != p->name) throw DataError("checkpoint tensor '" + b.name + "' where model expects '" + p->name + "'");
    if (b.shape != p->value.shape()) {
      throw DataError("checkpoint tensor " + b.name + " has shape " + shape_str(b.shape) + ", model expects " +
                      shape_str(p->value.shape()));
    }
    out.push_back(blob_tensor<T>(b));
  }
  return out;
}

template <class T>
void load_set(const Checkpoint& ck, const std::string& set, ParamStore<T>& store) {
  const ParamSet* s = ck.find(set);
  if (!s) throw DataError("checkpoint has no '" + set + "' parameter set");
  auto values = set_values(*s, store);
  for (std::size_t i = 0; i < values.size(); ++i) store.params()[i]->value = std::move(values[i]);
}

template <class T>
void save_checkpoint(const fs::path& path, const std::string& config_text, std::uint64_t iteration,
                     const ParamStore<T>& store, const Ema<T>* ema = nullptr) {
  write_file_atomic(path, encode_checkpoint(config_text, iteration, store, ema));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace ldif
