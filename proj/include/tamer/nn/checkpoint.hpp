#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tamer/error.hpp"
#include "tamer/nn/gradcheck.hpp"
#include "tamer/nn/tensor.hpp"

namespace tamer::nn {

// Layout (all integers little-endian):
//   magic "TAMRCKPT" | u32 version | u64 metadata length | metadata bytes
//   u32 array count, then per array:
//   u32 name length | name | u32 rank | u64 dims[rank] | f64 payload[numel]
inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'M', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;  // free-form, JSON by convention
  std::vector<NamedTensor> arrays;

  const Tensor* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a.tensor;
    return nullptr;
  }
};

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorKind::SchemaError, "checkpoint truncated");
  }

  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, ckpt.metadata.size());
  out += ckpt.metadata;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensor.rank()));
    for (auto d : a.tensor.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : a.tensor.data()) detail::put_le<double>(out, v);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string bytes) {
  detail::Reader r(std::move(bytes));
  if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    fail(ErrorKind::SchemaError, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) fail(ErrorKind::SchemaError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.metadata = r.bytes(r.get<std::uint64_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor a;
    a.name = r.bytes(r.get<std::uint32_t>());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = r.get<double>();
    a.tensor = Tensor::from(std::move(shape), std::move(data));
    ckpt.arrays.push_back(std::move(a));
  }
  if (!r.done()) fail(ErrorKind::SchemaError, "trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

}  // namespace tamer::nn
