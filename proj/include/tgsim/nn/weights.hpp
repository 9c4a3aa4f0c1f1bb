#pragma once

// Binary weight container.
//
//   "TGSM"            4 bytes magic
//   version           u32
//   array count       u32
//   per array:        u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//                     prod(dims) x f64
//   metadata count    u32
//   per entry:        u32 key length, key, u32 value length, value
//
// All integers and floats are little-endian.

#include "tgsim/nn/layers.hpp"
#include "tgsim/nn/optim.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace tgsim::nn {

inline constexpr char kWeightMagic[4] = {'T', 'G', 'S', 'M'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

class WeightFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WeightFile {
  std::vector<std::pair<std::string, Tensor>> arrays;
  std::map<std::string, std::string> metadata;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
      if (n == name) return &t;
    }
    return nullptr;
  }
  const Tensor& at(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw WeightFormatError("weight file has no array named '" + name + "'");
  }
  void add(std::string name, Tensor t) { arrays.emplace_back(std::move(name), std::move(t)); }
  void add(const ParamList& params, const std::string& prefix = "") {
    for (const auto& p : params) add(prefix + p.name, p.var->value);
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw WeightFormatError("weight file truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_weights(const WeightFile& file) {
  std::string out(kWeightMagic, 4);
  detail::put_le<std::uint32_t>(out, kWeightFormatVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.arrays.size()));
  for (const auto& [name, t] : file.arrays) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, 2);
    detail::put_le<std::uint64_t>(out, t.rows());
    detail::put_le<std::uint64_t>(out, t.cols());
    for (double v : t.data()) detail::put_le<double>(out, v);
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.metadata.size()));
  for (const auto& [k, v] : file.metadata) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(k.size()));
    out += k;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
    out += v;
  }
  return out;
}

inline WeightFile deserialize_weights(const std::string& bytes) {
  detail::Reader in(bytes);
  if (in.get_string(4) != std::string(kWeightMagic, 4)) throw WeightFormatError("bad magic bytes");
  const auto version = in.get<std::uint32_t>();
  if (version != kWeightFormatVersion) {
    throw WeightFormatError("unsupported weight format version " + std::to_string(version));
  }
  WeightFile file;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = in.get_string(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 2) throw WeightFormatError("array '" + name + "' has unsupported rank " + std::to_string(rank));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = in.get<std::uint64_t>();
    if (rank == 1) dims[1] = 1;
    if (rank == 0) dims[0] = 1;
    Tensor t(dims[0], dims[1]);
    for (double& v : t.data()) v = in.get<double>();
    file.arrays.emplace_back(std::move(name), std::move(t));
  }
  const auto meta = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < meta; ++k) {
    std::string key = in.get_string(in.get<std::uint32_t>());
    file.metadata[key] = in.get_string(in.get<std::uint32_t>());
  }
  if (!in.done()) throw WeightFormatError("trailing bytes after weight file");
  return file;
}

inline void save_weights(const std::string& path, const WeightFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_weights(file);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline WeightFile load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

/// Lists every missing array and shape disagreement between `params` (read
/// under `prefix`) and `file`. Empty when compatible.
inline std::vector<std::string> weight_mismatches(const ParamList& params, const WeightFile& file,
                                                  const std::string& prefix = "") {
  std::vector<std::string> diffs;
  for (const auto& p : params) {
    const Tensor* t = file.find(prefix + p.name);
    if (t == nullptr) {
      diffs.push_back(prefix + p.name + ": missing");
    } else if (!t->same_shape(p.var->value)) {
      diffs.push_back(prefix + p.name + ": expected " + p.var->value.shape_string() + ", found " +
                      t->shape_string());
    }
  }
  return diffs;
}

/// Copies arrays into the parameters; throws listing every mismatch.
inline void load_into(const ParamList& params, const WeightFile& file, const std::string& prefix = "") {
  const auto diffs = weight_mismatches(params, file, prefix);
  if (!diffs.empty()) {
    std::ostringstream msg;
    msg << "weight file incompatible with model:";
    for (const auto& d : diffs) msg << "\n  " << d;
    throw WeightFormatError(msg.str());
  }
  for (const auto& p : params) p.var->value = file.at(prefix + p.name);
}

/// Stores Adam moments as `<prefix>m.<name>` / `<prefix>v.<name>` and the
/// step count as metadata `<prefix>step`.
inline void add_adam_state(WeightFile& file, const Adam& adam, const ParamList& params, const std::string& prefix) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    file.add(prefix + "m." + params[k].name, adam.first_moments()[k]);
    file.add(prefix + "v." + params[k].name, adam.second_moments()[k]);
  }
  file.metadata[prefix + "step"] = std::to_string(adam.step_count());
}

inline void load_adam_state(const WeightFile& file, Adam& adam, const ParamList& params, const std::string& prefix) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& m = file.at(prefix + "m." + params[k].name);
    const Tensor& v = file.at(prefix + "v." + params[k].name);
    if (!m.same_shape(params[k].var->value) || !v.same_shape(params[k].var->value)) {
      throw WeightFormatError("optimizer state shape mismatch for " + params[k].name);
    }
    adam.first_moments()[k] = m;
    adam.second_moments()[k] = v;
  }
  const auto it = file.metadata.find(prefix + "step");
  if (it == file.metadata.end()) throw WeightFormatError("missing metadata " + prefix + "step");
  adam.set_step_count(std::stoll(it->second));
}

}  // namespace tgsim::nn
