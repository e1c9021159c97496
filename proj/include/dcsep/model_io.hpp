#pragma once

// Binary model file, little-endian:
//
//   0   "DCSEP1\0\0"
//   8   u32 version, u32 reserved
//   16  u32 window_len, hop_len, fft_size, embed_dim, num_layers, units,
//       bidirectional, reserved
//   48  u32 tensor_count, u32 reserved
//   56  tensors: u32 name_len, name bytes zero-padded to a multiple of 8,
//       u32 rank, u32 reserved, rank x u64 dims, row-major f64 payload.
//
// Tensor names: layer{i}.{fwd|bwd}.{input|forget|cell|output}.{W|U|b},
// dense.W, dense.b, feat.mean, feat.std.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/error.hpp"
#include "dcsep/network.hpp"
#include "dcsep/wav.hpp"

namespace dcsep {

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

inline constexpr char kModelMagic[8] = {'D', 'C', 'S', 'E', 'P', '1', 0, 0};

namespace detail {

class ModelWriter {
 public:
  template <typename T>
  void put(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    bytes_.append(raw, sizeof(T));
  }

  void put_raw(const char* p, std::size_t n) { bytes_.append(p, n); }

  void pad8() {
    while (bytes_.size() % 8 != 0) bytes_.push_back('\0');
  }

  template <typename Derived>
  void put_tensor(const std::string& name, const Eigen::DenseBase<Derived>& t, bool is_vector) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    put_raw(name.data(), name.size());
    pad8();
    put<std::uint32_t>(is_vector ? 1 : 2);
    put<std::uint32_t>(0);
    if (is_vector) {
      put<std::uint64_t>(static_cast<std::uint64_t>(t.size()));
    } else {
      put<std::uint64_t>(static_cast<std::uint64_t>(t.rows()));
      put<std::uint64_t>(static_cast<std::uint64_t>(t.cols()));
    }
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) put<double>(t(i, j));
    }
  }

  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ModelReader {
 public:
  explicit ModelReader(std::vector<char> bytes) : b_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n, "tensor name");
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void skip_pad8() {
    while (pos_ % 8 != 0) {
      if (get<char>("padding") != '\0') throw FormatError("non-zero padding byte", pos_ - 1);
    }
  }

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == b_.size(); }
  const char* data() const { return b_.data(); }

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > b_.size()) throw FormatError(std::string("truncated model file while reading ") + what, pos_);
  }

 private:
  std::vector<char> b_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
  std::size_t offset = 0;
};

}  // namespace detail

inline std::string serialize_model(const NetworkParams& p) {
  p.validate();
  detail::ModelWriter w;
  w.put_raw(kModelMagic, 8);
  w.put<std::uint32_t>(p.version);
  w.put<std::uint32_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.framing.window_len));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.framing.hop_len));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.framing.fft_size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.embed_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.num_layers()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.units()));
  w.put<std::uint32_t>(p.bidirectional ? 1 : 0);
  w.put<std::uint32_t>(0);

  std::uint32_t count = 2;
  for_each_trainable(p, [&](const std::string&, const auto&) { ++count; });
  w.put<std::uint32_t>(count);
  w.put<std::uint32_t>(0);
  for_each_trainable(p, [&](const std::string& name, const auto& t) {
    w.put_tensor(name, t, t.cols() == 1 && name.back() == 'b');
  });
  w.put_tensor("feat.mean", p.feat_mean, true);
  w.put_tensor("feat.std", p.feat_std, true);
  return w.bytes();
}

inline NetworkParams deserialize_model(std::vector<char> bytes) {
  detail::ModelReader r(std::move(bytes));
  r.need(8, "magic");
  if (std::memcmp(r.data(), kModelMagic, 8) != 0) {
    std::size_t bad = 0;
    while (bad < 8 && r.data()[bad] == kModelMagic[bad]) ++bad;
    throw FormatError("bad magic, not a DCSEP1 model file", bad);
  }
  for (int i = 0; i < 8; ++i) r.get<char>("magic");
  const std::size_t version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelVersion) throw UnsupportedVersionError(version, kModelVersion, version_at);
  r.get<std::uint32_t>("reserved");

  NetworkShape shape;
  shape.framing.window_len = r.get<std::uint32_t>("window_len");
  shape.framing.hop_len = r.get<std::uint32_t>("hop_len");
  shape.framing.fft_size = r.get<std::uint32_t>("fft_size");
  shape.embed_dim = r.get<std::uint32_t>("embed_dim");
  shape.num_layers = r.get<std::uint32_t>("num_layers");
  shape.units = r.get<std::uint32_t>("units");
  const std::size_t bidir_at = r.pos();
  const auto bidir = r.get<std::uint32_t>("bidirectional");
  if (bidir > 1) throw FormatError("bidirectional flag must be 0 or 1", bidir_at);
  shape.bidirectional = bidir == 1;
  r.get<std::uint32_t>("reserved");

  NetworkParams p;
  try {
    p = zero_network(shape);
  } catch (const Error& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(), 16);
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  r.get<std::uint32_t>("reserved");
  std::map<std::string, detail::RawTensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.pos();
    const auto name_len = r.get<std::uint32_t>("name length");
    if (name_len == 0 || name_len > 256) throw FormatError("implausible tensor name length", at);
    std::string name = r.get_string(name_len);
    r.skip_pad8();
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank != 1 && rank != 2) throw FormatError("tensor " + name + " has unsupported rank", r.pos() - 4);
    r.get<std::uint32_t>("reserved");
    detail::RawTensor t;
    t.offset = at;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.get<std::uint64_t>("dims"));
      n *= t.dims.back();
    }
    r.need(n * sizeof(double), "tensor payload");
    t.values.resize(n);
    for (auto& v : t.values) v = r.get<double>("tensor payload");
    if (!tensors.emplace(name, std::move(t)).second) throw FormatError("duplicate tensor " + name, at);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last tensor", r.pos());

  const auto take = [&](const std::string& name, auto&& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("missing tensor " + name, r.pos());
    const auto& t = it->second;
    const bool is_vector = t.dims.size() == 1;
    const auto rows = static_cast<Eigen::Index>(t.dims[0]);
    const auto cols = is_vector ? Eigen::Index{1} : static_cast<Eigen::Index>(t.dims[1]);
    if (rows != dst.rows() || cols != dst.cols()) {
      throw FormatError("tensor " + name + " has wrong dimensions for the declared config", t.offset);
    }
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) dst(i, j) = t.values[k++];
    }
    tensors.erase(it);
  };
  for_each_trainable(p, [&](const std::string& name, auto& t) { take(name, t); });
  take("feat.mean", p.feat_mean);
  take("feat.std", p.feat_std);
  if (!tensors.empty()) {
    throw FormatError("unexpected tensor " + tensors.begin()->first, tensors.begin()->second.offset);
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("model failed validation: ") + e.what(), r.pos());
  }
  return p;
}

inline void save_model(const NetworkParams& p, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize_model(p));
}

inline NetworkParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(std::move(bytes));
}

}  // namespace dcsep
